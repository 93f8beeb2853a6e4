/*
 * Copyright 2026 The GCDM-CPP Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gcdm/diffusion.h"
#include "gcdm/errors.h"

namespace gcdm::diffusion {
namespace {

// Clips every step ratio α²_t / α²_{t−1} from below and rebuilds the table.
std::vector<double> ClipSteps(const std::vector<double>& alpha2) {
  std::vector<double> out(alpha2.size());
  double prev_raw = 1.0;
  double acc = 1.0;
  for (std::size_t t = 0; t < alpha2.size(); ++t) {
    double step = prev_raw > 0.0 ? alpha2[t] / prev_raw : 0.0;
    step = std::clamp(step, kStepClip, 1.0);
    acc *= step;
    out[t] = acc;
    prev_raw = alpha2[t];
  }
  return out;
}

}  // namespace

std::optional<ScheduleKind> ParseScheduleKind(std::string_view name) {
  if (name == "polynomial") return ScheduleKind::kPolynomial;
  if (name == "cosine") return ScheduleKind::kCosine;
  return std::nullopt;
}

std::string_view ScheduleKindName(ScheduleKind kind) {
  return kind == ScheduleKind::kCosine ? "cosine" : "polynomial";
}

NoiseSchedule::NoiseSchedule(std::vector<double> alpha2)
    : alpha2_(std::move(alpha2)) {}

NoiseSchedule NoiseSchedule::Build(int T, ScheduleKind kind, double precision) {
  if (T < 2) throw InvalidArgument("schedule needs T >= 2");
  if (!(precision > 0.0 && precision < 0.5)) {
    throw InvalidArgument("schedule precision must lie in (0, 0.5)");
  }
  std::vector<double> raw(static_cast<std::size_t>(T) + 1);
  constexpr double kCosineOffset = 0.008;
  const double f0 = std::pow(
      std::cos(kCosineOffset / (1.0 + kCosineOffset) * std::numbers::pi / 2.0), 2);
  for (int t = 0; t <= T; ++t) {
    const double u = static_cast<double>(t) / T;
    double a2;
    if (kind == ScheduleKind::kPolynomial) {
      a2 = std::pow(1.0 - u * u, 2);
    } else {
      a2 = std::pow(std::cos((u + kCosineOffset) / (1.0 + kCosineOffset) *
                             std::numbers::pi / 2.0),
                    2) /
           f0;
    }
    raw[static_cast<std::size_t>(t)] = std::clamp(a2, 0.0, 1.0);
  }
  std::vector<double> alpha2 = ClipSteps(raw);
  for (double& a2 : alpha2) a2 = (1.0 - 2.0 * precision) * a2 + precision;

  NoiseSchedule s(std::move(alpha2));
  s.kind_ = kind;
  s.precision_ = precision;
  if (s.alpha(0) < 1.0 - 1e-4) {
    throw NumericalError("schedule violates alpha_0 >= 1 - 1e-4");
  }
  if (s.alpha(T) > 1e-3) {
    throw NumericalError("schedule violates alpha_T <= 1e-3 (alpha_T = " +
                         std::to_string(s.alpha(T)) + "); increase T or lower precision");
  }
  for (int t = 1; t <= T; ++t) {
    if (!(s.alpha2(t) < s.alpha2(t - 1)) || !(s.snr(t) < s.snr(t - 1))) {
      throw NumericalError("schedule is not strictly decreasing at t = " +
                           std::to_string(t));
    }
  }
  return s;
}

NoiseSchedule NoiseSchedule::FromAlpha2(std::vector<double> alpha2) {
  if (alpha2.size() < 3) throw InvalidArgument("schedule needs T >= 2");
  for (std::size_t t = 0; t < alpha2.size(); ++t) {
    if (!(alpha2[t] >= 0.0 && alpha2[t] <= 1.0)) {
      throw InvalidArgument("alpha^2 outside [0, 1] at t = " + std::to_string(t));
    }
    if (t > 0 && !(alpha2[t] < alpha2[t - 1])) {
      throw InvalidArgument("alpha^2 not strictly decreasing at t = " +
                            std::to_string(t));
    }
  }
  return NoiseSchedule(std::move(alpha2));
}

double NoiseSchedule::alpha(int t) const { return std::sqrt(alpha2(t)); }
double NoiseSchedule::sigma(int t) const { return std::sqrt(sigma2(t)); }

double NoiseSchedule::alpha_ts(int t, int s) const {
  if (!(s < t)) throw InvalidArgument("transition requires s < t");
  return std::sqrt(alpha2(t) / alpha2(s));
}

double NoiseSchedule::sigma2_ts(int t, int s) const {
  if (!(s < t)) throw InvalidArgument("transition requires s < t");
  return 1.0 - alpha2(t) / alpha2(s);
}

}  // namespace gcdm::diffusion
