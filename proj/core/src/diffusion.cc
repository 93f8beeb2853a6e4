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

#include "gcdm/diffusion.h"

#include <cmath>
#include <numbers>

#include "gcdm/errors.h"
#include "gcdm/geometry.h"

namespace gcdm::diffusion {
namespace {

void RequireCentered(const Eigen::MatrixX3d& m, const char* what) {
  const double tol = 1e-9 * static_cast<double>(std::max<Eigen::Index>(1, m.rows()));
  const double drift = m.colwise().sum().cwiseAbs().maxCoeff();
  if (!(drift <= tol)) {
    throw InvalidArgument(std::string(what) + " is not centered (|sum| = " +
                          std::to_string(drift) + ")");
  }
}

Eigen::MatrixX3d Center(const Eigen::MatrixX3d& m) {
  return geometry::Centralize(m).centered;
}

void RequireStep(int t, const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.T()) {
    throw InvalidArgument("time step " + std::to_string(t) + " outside [0, " +
                          std::to_string(schedule.T()) + "]");
  }
}

// Upper tail 1 − Φ(x).
double UpperTail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }
double Cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

int ArgmaxRow(const Eigen::MatrixXd& m, Eigen::Index row) {
  Eigen::Index best = 0;
  m.row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

Eigen::MatrixXd StandardNormal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

Noise DrawNoise(int num_atoms, int feature_dim, Rng& rng) {
  Noise n;
  n.eps_x = Center(StandardNormal(num_atoms, 3, rng));
  n.eps_h = StandardNormal(num_atoms, feature_dim, rng);
  return n;
}

LatentState ForwardNoise(const Eigen::MatrixX3d& x, const Eigen::MatrixXd& h,
                         int t, const NoiseSchedule& schedule,
                         const Noise& noise) {
  RequireStep(t, schedule);
  RequireCentered(x, "ForwardNoise: x");
  RequireCentered(noise.eps_x, "ForwardNoise: noise");
  if (noise.eps_x.rows() != x.rows() || noise.eps_h.rows() != h.rows() ||
      noise.eps_h.cols() != h.cols() || h.rows() != x.rows()) {
    throw InvalidArgument("ForwardNoise: shape mismatch");
  }
  const double a = schedule.alpha(t);
  const double s = schedule.sigma(t);
  LatentState z;
  z.z_x = Center(a * x + s * noise.eps_x);
  z.z_h = a * h + s * noise.eps_h;
  z.t = t;
  return z;
}

PosteriorParams ComputePosterior(const Eigen::MatrixX3d& x_hat,
                                 const Eigen::MatrixXd& h_hat,
                                 const LatentState& z_t, int s,
                                 const NoiseSchedule& schedule) {
  const int t = z_t.t;
  RequireStep(t, schedule);
  if (s < 0 || s >= t) {
    throw InvalidArgument("posterior requires 0 <= s < t (s = " +
                          std::to_string(s) + ", t = " + std::to_string(t) + ")");
  }
  const double alpha_ts = schedule.alpha_ts(t, s);
  const double sigma2_ts = schedule.sigma2_ts(t, s);
  const double sigma2_s = schedule.sigma2(s);
  const double sigma2_t = schedule.sigma2(t);
  const double coef_z = alpha_ts * sigma2_s / sigma2_t;
  const double coef_x = schedule.alpha(s) * sigma2_ts / sigma2_t;
  PosteriorParams p;
  p.mu_x = Center(coef_z * z_t.z_x + coef_x * x_hat);
  p.mu_h = coef_z * z_t.z_h + coef_x * h_hat;
  p.sigma = std::sqrt(sigma2_ts) * std::sqrt(sigma2_s) / std::sqrt(sigma2_t);
  return p;
}

CleanEstimate InvertNoise(const LatentState& z_t, const Noise& eps_hat,
                          const NoiseSchedule& schedule) {
  RequireStep(z_t.t, schedule);
  const double a = schedule.alpha(z_t.t);
  if (!(a > 0.0)) throw InvalidArgument("cannot invert noise where alpha_t = 0");
  const double ratio = schedule.sigma(z_t.t) / a;
  return CleanEstimate{z_t.z_x / a - ratio * eps_hat.eps_x,
                       z_t.z_h / a - ratio * eps_hat.eps_h};
}

std::vector<Noise> FunctionDenoiser::Predict(
    std::span<const LatentState> batch) const {
  std::vector<Noise> out;
  out.reserve(batch.size());
  for (const LatentState& z : batch) out.push_back(fn_(z));
  return out;
}

double TermWeight(int t, const NoiseSchedule& schedule, Weighting weighting) {
  if (weighting == Weighting::kUnit) return 1.0;
  if (t < 1 || t > schedule.T()) {
    throw InvalidArgument("true weighting is defined for 1 <= t <= T");
  }
  return schedule.snr(t - 1) / schedule.snr(t) - 1.0;
}

double DiffusionTerm(const Noise& eps, const Noise& eps_hat, int t,
                     const NoiseSchedule& schedule, Weighting weighting) {
  const double sq = (eps.eps_x - eps_hat.eps_x).squaredNorm() +
                    (eps.eps_h - eps_hat.eps_h).squaredNorm();
  return 0.5 * TermWeight(t, schedule, weighting) * sq;
}

std::vector<NoisedExample> DrawTrainingExamples(
    std::span<const moldata::MoleculeGraph> batch, const NoiseSchedule& schedule,
    const moldata::FeatureScaler& scaler, Rng& rng) {
  if (batch.empty()) throw InvalidArgument("empty training batch");
  std::vector<NoisedExample> out;
  out.reserve(batch.size());
  for (const auto& mol : batch) {
    NoisedExample ex;
    ex.id = mol.id();
    ex.x = Center(mol.coords());
    ex.h = moldata::EncodeFeatures(mol, scaler);
    std::uniform_int_distribution<int> pick(0, schedule.T());
    const int t = pick(rng);
    ex.noise = DrawNoise(mol.num_atoms(), static_cast<int>(ex.h.cols()), rng);
    ex.z = ForwardNoise(ex.x, ex.h, t, schedule, ex.noise);
    out.push_back(std::move(ex));
  }
  return out;
}

LossBreakdown BreakdownFromPredictions(std::span<const NoisedExample> examples,
                                       std::span<const Noise> predictions,
                                       const NoiseSchedule& schedule,
                                       const moldata::FeatureScaler& scaler) {
  if (examples.size() != predictions.size() || examples.empty()) {
    throw InvalidArgument("loss needs one prediction per example");
  }
  LossBreakdown loss;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const NoisedExample& ex = examples[i];
    const Noise& pred = predictions[i];
    if (!pred.eps_x.allFinite() || !pred.eps_h.allFinite()) {
      throw NumericalError("non-finite denoiser output for molecule " + ex.id);
    }
    loss.l_t += DiffusionTerm(ex.noise, pred, ex.z.t, schedule, Weighting::kUnit);
    loss.l_base += PriorKl(ex.x, ex.h, schedule);
    if (ex.z.t == 0) {
      loss.l_0_x -= ZerothPositionLogLikelihood(ex.noise.eps_x, pred.eps_x, schedule);
      const Eigen::VectorXi charges =
          (ex.h.col(ex.h.cols() - 1) / scaler.integer_scale)
              .array()
              .round()
              .cast<int>();
      const Eigen::MatrixXd types =
          ex.h.leftCols(ex.h.cols() - 1) / scaler.categorical_scale;
      loss.l_0_h -= ZerothLikelihoodInteger(charges, ex.z.z_h, schedule, scaler).sum() +
                    ZerothLikelihoodCategorical(types, ex.z.z_h, schedule, scaler).sum();
    }
  }
  const double n = static_cast<double>(examples.size());
  loss.l_t /= n;
  loss.l_0_x /= n;
  loss.l_0_h /= n;
  loss.l_base /= n;
  if (!std::isfinite(loss.l_t)) throw NumericalError("non-finite l_t");
  return loss;
}

LossBreakdown TrainingLoss(std::span<const moldata::MoleculeGraph> batch,
                           const NoiseSchedule& schedule,
                           const Denoiser& denoiser,
                           const moldata::FeatureScaler& scaler, Rng& rng) {
  const auto examples = DrawTrainingExamples(batch, schedule, scaler, rng);
  std::vector<LatentState> latents;
  latents.reserve(examples.size());
  for (const auto& ex : examples) latents.push_back(ex.z);
  const auto preds = denoiser.Predict(latents);
  return BreakdownFromPredictions(examples, preds, schedule, scaler);
}

double LogIntegerLikelihood(double h, double z0, double sigma0) {
  const double lo = (h - 0.5 - z0) / sigma0;
  const double hi = (h + 0.5 - z0) / sigma0;
  double p;
  if (lo > 0.0) {
    p = UpperTail(lo) - UpperTail(hi);
  } else if (hi < 0.0) {
    p = Cdf(hi) - Cdf(lo);
  } else {
    p = 1.0 - UpperTail(hi) - Cdf(lo);
  }
  if (!(p > 0.0)) return kLogFloor;
  return std::max(std::log(p), kLogFloor);
}

CategoricalLikelihood CategoricalZerothLikelihood(int true_category,
                                                  const Eigen::VectorXd& z0,
                                                  double sigma0) {
  const Eigen::Index k = z0.size();
  if (true_category < 0 || true_category >= k) {
    throw InvalidArgument("category index out of range");
  }
  Eigen::VectorXd log_w(k);
  for (Eigen::Index c = 0; c < k; ++c) log_w(c) = LogIntegerLikelihood(1.0, z0(c), sigma0);
  CategoricalLikelihood out;
  if (log_w.maxCoeff() <= kLogFloor) {
    out.underflow = true;
    out.probs = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    out.log_prob = -std::log(static_cast<double>(k));
    return out;
  }
  const double m = log_w.maxCoeff();
  const Eigen::VectorXd w = (log_w.array() - m).exp().matrix();
  const double total = w.sum();
  out.probs = w / total;
  out.log_prob = log_w(true_category) - m - std::log(total);
  return out;
}

Eigen::VectorXd ZerothLikelihoodInteger(const Eigen::VectorXi& charges,
                                        const Eigen::MatrixXd& z0_h,
                                        const NoiseSchedule& schedule,
                                        const moldata::FeatureScaler& scaler) {
  const double sigma = schedule.sigma(0) / scaler.integer_scale;
  const Eigen::Index col = z0_h.cols() - 1;
  Eigen::VectorXd out(charges.size());
  for (Eigen::Index i = 0; i < charges.size(); ++i) {
    out(i) = LogIntegerLikelihood(charges(i), z0_h(i, col) / scaler.integer_scale,
                                  sigma);
  }
  return out;
}

Eigen::VectorXd ZerothLikelihoodCategorical(const Eigen::MatrixXd& atom_types,
                                            const Eigen::MatrixXd& z0_h,
                                            const NoiseSchedule& schedule,
                                            const moldata::FeatureScaler& scaler) {
  const double sigma = schedule.sigma(0) / scaler.categorical_scale;
  const Eigen::Index k = atom_types.cols();
  Eigen::VectorXd out(atom_types.rows());
  for (Eigen::Index i = 0; i < atom_types.rows(); ++i) {
    const Eigen::VectorXd z = z0_h.row(i).head(k).transpose() / scaler.categorical_scale;
    out(i) = CategoricalZerothLikelihood(ArgmaxRow(atom_types, i), z, sigma).log_prob;
  }
  return out;
}

double LogPositionNormalizer(int num_atoms, const NoiseSchedule& schedule) {
  const double dof = 3.0 * (num_atoms - 1);
  return dof * std::log(std::sqrt(2.0 * std::numbers::pi) * schedule.sigma(0) /
                        schedule.alpha(0));
}

double ZerothPositionLogLikelihood(const Eigen::MatrixX3d& eps_x,
                                   const Eigen::MatrixX3d& eps0_hat,
                                   const NoiseSchedule& schedule) {
  return -LogPositionNormalizer(static_cast<int>(eps_x.rows()), schedule) -
         0.5 * (eps_x - eps0_hat).squaredNorm();
}

double PriorKl(const Eigen::MatrixX3d& x, const Eigen::MatrixXd& h,
               const NoiseSchedule& schedule) {
  const int T = schedule.T();
  const double a2 = schedule.alpha2(T);
  const double s2 = schedule.sigma2(T);
  const double dims = 3.0 * (x.rows() - 1) + static_cast<double>(h.size());
  return 0.5 * (a2 * (x.squaredNorm() + h.squaredNorm()) +
                dims * (s2 - 1.0 - std::log(s2)));
}

NllEstimate NllBound(const moldata::MoleculeGraph& molecule,
                     const NoiseSchedule& schedule, const Denoiser& denoiser,
                     const moldata::FeatureScaler& scaler, int num_t_samples,
                     Rng& rng) {
  if (num_t_samples < 1) throw InvalidArgument("num_t_samples must be >= 1");
  const Eigen::MatrixX3d x = Center(molecule.coords());
  const Eigen::MatrixXd h = moldata::EncodeFeatures(molecule, scaler);
  const int n = molecule.num_atoms();
  const int f = static_cast<int>(h.cols());
  const int T = schedule.T();
  NllEstimate est;
  est.prior = PriorKl(x, h, schedule);
  std::uniform_int_distribution<int> pick(1, T);
  for (int k = 0; k < num_t_samples; ++k) {
    const int t = pick(rng);
    const Noise eps = DrawNoise(n, f, rng);
    const LatentState z = ForwardNoise(x, h, t, schedule, eps);
    const LatentState zs[] = {z};
    const Noise pred = denoiser.Predict(zs).front();
    est.diffusion += T * DiffusionTerm(eps, pred, t, schedule, Weighting::kTrue);

    const Noise eps0 = DrawNoise(n, f, rng);
    const LatentState z0 = ForwardNoise(x, h, 0, schedule, eps0);
    const LatentState z0s[] = {z0};
    const Noise pred0 = denoiser.Predict(z0s).front();
    est.zeroth -=
        ZerothPositionLogLikelihood(eps0.eps_x, pred0.eps_x, schedule) +
        ZerothLikelihoodInteger(molecule.charges(), z0.z_h, schedule, scaler).sum() +
        ZerothLikelihoodCategorical(molecule.atom_types(), z0.z_h, schedule, scaler)
            .sum();
  }
  est.diffusion /= num_t_samples;
  est.zeroth /= num_t_samples;
  return est;
}

std::vector<moldata::MoleculeGraph> SampleBatch(std::span<const int> sizes,
                                                const NoiseSchedule& schedule,
                                                const Denoiser& denoiser,
                                                Rng& rng,
                                                const SampleOptions& options) {
  const int f = options.feature_dim;
  NoiseSource source = options.noise;
  if (!source) {
    source = [&rng](int, int, int n, int feat) { return DrawNoise(n, feat, rng); };
  }
  const int T = schedule.T();
  std::vector<LatentState> z(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw InvalidArgument("sample size must be >= 1");
    const Noise eps = source(T, static_cast<int>(i), sizes[i], f);
    z[i] = LatentState{Center(eps.eps_x), eps.eps_h, T};
  }
  if (options.observer) options.observer(T, z);

  auto check_finite = [](const LatentState& l, int t) {
    if (!l.z_x.allFinite() || !l.z_h.allFinite()) {
      throw NumericalError("non-finite latent during sampling at t = " +
                           std::to_string(t));
    }
  };
  for (int t = T; t >= 1; --t) {
    const std::vector<Noise> preds = denoiser.Predict(z);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const CleanEstimate clean = InvertNoise(z[i], preds[i], schedule);
      const PosteriorParams post =
          ComputePosterior(clean.x, clean.h, z[i], t - 1, schedule);
      const Noise eps = source(t - 1, static_cast<int>(i), sizes[i], f);
      z[i].z_x = Center(post.mu_x + post.sigma * Center(eps.eps_x));
      z[i].z_h = post.mu_h + post.sigma * eps.eps_h;
      z[i].t = t - 1;
      check_finite(z[i], t - 1);
    }
    if (options.observer) options.observer(t - 1, z);
  }

  const std::vector<Noise> preds = denoiser.Predict(z);
  const double sigma_x = schedule.sigma(0) / schedule.alpha(0);
  std::vector<moldata::MoleculeGraph> out;
  out.reserve(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const CleanEstimate clean = InvertNoise(z[i], preds[i], schedule);
    Eigen::MatrixX3d x = clean.x;
    if (options.final_noise) {
      const Noise eps = source(-1, static_cast<int>(i), sizes[i], f);
      x += sigma_x * Center(eps.eps_x);
    }
    x = Center(x);
    if (!x.allFinite() || !clean.h.allFinite()) {
      throw NumericalError("non-finite sample at t = 0");
    }
    const moldata::DecodedFeatures dec = moldata::DecodeFeatures(clean.h, options.scaler);
    out.emplace_back("sample_" + std::to_string(i), std::move(x), dec.OneHot(),
                     dec.charges);
  }
  return out;
}

moldata::MoleculeGraph Sample(int num_atoms, const NoiseSchedule& schedule,
                              const Denoiser& denoiser, Rng& rng,
                              const SampleOptions& options) {
  const int sizes[] = {num_atoms};
  return SampleBatch(sizes, schedule, denoiser, rng, options).front();
}

int SampleNumAtoms(const moldata::SizeDistribution& dist, Rng& rng) {
  if (dist.probs.empty()) throw InvalidArgument("empty size distribution");
  std::vector<int> sizes;
  std::vector<double> weights;
  for (const auto& [n, p] : dist.probs) {
    sizes.push_back(n);
    weights.push_back(p);
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return sizes[pick(rng)];
}

}  // namespace gcdm::diffusion
