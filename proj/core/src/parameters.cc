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

#include "gcdm/parameters.h"

#include <cmath>

#include "gcdm/errors.h"

namespace gcdm {

ParameterSet::ParameterSet(const ParameterSet& other) { *this = other; }

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this == &other) return *this;
  entries_.clear();
  index_.clear();
  for (const auto& e : other.entries_) Add(e->name, e->value);
  return *this;
}

Eigen::MatrixXd& ParameterSet::Add(const std::string& path,
                                   Eigen::MatrixXd init) {
  if (index_.count(path) != 0) {
    throw InvalidArgument("duplicate parameter path: " + path);
  }
  index_[path] = entries_.size();
  entries_.push_back(std::make_unique<Entry>(Entry{path, std::move(init)}));
  return entries_.back()->value;
}

bool ParameterSet::Contains(const std::string& path) const {
  return index_.count(path) != 0;
}

Eigen::MatrixXd& ParameterSet::Get(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw InvalidArgument("unknown parameter: " + path);
  return entries_[it->second]->value;
}

const Eigen::MatrixXd& ParameterSet::Get(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw InvalidArgument("unknown parameter: " + path);
  return entries_[it->second]->value;
}

std::int64_t ParameterSet::NumScalars() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e->value.size();
  return n;
}

ParameterSet ParameterSet::ZerosLike() const {
  ParameterSet out;
  for (const auto& e : entries_) {
    out.Add(e->name, Eigen::MatrixXd::Zero(e->value.rows(), e->value.cols()));
  }
  return out;
}

void ParameterSet::SetZero() {
  for (auto& e : entries_) e->value.setZero();
}

void ParameterSet::CheckCompatible(const ParameterSet& other) const {
  if (size() != other.size()) {
    throw InvalidArgument("parameter sets differ in tensor count: " +
                          std::to_string(size()) + " vs " +
                          std::to_string(other.size()));
  }
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = *entries_[i];
    const auto& b = *other.entries_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols()) {
      throw InvalidArgument("parameter mismatch at " + a.name + " (" +
                            std::to_string(a.value.rows()) + "x" +
                            std::to_string(a.value.cols()) + ") vs " + b.name +
                            " (" + std::to_string(b.value.rows()) + "x" +
                            std::to_string(b.value.cols()) + ")");
    }
  }
}

std::string ParameterSet::FirstNonFinite() const {
  for (const auto& e : entries_) {
    if (!e->value.allFinite()) return e->name;
  }
  return "";
}

Eigen::MatrixXd GlorotUniform(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Eigen::MatrixXd w(fan_in, fan_out);
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
  }
  return w;
}

}  // namespace gcdm
