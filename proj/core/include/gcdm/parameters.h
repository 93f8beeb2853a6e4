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

// Ordered, name-addressable collection of trainable matrices.

#ifndef GCDM_PARAMETERS_H_
#define GCDM_PARAMETERS_H_

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gcdm {

class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  // Registers a new tensor. Paths must be unique. The returned reference
  // stays valid for the lifetime of the set.
  Eigen::MatrixXd& Add(const std::string& path, Eigen::MatrixXd init);

  bool Contains(const std::string& path) const;
  Eigen::MatrixXd& Get(const std::string& path);
  const Eigen::MatrixXd& Get(const std::string& path) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i]->name; }
  Eigen::MatrixXd& at(std::size_t i) { return entries_[i]->value; }
  const Eigen::MatrixXd& at(std::size_t i) const { return entries_[i]->value; }

  std::int64_t NumScalars() const;
  // Same paths and shapes, all zeros.
  ParameterSet ZerosLike() const;
  void SetZero();
  // Throws InvalidArgument unless paths and shapes match `other`.
  void CheckCompatible(const ParameterSet& other) const;
  // Returns the path of the first tensor with a non-finite entry, or "".
  std::string FirstNonFinite() const;

 private:
  struct Entry {
    std::string name;
    Eigen::MatrixXd value;
  };
  std::vector<std::unique_ptr<Entry>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Glorot-uniform initialization for a fan_in x fan_out weight matrix.
Eigen::MatrixXd GlorotUniform(int fan_in, int fan_out, std::mt19937_64& rng);

}  // namespace gcdm

#endif  // GCDM_PARAMETERS_H_
