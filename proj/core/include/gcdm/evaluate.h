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

// Distance-based bond inference and the sample quality metrics.

#ifndef GCDM_EVALUATE_H_
#define GCDM_EVALUATE_H_

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gcdm/moldata.h"

namespace gcdm::evaluate {

using moldata::Element;
using moldata::MoleculeGraph;

// Directory holding bond_lengths.tsv and valences.tsv. The GCDM_DATA_DIR
// environment variable takes precedence over the build-time location.
std::filesystem::path DefaultDataDir();

class BondTable {
 public:
  static BondTable Load(const std::filesystem::path& path);
  static BondTable Parse(const std::string& text, const std::string& source);
  static BondTable LoadDefault();

  // Typical length in Å for `order` in 1..3, or nullopt if not tabulated.
  std::optional<double> length(Element a, Element b, int order) const;
  double margin(int order) const { return margins_.at(order - 1); }
  bool Covers(Element a, Element b) const;
  // Highest order whose window contains `distance`, descending from single
  // bonds; 0 when even the single-bond window misses.
  int Order(Element a, Element b, double distance) const;

 private:
  static int Key(Element a, Element b);
  std::map<int, std::array<double, 3>> lengths_;  // 0 marks "absent"
  std::array<double, 3> margins_ = {0.0, 0.0, 0.0};
};

class ValenceTable {
 public:
  static ValenceTable Load(const std::filesystem::path& path);
  static ValenceTable Parse(const std::string& text, const std::string& source);
  static ValenceTable LoadDefault();

  const std::vector<int>& allowed(Element e) const;
  int max_valence(Element e) const;
  bool IsAllowed(Element e, int valence) const;

 private:
  std::map<Element, std::vector<int>> allowed_;
};

// Symmetric N x N matrix of bond orders in {0, 1, 2, 3} with zero diagonal.
Eigen::MatrixXi InferBonds(const MoleculeGraph& mol, const BondTable& table);

double AtomStability(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds,
                     const ValenceTable& valences);
int CountStableAtoms(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds,
                     const ValenceTable& valences);
bool MoleculeStability(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds,
                       const ValenceTable& valences);

// Connected under the inferred bonds, no atom above its maximum valence and
// at least one bond when N > 1.
bool IsValid(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds,
             const ValenceTable& valences);

// Composition, sorted typed bond multiset and a hash of per-element-pair
// distance histograms (0.05 Å bins up to 10 Å, one overflow bin).
std::string CanonicalForm(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds);

struct ValidityResult {
  double validity = 0.0;
  double valid_and_unique = 0.0;
  std::size_t num_valid = 0;
  std::size_t num_unique = 0;
};

ValidityResult ValidityAndUniqueness(std::span<const MoleculeGraph> samples,
                                     const BondTable& table,
                                     const ValenceTable& valences);

struct MetricStat {
  double value = 0.0;   // pooled over all samples
  double stddev = 0.0;  // across batches
  double stderr_ = 0.0;
};

struct GenerationReport {
  MetricStat atom_stability;
  MetricStat mol_stability;
  MetricStat validity;
  MetricStat valid_and_unique;
  std::size_t sample_count = 0;
  int num_batches = 1;
  std::optional<MetricStat> nll_bound;
  std::map<std::string, std::string> provenance;

  std::string ToText() const;
  // One "key=value" line per field.
  std::string ToKeyValue() const;
};

struct EvaluationConfig {
  BondTable bonds;
  ValenceTable valences;
  // Samples are split into this many contiguous batches for the spread
  // statistics.
  int num_batches = 1;
};

GenerationReport EvaluateSamples(std::span<const MoleculeGraph> samples,
                                 const EvaluationConfig& config);

// Mean, sample standard deviation and standard error of `values`.
MetricStat Summarize(double pooled, std::span<const double> values);

}  // namespace gcdm::evaluate

#endif  // GCDM_EVALUATE_H_
