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

// Molecular data model, dataset ingestion, splitting, size statistics and
// node feature encoding.

#ifndef GCDM_MOLDATA_H_
#define GCDM_MOLDATA_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace gcdm::moldata {

inline constexpr int kNumAtomTypes = 5;
// One-hot block plus one integer charge column.
inline constexpr int kFeatureDim = kNumAtomTypes + 1;

enum class Element : int { kH = 0, kC = 1, kN = 2, kO = 3, kF = 4 };

std::optional<Element> ParseElement(std::string_view symbol);
std::string_view Symbol(Element element);
int AtomicNumber(Element element);

// Atom coordinates in Angstrom, one-hot atom types over (H, C, N, O, F) and
// integer charges. The constructor enforces all invariants and throws
// InvalidArgument on violation; instances are immutable afterwards.
class MoleculeGraph {
 public:
  MoleculeGraph(std::string id, Eigen::MatrixX3d coords,
                Eigen::MatrixXd atom_types, Eigen::VectorXi charges);

  // Charges default to atomic numbers when not given.
  static MoleculeGraph FromElements(
      std::string id, std::span<const Element> elements,
      Eigen::MatrixX3d coords,
      std::optional<Eigen::VectorXi> charges = std::nullopt);

  int num_atoms() const { return static_cast<int>(coords_.rows()); }
  const std::string& id() const { return id_; }
  const Eigen::MatrixX3d& coords() const { return coords_; }
  const Eigen::MatrixXd& atom_types() const { return atom_types_; }
  const Eigen::VectorXi& charges() const { return charges_; }

  Element element(int atom) const;
  std::vector<Element> elements() const;

 private:
  std::string id_;
  Eigen::MatrixX3d coords_;
  Eigen::MatrixXd atom_types_;
  Eigen::VectorXi charges_;
};

struct DatasetSplit {
  std::vector<MoleculeGraph> train;
  std::vector<MoleculeGraph> val;
  std::vector<MoleculeGraph> test;

  // Plain-text manifest: "[train]", "[val]", "[test]" headers each followed
  // by one molecule id per line.
  std::string ManifestText() const;
};

enum class DatasetFormat { kXyzDir, kSdf, kInternal };

std::optional<DatasetFormat> ParseDatasetFormat(std::string_view name);

// Reference partition sizes of the QM9 benchmark split (train, val, test).
inline constexpr std::array<std::size_t, 3> kQm9SplitCounts = {100000, 17748,
                                                              13083};

struct SplitOptions {
  // When set, the manifest decides membership and every listed id must exist.
  std::optional<std::filesystem::path> manifest;
  std::uint64_t seed = 0;
  // Explicit (train, val) counts; test takes the remainder.
  std::optional<std::array<std::size_t, 2>> counts;
  // Otherwise sizes follow these proportions, rounded down for train and val.
  std::array<std::size_t, 3> proportions = kQm9SplitCounts;
};

// Reads every molecule in `path`. xyz-dir: a directory of single-molecule
// XYZ files, read in lexicographic file order, id = file stem; a single file
// is read as concatenated frames with id = comment line. sdf: V2000
// records, id = title line or "mol<index>". internal: see docs/formats.md.
std::vector<MoleculeGraph> ReadMolecules(const std::filesystem::path& path,
                                         DatasetFormat format);

DatasetSplit SplitMolecules(std::vector<MoleculeGraph> molecules,
                            const SplitOptions& options);

// ReadMolecules followed by SplitMolecules. Throws on an empty dataset.
DatasetSplit LoadDataset(const std::filesystem::path& path,
                         DatasetFormat format, const SplitOptions& options);

struct ManifestIds {
  std::vector<std::string> train, val, test;
};
ManifestIds ParseManifest(const std::filesystem::path& path);

void WriteInternal(const std::filesystem::path& path,
                   std::span<const MoleculeGraph> molecules);
std::string FormatInternal(std::span<const MoleculeGraph> molecules);
// Concatenated multi-frame XYZ, one frame per molecule.
void WriteXyz(const std::filesystem::path& path,
              std::span<const MoleculeGraph> molecules);

struct SizeDistribution {
  std::map<int, double> probs;
  std::map<int, std::size_t> counts;

  int max_size() const { return probs.rbegin()->first; }
};

SizeDistribution ComputeSizeDistribution(
    std::span<const MoleculeGraph> molecules);

struct FeatureScaler {
  double categorical_scale = 0.25;
  double integer_scale = 0.1;

  // Throws InvalidArgument unless both scales are positive and finite.
  void Validate() const;
};

// N x (K+1): [one-hot * categorical_scale, charge * integer_scale].
Eigen::MatrixXd EncodeFeatures(const MoleculeGraph& mol,
                               const FeatureScaler& scaler);

struct DecodedFeatures {
  std::vector<Element> types;
  Eigen::VectorXi charges;
  // True where the categorical argmax was an exact tie, resolved to the
  // lowest category index.
  std::vector<bool> tied;

  Eigen::MatrixXd OneHot() const;
};

DecodedFeatures DecodeFeatures(const Eigen::MatrixXd& features,
                               const FeatureScaler& scaler);

}  // namespace gcdm::moldata

#endif  // GCDM_MOLDATA_H_
