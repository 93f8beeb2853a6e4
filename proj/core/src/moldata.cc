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

#include "gcdm/moldata.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "gcdm/errors.h"

namespace gcdm::moldata {
namespace {

constexpr std::array<std::string_view, kNumAtomTypes> kSymbols = {"H", "C", "N",
                                                                 "O", "F"};
constexpr std::array<int, kNumAtomTypes> kAtomicNumbers = {1, 6, 7, 8, 9};

std::vector<std::string> SplitWhitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])))
      ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string Where(const std::filesystem::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line) + ": ";
}

double ParseDouble(const std::string& token, const std::filesystem::path& file,
                   std::size_t line) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ParseError(Where(file, line) + "malformed coordinate '" + token + "'");
  }
  return value;
}

int ParseInt(const std::string& token, const std::filesystem::path& file,
             std::size_t line, std::string_view what) {
  int value = 0;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(Where(file, line) + "malformed " + std::string(what) +
                     " '" + token + "'");
  }
  return value;
}

Element ParseElementOrThrow(const std::string& token,
                            const std::filesystem::path& file, std::size_t line,
                            int atom_index) {
  const auto element = ParseElement(token);
  if (!element) {
    throw ParseError(Where(file, line) + "unknown element '" + token +
                     "' at atom " + std::to_string(atom_index) +
                     " (allowed: H, C, N, O, F)");
  }
  return *element;
}

std::vector<std::string> ReadLines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

// Parses the frame starting at lines[start] and returns the line index after
// it. An empty `id` takes the comment line, or "<stem>_<index>" if blank.
std::size_t ReadXyzFrame(const std::vector<std::string>& lines, std::size_t start,
                         const std::filesystem::path& path, std::string id,
                         std::vector<MoleculeGraph>& out) {
  const auto header = SplitWhitespace(lines[start]);
  if (header.empty()) throw ParseError(Where(path, start + 1) + "missing atom count");
  const int count = ParseInt(header[0], path, start + 1, "atom count");
  if (count < 1) throw ParseError(Where(path, start + 1) + "atom count must be >= 1");
  if (lines.size() < start + static_cast<std::size_t>(count) + 2) {
    throw ParseError(Where(path, lines.size()) + "expected " +
                     std::to_string(count) + " atom lines");
  }
  if (id.empty()) {
    id = Trim(lines[start + 1]);
    if (id.empty()) id = path.stem().string() + "_" + std::to_string(out.size());
  }
  std::vector<Element> elements;
  Eigen::MatrixX3d coords(count, 3);
  for (int a = 0; a < count; ++a) {
    const std::size_t n = start + 2 + static_cast<std::size_t>(a);
    const auto tokens = SplitWhitespace(lines[n]);
    if (tokens.size() < 4) {
      throw ParseError(Where(path, n + 1) +
                       "expected 'element x y z' on atom line");
    }
    elements.push_back(ParseElementOrThrow(tokens[0], path, n + 1, a));
    for (int k = 0; k < 3; ++k) {
      coords(a, k) = ParseDouble(tokens[k + 1], path, n + 1);
    }
  }
  out.push_back(MoleculeGraph::FromElements(std::move(id), elements, std::move(coords)));
  return start + 2 + static_cast<std::size_t>(count);
}

MoleculeGraph ReadXyzFile(const std::filesystem::path& path) {
  const auto lines = ReadLines(path);
  if (lines.empty()) throw ParseError(Where(path, 1) + "empty XYZ file");
  std::vector<MoleculeGraph> out;
  ReadXyzFrame(lines, 0, path, path.stem().string(), out);
  return std::move(out.front());
}

// Concatenated frames, as written by WriteXyz.
std::vector<MoleculeGraph> ReadXyzFrames(const std::filesystem::path& path) {
  const auto lines = ReadLines(path);
  std::vector<MoleculeGraph> out;
  std::size_t n = 0;
  while (n < lines.size()) {
    if (Trim(lines[n]).empty()) {
      ++n;
      continue;
    }
    n = ReadXyzFrame(lines, n, path, "", out);
  }
  if (out.empty()) throw ParseError(Where(path, 1) + "empty XYZ file");
  return out;
}

std::vector<MoleculeGraph> ReadXyzDir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ParseError(dir.string() + " is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".xyz") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<MoleculeGraph> out;
  out.reserve(files.size());
  for (const auto& file : files) out.push_back(ReadXyzFile(file));
  return out;
}

std::vector<MoleculeGraph> ReadSdf(const std::filesystem::path& path) {
  const auto lines = ReadLines(path);
  std::vector<MoleculeGraph> out;
  std::size_t i = 0;
  while (i < lines.size()) {
    // Titles may be blank, so only trailing blank lines end the file.
    bool rest_blank = true;
    for (std::size_t r = i; r < lines.size() && rest_blank; ++r) {
      rest_blank = Trim(lines[r]).empty();
    }
    if (rest_blank) break;
    if (i + 3 >= lines.size()) {
      throw ParseError(Where(path, i + 1) + "truncated SDF header");
    }
    std::string id = Trim(lines[i]);
    if (id.empty()) id = "mol" + std::to_string(out.size());
    const std::string& counts = lines[i + 3];
    const std::size_t counts_line = i + 4;
    if (counts.find("V3000") != std::string::npos) {
      throw ParseError(Where(path, counts_line) + "V3000 records unsupported");
    }
    const std::string count_field = Trim(counts.substr(0, 3));
    const int count = ParseInt(count_field, path, counts_line, "atom count");
    if (count < 1) {
      throw ParseError(Where(path, counts_line) + "atom count must be >= 1");
    }
    if (i + 4 + static_cast<std::size_t>(count) > lines.size()) {
      throw ParseError(Where(path, counts_line) + "truncated atom block");
    }
    std::vector<Element> elements;
    Eigen::MatrixX3d coords(count, 3);
    for (int a = 0; a < count; ++a) {
      const std::size_t idx = i + 4 + static_cast<std::size_t>(a);
      const auto tokens = SplitWhitespace(lines[idx]);
      if (tokens.size() < 4) {
        throw ParseError(Where(path, idx + 1) + "malformed SDF atom line");
      }
      for (int k = 0; k < 3; ++k) {
        coords(a, k) = ParseDouble(tokens[k], path, idx + 1);
      }
      elements.push_back(ParseElementOrThrow(tokens[3], path, idx + 1, a));
    }
    i += 4 + static_cast<std::size_t>(count);
    // A missing "$$$$" on the final record is tolerated.
    while (i < lines.size() && Trim(lines[i]) != "$$$$") ++i;
    ++i;
    out.push_back(
        MoleculeGraph::FromElements(std::move(id), elements, std::move(coords)));
  }
  return out;
}

std::vector<MoleculeGraph> ReadInternal(const std::filesystem::path& path) {
  const auto lines = ReadLines(path);
  std::vector<MoleculeGraph> out;
  std::string id;
  std::vector<Element> elements;
  std::vector<std::array<double, 3>> xyz;
  std::vector<int> charges;
  bool any_charge = false;
  bool any_missing_charge = false;
  std::size_t block_line = 0;

  auto flush = [&]() {
    if (elements.empty()) {
      if (!id.empty()) {
        throw ParseError(Where(path, block_line) + "molecule '" + id +
                         "' has no atoms");
      }
      return;
    }
    if (any_charge && any_missing_charge) {
      throw ParseError(Where(path, block_line) +
                       "charge column must be present on all or no atoms");
    }
    Eigen::MatrixX3d coords(static_cast<Eigen::Index>(xyz.size()), 3);
    for (std::size_t a = 0; a < xyz.size(); ++a) {
      for (int k = 0; k < 3; ++k) coords(static_cast<Eigen::Index>(a), k) = xyz[a][k];
    }
    std::optional<Eigen::VectorXi> q;
    if (any_charge) {
      q = Eigen::Map<const Eigen::VectorXi>(charges.data(),
                                            static_cast<Eigen::Index>(charges.size()));
    }
    std::string mol_id =
        id.empty() ? "mol" + std::to_string(out.size()) : std::move(id);
    out.push_back(MoleculeGraph::FromElements(std::move(mol_id), elements,
                                              std::move(coords), q));
    id.clear();
    elements.clear();
    xyz.clear();
    charges.clear();
    any_charge = any_missing_charge = false;
  };

  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::size_t line_no = n + 1;
    const std::string line = Trim(lines[n]);
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') {
      if (!elements.empty()) {
        throw ParseError(Where(path, line_no) +
                         "id line inside a molecule block (missing blank line?)");
      }
      id = Trim(std::string_view(line).substr(1));
      block_line = line_no;
      continue;
    }
    if (elements.empty() && id.empty()) block_line = line_no;
    const auto tokens = SplitWhitespace(line);
    if (tokens.size() != 4 && tokens.size() != 5) {
      throw ParseError(Where(path, line_no) +
                       "expected 'element x y z [charge]'");
    }
    elements.push_back(ParseElementOrThrow(
        tokens[0], path, line_no, static_cast<int>(elements.size())));
    xyz.push_back({ParseDouble(tokens[1], path, line_no),
                   ParseDouble(tokens[2], path, line_no),
                   ParseDouble(tokens[3], path, line_no)});
    if (tokens.size() == 5) {
      charges.push_back(ParseInt(tokens[4], path, line_no, "charge"));
      any_charge = true;
    } else {
      charges.push_back(0);
      any_missing_charge = true;
    }
  }
  flush();
  return out;
}

}  // namespace

std::optional<Element> ParseElement(std::string_view symbol) {
  for (int k = 0; k < kNumAtomTypes; ++k) {
    if (kSymbols[k] == symbol) return static_cast<Element>(k);
  }
  return std::nullopt;
}

std::string_view Symbol(Element element) {
  return kSymbols[static_cast<int>(element)];
}

int AtomicNumber(Element element) {
  return kAtomicNumbers[static_cast<int>(element)];
}

MoleculeGraph::MoleculeGraph(std::string id, Eigen::MatrixX3d coords,
                             Eigen::MatrixXd atom_types,
                             Eigen::VectorXi charges)
    : id_(std::move(id)),
      coords_(std::move(coords)),
      atom_types_(std::move(atom_types)),
      charges_(std::move(charges)) {
  const auto n = coords_.rows();
  if (n < 1) throw InvalidArgument("molecule '" + id_ + "' has no atoms");
  if (atom_types_.rows() != n || charges_.size() != n) {
    throw InvalidArgument("molecule '" + id_ + "': row counts disagree");
  }
  if (atom_types_.cols() != kNumAtomTypes) {
    throw InvalidArgument("molecule '" + id_ + "': atom_types must have " +
                          std::to_string(kNumAtomTypes) + " columns");
  }
  if (!coords_.allFinite()) {
    throw InvalidArgument("molecule '" + id_ + "': non-finite coordinate");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    int ones = 0;
    for (int k = 0; k < kNumAtomTypes; ++k) {
      const double v = atom_types_(i, k);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) {
      throw InvalidArgument("molecule '" + id_ + "': atom " +
                            std::to_string(i) + " is not one-hot");
    }
  }
}

MoleculeGraph MoleculeGraph::FromElements(std::string id,
                                          std::span<const Element> elements,
                                          Eigen::MatrixX3d coords,
                                          std::optional<Eigen::VectorXi> charges) {
  const auto n = static_cast<Eigen::Index>(elements.size());
  Eigen::MatrixXd types = Eigen::MatrixXd::Zero(n, kNumAtomTypes);
  Eigen::VectorXi q(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    types(i, static_cast<int>(elements[static_cast<std::size_t>(i)])) = 1.0;
    q(i) = AtomicNumber(elements[static_cast<std::size_t>(i)]);
  }
  if (charges) q = *charges;
  return MoleculeGraph(std::move(id), std::move(coords), std::move(types),
                       std::move(q));
}

Element MoleculeGraph::element(int atom) const {
  Eigen::Index k = 0;
  atom_types_.row(atom).maxCoeff(&k);
  return static_cast<Element>(k);
}

std::vector<Element> MoleculeGraph::elements() const {
  std::vector<Element> out(static_cast<std::size_t>(num_atoms()));
  for (int i = 0; i < num_atoms(); ++i) out[static_cast<std::size_t>(i)] = element(i);
  return out;
}

std::string DatasetSplit::ManifestText() const {
  std::ostringstream out;
  auto section = [&](std::string_view name, const std::vector<MoleculeGraph>& mols) {
    out << '[' << name << "]\n";
    for (const auto& m : mols) out << m.id() << '\n';
  };
  section("train", train);
  section("val", val);
  section("test", test);
  return out.str();
}

std::optional<DatasetFormat> ParseDatasetFormat(std::string_view name) {
  if (name == "xyz-dir") return DatasetFormat::kXyzDir;
  if (name == "sdf") return DatasetFormat::kSdf;
  if (name == "internal") return DatasetFormat::kInternal;
  return std::nullopt;
}

std::vector<MoleculeGraph> ReadMolecules(const std::filesystem::path& path,
                                         DatasetFormat format) {
  if (!std::filesystem::exists(path)) {
    throw ParseError(path.string() + " does not exist");
  }
  switch (format) {
    case DatasetFormat::kXyzDir:
      if (std::filesystem::is_regular_file(path)) return ReadXyzFrames(path);
      return ReadXyzDir(path);
    case DatasetFormat::kSdf:
      return ReadSdf(path);
    case DatasetFormat::kInternal:
      return ReadInternal(path);
  }
  throw InvalidArgument("unknown dataset format");
}

ManifestIds ParseManifest(const std::filesystem::path& path) {
  const auto lines = ReadLines(path);
  ManifestIds ids;
  std::vector<std::string>* current = nullptr;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string line = Trim(lines[n]);
    if (line.empty()) continue;
    if (line == "[train]") {
      current = &ids.train;
    } else if (line == "[val]") {
      current = &ids.val;
    } else if (line == "[test]") {
      current = &ids.test;
    } else if (current == nullptr) {
      throw ParseError(Where(path, n + 1) + "id before any [split] header");
    } else {
      current->push_back(line);
    }
  }
  return ids;
}

DatasetSplit SplitMolecules(std::vector<MoleculeGraph> molecules,
                            const SplitOptions& options) {
  if (molecules.empty()) throw InvalidArgument("empty dataset");
  {
    std::set<std::string> seen;
    for (const auto& m : molecules) {
      if (!seen.insert(m.id()).second) {
        throw InvalidArgument("duplicate molecule id '" + m.id() + "'");
      }
    }
  }
  DatasetSplit split;
  if (options.manifest) {
    const ManifestIds ids = ParseManifest(*options.manifest);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < molecules.size(); ++i) index[molecules[i].id()] = i;
    std::set<std::string> used;
    auto take = [&](const std::vector<std::string>& names,
                    std::vector<MoleculeGraph>& dst) {
      for (const auto& name : names) {
        if (!used.insert(name).second) {
          throw ParseError(options.manifest->string() + ": id '" + name +
                           "' listed twice");
        }
        const auto it = index.find(name);
        if (it == index.end()) {
          throw ParseError(options.manifest->string() + ": unknown id '" +
                           name + "'");
        }
        dst.push_back(molecules[it->second]);
      }
    };
    take(ids.train, split.train);
    take(ids.val, split.val);
    take(ids.test, split.test);
    return split;
  }

  const std::size_t n = molecules.size();
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  if (options.counts) {
    n_train = (*options.counts)[0];
    n_val = (*options.counts)[1];
    if (n_train + n_val > n) {
      throw InvalidArgument("split counts exceed dataset size " +
                            std::to_string(n));
    }
  } else {
    const auto& p = options.proportions;
    const std::size_t total = p[0] + p[1] + p[2];
    if (total == 0) throw InvalidArgument("split proportions sum to zero");
    n_train = n * p[0] / total;
    n_val = n * p[1] / total;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t r = 0; r < n; ++r) {
    auto& mol = molecules[order[r]];
    if (r < n_train) {
      split.train.push_back(std::move(mol));
    } else if (r < n_train + n_val) {
      split.val.push_back(std::move(mol));
    } else {
      split.test.push_back(std::move(mol));
    }
  }
  return split;
}

DatasetSplit LoadDataset(const std::filesystem::path& path,
                         DatasetFormat format, const SplitOptions& options) {
  auto molecules = ReadMolecules(path, format);
  if (molecules.empty()) throw ParseError(path.string() + ": empty dataset");
  return SplitMolecules(std::move(molecules), options);
}

std::string FormatInternal(std::span<const MoleculeGraph> molecules) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(6);
  bool first = true;
  for (const auto& mol : molecules) {
    if (!first) out << '\n';
    first = false;
    out << "# " << mol.id() << '\n';
    for (int i = 0; i < mol.num_atoms(); ++i) {
      out << Symbol(mol.element(i)) << ' ' << mol.coords()(i, 0) << ' '
          << mol.coords()(i, 1) << ' ' << mol.coords()(i, 2) << ' '
          << mol.charges()(i) << '\n';
    }
  }
  return out.str();
}

void WriteInternal(const std::filesystem::path& path,
                   std::span<const MoleculeGraph> molecules) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << FormatInternal(molecules);
}

void WriteXyz(const std::filesystem::path& path,
              std::span<const MoleculeGraph> molecules) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& mol : molecules) {
    out << mol.num_atoms() << '\n' << mol.id() << '\n';
    for (int i = 0; i < mol.num_atoms(); ++i) {
      out << Symbol(mol.element(i)) << ' ' << mol.coords()(i, 0) << ' '
          << mol.coords()(i, 1) << ' ' << mol.coords()(i, 2) << '\n';
    }
  }
}

SizeDistribution ComputeSizeDistribution(
    std::span<const MoleculeGraph> molecules) {
  if (molecules.empty()) {
    throw InvalidArgument("size distribution of an empty molecule list");
  }
  SizeDistribution dist;
  for (const auto& m : molecules) ++dist.counts[m.num_atoms()];
  const double total = static_cast<double>(molecules.size());
  for (const auto& [n, c] : dist.counts) {
    dist.probs[n] = static_cast<double>(c) / total;
  }
  return dist;
}

void FeatureScaler::Validate() const {
  if (!(categorical_scale > 0.0) || !std::isfinite(categorical_scale) ||
      !(integer_scale > 0.0) || !std::isfinite(integer_scale)) {
    throw InvalidArgument("feature scales must be positive and finite");
  }
}

Eigen::MatrixXd EncodeFeatures(const MoleculeGraph& mol,
                               const FeatureScaler& scaler) {
  scaler.Validate();
  Eigen::MatrixXd out(mol.num_atoms(), kFeatureDim);
  out.leftCols(kNumAtomTypes) = mol.atom_types() * scaler.categorical_scale;
  out.col(kNumAtomTypes) = mol.charges().cast<double>() * scaler.integer_scale;
  return out;
}

Eigen::MatrixXd DecodedFeatures::OneHot() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(types.size()), kNumAtomTypes);
  for (std::size_t i = 0; i < types.size(); ++i) {
    out(static_cast<Eigen::Index>(i), static_cast<int>(types[i])) = 1.0;
  }
  return out;
}

DecodedFeatures DecodeFeatures(const Eigen::MatrixXd& features,
                               const FeatureScaler& scaler) {
  scaler.Validate();
  if (features.cols() != kFeatureDim) {
    throw InvalidArgument("features must have " + std::to_string(kFeatureDim) +
                          " columns");
  }
  DecodedFeatures out;
  const auto n = features.rows();
  out.types.resize(static_cast<std::size_t>(n));
  out.tied.resize(static_cast<std::size_t>(n));
  out.charges.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_value = features(i, 0) / scaler.categorical_scale;
    bool tie = false;
    for (int k = 1; k < kNumAtomTypes; ++k) {
      const double v = features(i, k) / scaler.categorical_scale;
      if (v > best_value) {
        best = k;
        best_value = v;
        tie = false;
      } else if (v == best_value) {
        tie = true;
      }
    }
    out.types[static_cast<std::size_t>(i)] = static_cast<Element>(best);
    out.tied[static_cast<std::size_t>(i)] = tie;
    out.charges(i) = static_cast<int>(
        std::lround(features(i, kNumAtomTypes) / scaler.integer_scale));
  }
  return out;
}

}  // namespace gcdm::moldata
