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

#include "gcdm/evaluate.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <queue>
#include <sstream>

#include "gcdm/errors.h"
#include "gcdm/hash.h"

#ifndef GCDM_DATA_DIR
#define GCDM_DATA_DIR "data"
#endif

namespace gcdm::evaluate {
namespace {

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Element ElementOrThrow(const std::string& token, const std::string& where) {
  auto e = moldata::ParseElement(token);
  if (!e) throw ParseError(where + "unknown element '" + token + "'");
  return *e;
}

template <typename Fn>
void ForEachDataLine(const std::string& text, const std::string& source, Fn fn) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string tok; fields >> tok;) tokens.push_back(tok);
    fn(tokens, source + ":" + std::to_string(line_no) + ": ");
  }
}

double ParseNumber(const std::string& token, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0' || !std::isfinite(v)) {
    throw ParseError(where + "malformed number '" + token + "'");
  }
  return v;
}

int ParseOrder(const std::string& token, const std::string& where) {
  const double v = ParseNumber(token, where);
  if (v != 1.0 && v != 2.0 && v != 3.0) {
    throw ParseError(where + "bond order must be 1, 2 or 3");
  }
  return static_cast<int>(v);
}

}  // namespace

std::filesystem::path DefaultDataDir() {
  if (const char* env = std::getenv("GCDM_DATA_DIR"); env != nullptr && *env) {
    return env;
  }
  return GCDM_DATA_DIR;
}

int BondTable::Key(Element a, Element b) {
  int i = static_cast<int>(a);
  int j = static_cast<int>(b);
  if (i > j) std::swap(i, j);
  return i * moldata::kNumAtomTypes + j;
}

BondTable BondTable::Load(const std::filesystem::path& path) {
  return Parse(ReadFile(path), path.string());
}

BondTable BondTable::LoadDefault() { return Load(DefaultDataDir() / "bond_lengths.tsv"); }

BondTable BondTable::Parse(const std::string& text, const std::string& source) {
  BondTable t;
  std::array<bool, 3> have_margin = {false, false, false};
  ForEachDataLine(text, source, [&](const std::vector<std::string>& tok,
                                    const std::string& where) {
    if (tok.size() == 3 && tok[0] == "margin") {
      const int order = ParseOrder(tok[1], where);
      const double m = ParseNumber(tok[2], where);
      if (m < 0.0) throw ParseError(where + "negative margin");
      t.margins_[static_cast<std::size_t>(order - 1)] = m;
      have_margin[static_cast<std::size_t>(order - 1)] = true;
      return;
    }
    if (tok.size() != 4) throw ParseError(where + "expected 4 columns");
    const Element a = ElementOrThrow(tok[0], where);
    const Element b = ElementOrThrow(tok[1], where);
    const int order = ParseOrder(tok[2], where);
    const double len = ParseNumber(tok[3], where);
    if (!(len > 0.0)) throw ParseError(where + "bond length must be positive");
    auto& row = t.lengths_[Key(a, b)];
    if (row[static_cast<std::size_t>(order - 1)] != 0.0) {
      throw ParseError(where + "duplicate entry");
    }
    row[static_cast<std::size_t>(order - 1)] = len;
  });
  for (int k = 0; k < 3; ++k) {
    if (!have_margin[static_cast<std::size_t>(k)]) {
      throw ParseError(source + ": missing margin for order " + std::to_string(k + 1));
    }
  }
  for (const auto& [key, row] : t.lengths_) {
    if (row[0] == 0.0) {
      throw ParseError(source + ": pair without a single-bond length");
    }
    for (int k = 1; k < 3; ++k) {
      const double cur = row[static_cast<std::size_t>(k)];
      const double prev = row[static_cast<std::size_t>(k - 1)];
      if (cur != 0.0 && (prev == 0.0 || !(cur < prev))) {
        throw ParseError(source + ": lengths must decrease with bond order");
      }
    }
  }
  return t;
}

std::optional<double> BondTable::length(Element a, Element b, int order) const {
  auto it = lengths_.find(Key(a, b));
  if (it == lengths_.end() || order < 1 || order > 3) return std::nullopt;
  const double v = it->second[static_cast<std::size_t>(order - 1)];
  if (v == 0.0) return std::nullopt;
  return v;
}

bool BondTable::Covers(Element a, Element b) const {
  return lengths_.count(Key(a, b)) != 0;
}

int BondTable::Order(Element a, Element b, double distance) const {
  auto it = lengths_.find(Key(a, b));
  if (it == lengths_.end()) {
    throw InvalidArgument("bond table has no entry for " +
                          std::string(moldata::Symbol(a)) + "-" +
                          std::string(moldata::Symbol(b)));
  }
  int order = 0;
  for (int k = 0; k < 3; ++k) {
    const double len = it->second[static_cast<std::size_t>(k)];
    if (len == 0.0 || !(distance < len + margins_[static_cast<std::size_t>(k)])) break;
    order = k + 1;
  }
  return order;
}

ValenceTable ValenceTable::Load(const std::filesystem::path& path) {
  return Parse(ReadFile(path), path.string());
}

ValenceTable ValenceTable::LoadDefault() { return Load(DefaultDataDir() / "valences.tsv"); }

ValenceTable ValenceTable::Parse(const std::string& text, const std::string& source) {
  ValenceTable t;
  ForEachDataLine(text, source, [&](const std::vector<std::string>& tok,
                                    const std::string& where) {
    if (tok.size() < 2) throw ParseError(where + "expected element and valences");
    const Element e = ElementOrThrow(tok[0], where);
    if (t.allowed_.count(e) != 0) throw ParseError(where + "duplicate element");
    std::vector<int>& v = t.allowed_[e];
    for (std::size_t i = 1; i < tok.size(); ++i) {
      const double val = ParseNumber(tok[i], where);
      if (val < 1.0 || val != std::floor(val)) {
        throw ParseError(where + "valences must be positive integers");
      }
      v.push_back(static_cast<int>(val));
    }
  });
  return t;
}

const std::vector<int>& ValenceTable::allowed(Element e) const {
  auto it = allowed_.find(e);
  if (it == allowed_.end()) {
    throw InvalidArgument("valence table has no entry for " +
                          std::string(moldata::Symbol(e)));
  }
  return it->second;
}

int ValenceTable::max_valence(Element e) const {
  const auto& v = allowed(e);
  return *std::max_element(v.begin(), v.end());
}

bool ValenceTable::IsAllowed(Element e, int valence) const {
  const auto& v = allowed(e);
  return std::find(v.begin(), v.end(), valence) != v.end();
}

Eigen::MatrixXi InferBonds(const MoleculeGraph& mol, const BondTable& table) {
  const int n = mol.num_atoms();
  Eigen::MatrixXi bonds = Eigen::MatrixXi::Zero(n, n);
  const auto elements = mol.elements();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = (mol.coords().row(i) - mol.coords().row(j)).norm();
      const int order = table.Order(elements[static_cast<std::size_t>(i)],
                                    elements[static_cast<std::size_t>(j)], d);
      bonds(i, j) = order;
      bonds(j, i) = order;
    }
  }
  return bonds;
}

int CountStableAtoms(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds,
                     const ValenceTable& valences) {
  int stable = 0;
  for (int i = 0; i < mol.num_atoms(); ++i) {
    if (valences.IsAllowed(mol.element(i), bonds.row(i).sum())) ++stable;
  }
  return stable;
}

double AtomStability(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds,
                     const ValenceTable& valences) {
  return static_cast<double>(CountStableAtoms(mol, bonds, valences)) /
         mol.num_atoms();
}

bool MoleculeStability(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds,
                       const ValenceTable& valences) {
  return CountStableAtoms(mol, bonds, valences) == mol.num_atoms();
}

bool IsValid(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds,
             const ValenceTable& valences) {
  const int n = mol.num_atoms();
  for (int i = 0; i < n; ++i) {
    if (bonds.row(i).sum() > valences.max_valence(mol.element(i))) return false;
  }
  if (n == 1) return true;
  if (bonds.sum() == 0) return false;
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  int reached = 1;
  while (!frontier.empty()) {
    const int i = frontier.front();
    frontier.pop();
    for (int j = 0; j < n; ++j) {
      if (bonds(i, j) > 0 && !seen[static_cast<std::size_t>(j)]) {
        seen[static_cast<std::size_t>(j)] = true;
        ++reached;
        frontier.push(j);
      }
    }
  }
  return reached == n;
}

std::string CanonicalForm(const MoleculeGraph& mol, const Eigen::MatrixXi& bonds) {
  constexpr double kBinWidth = 0.05;
  constexpr int kNumBins = 200;
  const int n = mol.num_atoms();
  const auto elements = mol.elements();

  std::array<int, moldata::kNumAtomTypes> composition{};
  for (Element e : elements) ++composition[static_cast<std::size_t>(e)];

  std::vector<std::string> typed_bonds;
  // (pair key, bin) -> count; pair key orders the two element indices.
  std::map<std::pair<int, int>, int> histogram;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      Element a = elements[static_cast<std::size_t>(i)];
      Element b = elements[static_cast<std::size_t>(j)];
      if (static_cast<int>(a) > static_cast<int>(b)) std::swap(a, b);
      const int pair = static_cast<int>(a) * moldata::kNumAtomTypes + static_cast<int>(b);
      if (bonds(i, j) > 0) {
        typed_bonds.push_back(std::string(moldata::Symbol(a)) +
                              std::string(moldata::Symbol(b)) +
                              std::to_string(bonds(i, j)));
      }
      const double d = (mol.coords().row(i) - mol.coords().row(j)).norm();
      const int bin = std::min(kNumBins, static_cast<int>(std::floor(d / kBinWidth)));
      ++histogram[{pair, bin}];
    }
  }
  std::sort(typed_bonds.begin(), typed_bonds.end());

  std::ostringstream form;
  for (int k = 0; k < moldata::kNumAtomTypes; ++k) {
    if (composition[static_cast<std::size_t>(k)] == 0) continue;
    form << moldata::Symbol(static_cast<Element>(k))
         << composition[static_cast<std::size_t>(k)];
  }
  form << '|';
  for (const auto& b : typed_bonds) form << b << ',';
  std::ostringstream hist;
  for (const auto& [key, count] : histogram) {
    hist << key.first << ':' << key.second << ':' << count << ';';
  }
  form << '|' << HexDigest(Fnv1a(hist.str()));
  return form.str();
}

ValidityResult ValidityAndUniqueness(std::span<const MoleculeGraph> samples,
                                     const BondTable& table,
                                     const ValenceTable& valences) {
  ValidityResult r;
  if (samples.empty()) return r;
  std::vector<std::string> forms;
  for (const auto& mol : samples) {
    const Eigen::MatrixXi bonds = InferBonds(mol, table);
    if (!IsValid(mol, bonds, valences)) continue;
    ++r.num_valid;
    forms.push_back(CanonicalForm(mol, bonds));
  }
  std::sort(forms.begin(), forms.end());
  r.num_unique = static_cast<std::size_t>(
      std::unique(forms.begin(), forms.end()) - forms.begin());
  const double total = static_cast<double>(samples.size());
  r.validity = r.num_valid / total;
  r.valid_and_unique = r.num_unique / total;
  return r;
}

MetricStat Summarize(double pooled, std::span<const double> values) {
  MetricStat s;
  s.value = pooled;
  if (values.size() < 2) return s;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  s.stderr_ = s.stddev / std::sqrt(static_cast<double>(values.size()));
  return s;
}

namespace {

struct BatchMetrics {
  std::size_t atoms = 0, stable_atoms = 0, stable_mols = 0;
  ValidityResult validity;
  std::size_t count = 0;
};

BatchMetrics Measure(std::span<const MoleculeGraph> samples,
                     const EvaluationConfig& config) {
  BatchMetrics m;
  m.count = samples.size();
  for (const auto& mol : samples) {
    const Eigen::MatrixXi bonds = InferBonds(mol, config.bonds);
    const int stable = CountStableAtoms(mol, bonds, config.valences);
    m.atoms += static_cast<std::size_t>(mol.num_atoms());
    m.stable_atoms += static_cast<std::size_t>(stable);
    if (stable == mol.num_atoms()) ++m.stable_mols;
  }
  m.validity = ValidityAndUniqueness(samples, config.bonds, config.valences);
  return m;
}

double Ratio(std::size_t a, std::size_t b) {
  return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
}

void AppendStat(std::ostringstream& out, const std::string& key, const MetricStat& s) {
  out << key << '=' << s.value << '\n'
      << key << "_std=" << s.stddev << '\n'
      << key << "_stderr=" << s.stderr_ << '\n';
}

}  // namespace

GenerationReport EvaluateSamples(std::span<const MoleculeGraph> samples,
                                 const EvaluationConfig& config) {
  if (config.num_batches < 1) throw InvalidArgument("num_batches must be >= 1");
  GenerationReport report;
  report.sample_count = samples.size();
  report.num_batches = config.num_batches;
  const BatchMetrics all = Measure(samples, config);

  std::vector<double> atom, mol, valid, unique;
  if (config.num_batches > 1 && samples.size() >= static_cast<std::size_t>(config.num_batches)) {
    const std::size_t nb = static_cast<std::size_t>(config.num_batches);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t begin = b * samples.size() / nb;
      const std::size_t end = (b + 1) * samples.size() / nb;
      const BatchMetrics m = Measure(samples.subspan(begin, end - begin), config);
      atom.push_back(Ratio(m.stable_atoms, m.atoms));
      mol.push_back(Ratio(m.stable_mols, m.count));
      valid.push_back(m.validity.validity);
      unique.push_back(m.validity.valid_and_unique);
    }
  }
  report.atom_stability = Summarize(Ratio(all.stable_atoms, all.atoms), atom);
  report.mol_stability = Summarize(Ratio(all.stable_mols, all.count), mol);
  report.validity = Summarize(all.validity.validity, valid);
  report.valid_and_unique = Summarize(all.validity.valid_and_unique, unique);
  return report;
}

std::string GenerationReport::ToText() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  auto row = [&](const char* name, const MetricStat& s) {
    out << std::left << std::setw(24) << name << std::right << std::setw(8)
        << 100.0 * s.value << " %";
    if (num_batches > 1) out << "  +/- " << 100.0 * s.stddev << " (std over batches)";
    out << '\n';
  };
  out << "Generation report\n";
  out << "samples                 " << sample_count << '\n';
  out << "batches                 " << num_batches << '\n';
  row("atom stability", atom_stability);
  row("molecule stability", mol_stability);
  row("validity", validity);
  row("valid and unique", valid_and_unique);
  if (nll_bound) {
    out << "NLL bound               " << nll_bound->value << "  +/- "
        << nll_bound->stderr_ << " (stderr)\n";
  }
  for (const auto& [k, v] : provenance) out << k << ": " << v << '\n';
  return out.str();
}

std::string GenerationReport::ToKeyValue() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "sample_count=" << sample_count << '\n' << "num_batches=" << num_batches << '\n';
  AppendStat(out, "atom_stability", atom_stability);
  AppendStat(out, "mol_stability", mol_stability);
  AppendStat(out, "validity", validity);
  AppendStat(out, "valid_and_unique", valid_and_unique);
  if (nll_bound) AppendStat(out, "nll_bound", *nll_bound);
  for (const auto& [k, v] : provenance) out << "provenance." << k << '=' << v << '\n';
  return out.str();
}

}  // namespace gcdm::evaluate
