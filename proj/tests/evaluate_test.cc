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

#include <gtest/gtest.h>

#include "gcdm/errors.h"
#include "gcdm/geometry.h"
#include "test_util.h"

namespace gcdm::evaluate {
namespace {

using moldata::Element;

class EvaluateTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    bonds_ = new BondTable(BondTable::LoadDefault());
    valences_ = new ValenceTable(ValenceTable::LoadDefault());
  }
  static void TearDownTestSuite() {
    delete bonds_;
    delete valences_;
  }
  static const BondTable& bonds() { return *bonds_; }
  static const ValenceTable& valences() { return *valences_; }

 private:
  static BondTable* bonds_;
  static ValenceTable* valences_;
};

BondTable* EvaluateTest::bonds_ = nullptr;
ValenceTable* EvaluateTest::valences_ = nullptr;

MoleculeGraph Pair(Element a, Element b, double d) {
  Eigen::MatrixX3d x(2, 3);
  x << 0, 0, 0, d, 0, 0;
  const std::vector<Element> e = {a, b};
  return MoleculeGraph::FromElements("pair", e, x);
}

// Planar ethylene with C=C 1.34 and C-H 1.09.
MoleculeGraph Ethylene() {
  const double c = 0.67, hx = 0.67 + 1.09 * 0.5, hy = 1.09 * std::sqrt(3.0) / 2;
  Eigen::MatrixX3d x(6, 3);
  x << -c, 0, 0, c, 0, 0, -hx, hy, 0, -hx, -hy, 0, hx, hy, 0, hx, -hy, 0;
  const std::vector<Element> e = {Element::kC, Element::kC, Element::kH,
                                  Element::kH, Element::kH, Element::kH};
  return MoleculeGraph::FromElements("ethylene", e, x);
}

MoleculeGraph Drop(const MoleculeGraph& m, int atom) {
  std::vector<Element> e = m.elements();
  e.erase(e.begin() + atom);
  Eigen::MatrixX3d x(m.num_atoms() - 1, 3);
  for (int i = 0, r = 0; i < m.num_atoms(); ++i) {
    if (i != atom) x.row(r++) = m.coords().row(i);
  }
  return MoleculeGraph::FromElements(m.id(), e, x);
}

TEST_F(EvaluateTest, BondOrderFromDistance) {
  EXPECT_EQ(bonds().Order(Element::kC, Element::kC, 1.54), 1);
  EXPECT_EQ(bonds().Order(Element::kC, Element::kC, 1.34), 2);
  EXPECT_EQ(bonds().Order(Element::kC, Element::kC, 1.20), 3);
  EXPECT_EQ(bonds().Order(Element::kC, Element::kC, 5.0), 0);
  EXPECT_EQ(bonds().Order(Element::kC, Element::kC, 1.639), 1);
  EXPECT_EQ(bonds().Order(Element::kC, Element::kC, 1.641), 0);
  EXPECT_EQ(bonds().Order(Element::kH, Element::kO, 0.96),
            bonds().Order(Element::kO, Element::kH, 0.96));
  // H-H has no double entry, so short distances stay single.
  EXPECT_EQ(bonds().Order(Element::kH, Element::kH, 0.5), 1);
}

TEST_F(EvaluateTest, InferredBondsAreSymmetric) {
  std::mt19937_64 rng(2);
  const auto m = testing::RandomMolecule(12, rng, 3.0);
  const auto b = InferBonds(m, bonds());
  EXPECT_EQ(b, b.transpose());
  EXPECT_EQ(b.diagonal(), Eigen::VectorXi::Zero(12));
  EXPECT_GE(b.minCoeff(), 0);
  EXPECT_LE(b.maxCoeff(), 3);
}

TEST_F(EvaluateTest, MethaneIsStable) {
  const auto m = testing::Methane();
  const auto b = InferBonds(m, bonds());
  EXPECT_EQ(b.row(0).sum(), 4);
  EXPECT_EQ(AtomStability(m, b, valences()), 1.0);
  EXPECT_TRUE(MoleculeStability(m, b, valences()));
  EXPECT_TRUE(IsValid(m, b, valences()));
}

TEST_F(EvaluateTest, EthyleneIsStable) {
  const auto m = Ethylene();
  const auto b = InferBonds(m, bonds());
  EXPECT_EQ(b(0, 1), 2);
  EXPECT_TRUE(MoleculeStability(m, b, valences()));
}

TEST_F(EvaluateTest, MissingHydrogenBreaksStability) {
  const auto m = Drop(testing::Methane(), 4);
  const auto b = InferBonds(m, bonds());
  EXPECT_EQ(CountStableAtoms(m, b, valences()), 3);
  EXPECT_DOUBLE_EQ(AtomStability(m, b, valences()), 0.75);
  EXPECT_FALSE(MoleculeStability(m, b, valences()));
  // Under-saturated but connected and within valence limits.
  EXPECT_TRUE(IsValid(m, b, valences()));
}

TEST_F(EvaluateTest, LoneCarbonIsUnstable) {
  Eigen::MatrixX3d x = Eigen::MatrixX3d::Zero(1, 3);
  const std::vector<Element> e = {Element::kC};
  const auto m = MoleculeGraph::FromElements("c", e, x);
  const auto b = InferBonds(m, bonds());
  EXPECT_EQ(AtomStability(m, b, valences()), 0.0);
  EXPECT_FALSE(MoleculeStability(m, b, valences()));
}

TEST_F(EvaluateTest, DisconnectedOrOvervalentIsInvalid) {
  const auto far = Pair(Element::kC, Element::kC, 5.0);
  EXPECT_FALSE(IsValid(far, InferBonds(far, bonds()), valences()));
  const auto ff = Pair(Element::kF, Element::kF, 3.0);
  EXPECT_FALSE(IsValid(ff, InferBonds(ff, bonds()), valences()));
  auto m = testing::Methane();
  Eigen::MatrixX3d x(6, 3);
  x.topRows(5) = m.coords();
  x.row(5) << 0.0, 0.0, 1.0;
  std::vector<Element> e = m.elements();
  e.push_back(Element::kH);
  const auto crowded = MoleculeGraph::FromElements("crowded", e, x);
  EXPECT_FALSE(IsValid(crowded, InferBonds(crowded, bonds()), valences()));
}

TEST_F(EvaluateTest, DuplicatesCountOnceForUniqueness) {
  std::vector<MoleculeGraph> set;
  for (int i = 0; i < 10; ++i) set.push_back(testing::Methane(1.09, "m" + std::to_string(i)));
  const auto r = ValidityAndUniqueness(set, bonds(), valences());
  EXPECT_EQ(r.validity, 1.0);
  EXPECT_EQ(r.num_unique, 1u);
  EXPECT_DOUBLE_EQ(r.valid_and_unique, 0.1);
  set.push_back(Ethylene());
  const auto r2 = ValidityAndUniqueness(set, bonds(), valences());
  EXPECT_EQ(r2.num_unique, 2u);
  EXPECT_DOUBLE_EQ(r2.valid_and_unique, 2.0 / 11.0);
}

TEST_F(EvaluateTest, EmptyValidSubset) {
  std::vector<MoleculeGraph> set = {Pair(Element::kC, Element::kC, 5.0)};
  const auto r = ValidityAndUniqueness(set, bonds(), valences());
  EXPECT_EQ(r.validity, 0.0);
  EXPECT_EQ(r.valid_and_unique, 0.0);
  EXPECT_EQ(r.num_unique, 0u);
  EXPECT_EQ(ValidityAndUniqueness({}, bonds(), valences()).num_valid, 0u);
}

TEST_F(EvaluateTest, CanonicalFormIgnoresPoseAndOrder) {
  const auto m = Ethylene();
  const auto key = CanonicalForm(m, InferBonds(m, bonds()));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = geometry::RandomRotation(seed, 5.0);
    std::vector<Element> e = m.elements();
    Eigen::MatrixX3d x = geometry::ApplyTransform(t, m.coords());
    std::vector<int> perm = {5, 2, 0, 4, 1, 3};
    std::vector<Element> pe;
    Eigen::MatrixX3d px(6, 3);
    for (int i = 0; i < 6; ++i) {
      pe.push_back(e[perm[i]]);
      px.row(i) = x.row(perm[i]);
    }
    const auto moved = MoleculeGraph::FromElements("moved", pe, px);
    EXPECT_EQ(CanonicalForm(moved, InferBonds(moved, bonds())), key);
  }
  const auto methane = testing::Methane();
  EXPECT_NE(CanonicalForm(methane, InferBonds(methane, bonds())), key);
}

TEST_F(EvaluateTest, ReportPoolsAndSpreads) {
  std::vector<MoleculeGraph> set;
  for (int i = 0; i < 4; ++i) set.push_back(testing::Methane());
  for (int i = 0; i < 4; ++i) set.push_back(Drop(testing::Methane(), 4));
  EvaluationConfig cfg{bonds(), valences(), 2};
  const auto r = EvaluateSamples(set, cfg);
  EXPECT_EQ(r.sample_count, 8u);
  EXPECT_DOUBLE_EQ(r.mol_stability.value, 0.5);
  EXPECT_DOUBLE_EQ(r.atom_stability.value, (20.0 + 12.0) / 36.0);
  // Batches are {4 stable} and {4 unstable}: sample stddev of {1, 0}.
  EXPECT_NEAR(r.mol_stability.stddev, std::sqrt(0.5), 1e-12);
  const std::string kv = r.ToKeyValue();
  EXPECT_NE(kv.find("mol_stability=0.5"), std::string::npos);
  EXPECT_NE(r.ToText().find("molecule stability"), std::string::npos);
}

TEST(SummarizeTest, StatsOfValues) {
  const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
  const auto s = Summarize(2.5, v);
  EXPECT_EQ(s.value, 2.5);
  EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_NEAR(s.stderr_, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
  EXPECT_EQ(Summarize(1.0, std::vector<double>{1.0}).stddev, 0.0);
}

TEST(TableTest, ParseErrorsCarryLocation) {
  try {
    BondTable::Parse("C\tC\t1\n", "bonds.tsv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bonds.tsv:1"), std::string::npos);
  }
  EXPECT_THROW(ValenceTable::Parse("Xx\t1\n", "v.tsv"), ParseError);
  const auto v = ValenceTable::Parse("N\t3\t5\n", "v.tsv");
  EXPECT_TRUE(v.IsAllowed(Element::kN, 5));
  EXPECT_EQ(v.max_valence(Element::kN), 5);
}

}  // namespace
}  // namespace gcdm::evaluate
