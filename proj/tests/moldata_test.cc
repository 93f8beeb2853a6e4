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

#include <gtest/gtest.h>

#include <fstream>

#include "gcdm/errors.h"
#include "test_util.h"

namespace gcdm::moldata {
namespace {

using testing::TempDir;

void WriteFile(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string XyzText(int n) {
  std::string s = std::to_string(n) + "\ncomment\n";
  for (int i = 0; i < n; ++i) {
    s += (i == 0 ? "C " : "H ") + std::to_string(0.9 * i) + " 0.0 0.0\n";
  }
  return s;
}

TEST(MoleculeGraphTest, RejectsNonOneHotRows) {
  Eigen::MatrixX3d x = Eigen::MatrixX3d::Zero(2, 3);
  Eigen::MatrixXd types = Eigen::MatrixXd::Zero(2, kNumAtomTypes);
  types(0, 0) = 1.0;
  types(1, 1) = 0.5;
  EXPECT_THROW(MoleculeGraph("m", x, types, Eigen::VectorXi::Ones(2)), InvalidArgument);
  types(1, 1) = 1.0;
  types(1, 2) = 1.0;
  EXPECT_THROW(MoleculeGraph("m", x, types, Eigen::VectorXi::Ones(2)), InvalidArgument);
}

TEST(MoleculeGraphTest, RejectsNonFiniteAndMismatchedRows) {
  Eigen::MatrixXd types = Eigen::MatrixXd::Zero(2, kNumAtomTypes);
  types.col(0).setOnes();
  Eigen::MatrixX3d x = Eigen::MatrixX3d::Zero(2, 3);
  x(1, 2) = std::nan("");
  EXPECT_THROW(MoleculeGraph("m", x, types, Eigen::VectorXi::Ones(2)), InvalidArgument);
  x(1, 2) = 0.0;
  EXPECT_THROW(MoleculeGraph("m", x, types, Eigen::VectorXi::Ones(3)), InvalidArgument);
  EXPECT_THROW(MoleculeGraph("m", Eigen::MatrixX3d(0, 3), Eigen::MatrixXd(0, kNumAtomTypes),
                             Eigen::VectorXi(0)),
               InvalidArgument);
}

TEST(MoleculeGraphTest, ChargesDefaultToAtomicNumbers) {
  const auto m = testing::Methane();
  EXPECT_EQ(m.charges()(0), 6);
  EXPECT_EQ(m.charges()(1), 1);
  EXPECT_EQ(m.element(0), Element::kC);
}

TEST(IngestTest, XyzDirectoryWithManifest) {
  TempDir dir("xyz");
  const auto data = dir.path() / "mols";
  std::filesystem::create_directories(data);
  std::string manifest = "[train]\n";
  for (int i = 0; i < 10; ++i) {
    const std::string id = "m" + std::to_string(i);
    WriteFile(data / (id + ".xyz"), XyzText(2 + i % 3));
    if (i == 8) manifest += "[val]\n";
    if (i == 9) manifest += "[test]\n";
    manifest += id + "\n";
  }
  WriteFile(dir.path() / "split.txt", manifest);
  SplitOptions options;
  options.manifest = dir.path() / "split.txt";
  const auto split = LoadDataset(data, DatasetFormat::kXyzDir, options);
  EXPECT_EQ(split.train.size(), 8u);
  EXPECT_EQ(split.val.size(), 1u);
  EXPECT_EQ(split.test.size(), 1u);
  EXPECT_EQ(split.val[0].id(), "m8");
  EXPECT_EQ(split.ManifestText(), manifest);
}

TEST(IngestTest, UnknownElementNamesAtomAndLine) {
  TempDir dir("si");
  WriteFile(dir.path() / "bad.xyz", "2\n\nC 0 0 0\nSi 1 0 0\n");
  try {
    ReadMolecules(dir.path(), DatasetFormat::kXyzDir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Si"), std::string::npos) << msg;
    EXPECT_NE(msg.find(":4"), std::string::npos) << msg;
  }
}

TEST(IngestTest, MalformedCoordinateAndEmptyDataset) {
  TempDir dir("bad");
  WriteFile(dir.path() / "a.mol", "# a\nC 0 0 zero 6\n");
  EXPECT_THROW(ReadMolecules(dir.path() / "a.mol", DatasetFormat::kInternal), ParseError);
  WriteFile(dir.path() / "empty.mol", "\n\n");
  EXPECT_THROW(LoadDataset(dir.path() / "empty.mol", DatasetFormat::kInternal, {}),
               ParseError);
}

TEST(IngestTest, InternalRoundTrip) {
  std::mt19937_64 rng(3);
  std::vector<MoleculeGraph> mols;
  for (int i = 0; i < 5; ++i) {
    mols.push_back(testing::RandomMolecule(1 + i, rng, 3.0, "r" + std::to_string(i)));
  }
  TempDir dir("internal");
  WriteInternal(dir.path() / "x.mol", mols);
  const auto back = ReadMolecules(dir.path() / "x.mol", DatasetFormat::kInternal);
  ASSERT_EQ(back.size(), mols.size());
  for (std::size_t i = 0; i < mols.size(); ++i) {
    EXPECT_EQ(back[i].id(), mols[i].id());
    EXPECT_EQ(back[i].atom_types(), mols[i].atom_types());
    EXPECT_EQ(back[i].charges(), mols[i].charges());
    // Six written decimals.
    EXPECT_LE((back[i].coords() - mols[i].coords()).cwiseAbs().maxCoeff(), 5e-7 + 1e-12);
  }
}

TEST(IngestTest, MultiFrameXyzRoundTrip) {
  std::mt19937_64 rng(5);
  std::vector<MoleculeGraph> mols = {testing::RandomMolecule(3, rng, 3.0, "a"),
                                     testing::RandomMolecule(1, rng, 3.0, "b")};
  TempDir dir("frames");
  WriteXyz(dir.path() / "s.xyz", mols);
  const auto back = ReadMolecules(dir.path() / "s.xyz", DatasetFormat::kXyzDir);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id(), "b");
  EXPECT_EQ(back[0].atom_types(), mols[0].atom_types());
  EXPECT_LT((back[0].coords() - mols[0].coords()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(IngestTest, SdfRecords) {
  TempDir dir("sdf");
  WriteFile(dir.path() / "x.sdf",
            "water\n  test\n\n  3  2  0  0  0  0  0  0  0  0999 V2000\n"
            "    0.0000    0.0000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0\n"
            "    0.9600    0.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0\n"
            "   -0.2400    0.9300    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0\n"
            "  1  2  1  0\n  1  3  1  0\nM  END\n$$$$\n");
  const auto mols = ReadMolecules(dir.path() / "x.sdf", DatasetFormat::kSdf);
  ASSERT_EQ(mols.size(), 1u);
  EXPECT_EQ(mols[0].id(), "water");
  EXPECT_EQ(mols[0].num_atoms(), 3);
  EXPECT_EQ(mols[0].element(0), Element::kO);
}

TEST(SplitTest, SeededSplitIsDeterministicAndDisjoint) {
  std::mt19937_64 rng(9);
  std::vector<MoleculeGraph> mols;
  for (int i = 0; i < 50; ++i) {
    mols.push_back(testing::RandomMolecule(2, rng, 3.0, "id" + std::to_string(i)));
  }
  SplitOptions options;
  options.seed = 4;
  options.counts = std::array<std::size_t, 2>{30, 10};
  const auto a = SplitMolecules(mols, options);
  const auto b = SplitMolecules(mols, options);
  EXPECT_EQ(a.ManifestText(), b.ManifestText());
  EXPECT_EQ(a.train.size(), 30u);
  EXPECT_EQ(a.val.size(), 10u);
  EXPECT_EQ(a.test.size(), 10u);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const auto& m : *part) EXPECT_TRUE(ids.insert(m.id()).second);
  }
  options.seed = 5;
  EXPECT_NE(SplitMolecules(mols, options).ManifestText(), a.ManifestText());
}

TEST(SplitTest, ProportionalSizesFollowReferenceCounts) {
  std::mt19937_64 rng(1);
  std::vector<MoleculeGraph> mols;
  for (int i = 0; i < 1000; ++i) {
    mols.push_back(testing::RandomMolecule(1, rng, 1.0, "p" + std::to_string(i)));
  }
  const auto split = SplitMolecules(mols, {});
  // 1000 * 100000 / 130831 and 1000 * 17748 / 130831, rounded down.
  EXPECT_EQ(split.train.size(), 764u);
  EXPECT_EQ(split.val.size(), 135u);
  EXPECT_EQ(split.test.size(), 101u);
}

TEST(SizeDistributionTest, CountsAndSingleton) {
  std::mt19937_64 rng(2);
  std::vector<MoleculeGraph> mols = {testing::RandomMolecule(3, rng),
                                     testing::RandomMolecule(3, rng),
                                     testing::RandomMolecule(5, rng)};
  const auto d = ComputeSizeDistribution(mols);
  ASSERT_EQ(d.probs.size(), 2u);
  EXPECT_DOUBLE_EQ(d.probs.at(3), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(d.probs.at(5), 1.0 / 3.0);
  EXPECT_EQ(d.counts.at(3), 2u);

  std::vector<MoleculeGraph> one = {testing::RandomMolecule(29, rng)};
  const auto s = ComputeSizeDistribution(one);
  EXPECT_EQ(s.probs.at(29), 1.0);
  EXPECT_EQ(s.max_size(), 29);
  EXPECT_THROW(ComputeSizeDistribution(std::span<const MoleculeGraph>()), InvalidArgument);
}

TEST(FeatureTest, EncodeMatchesScaledColumns) {
  const auto m = testing::Methane();
  const auto f = EncodeFeatures(m, {});
  Eigen::RowVectorXd carbon(6), hydrogen(6);
  carbon << 0, 0.25, 0, 0, 0, 0.6;
  hydrogen << 0.25, 0, 0, 0, 0, 0.1;
  EXPECT_LT((f.row(0) - carbon).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((f.row(1) - hydrogen).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FeatureTest, DecodeArgmaxRoundingAndTies) {
  Eigen::MatrixXd f(2, 6);
  f << 0.24, 0.01, 0, 0, 0, 0.11,  //
      0, 0, 0, 0, 0, 0.6;
  const auto d = DecodeFeatures(f, {});
  EXPECT_EQ(d.types[0], Element::kH);
  EXPECT_EQ(d.charges(0), 1);
  EXPECT_FALSE(d.tied[0]);
  EXPECT_EQ(d.types[1], Element::kH);
  EXPECT_TRUE(d.tied[1]);
  EXPECT_EQ(d.charges(1), 6);
}

TEST(FeatureTest, ScalerRejectsNonPositive) {
  FeatureScaler s;
  s.integer_scale = 0.0;
  EXPECT_THROW(s.Validate(), InvalidArgument);
  s.integer_scale = std::numeric_limits<double>::infinity();
  EXPECT_THROW(s.Validate(), InvalidArgument);
}

TEST(FeatureTest, RoundTripOnShippedData) {
  const auto mols = ReadMolecules(std::filesystem::path(GCDM_TEST_DATA_DIR) / "qm7_hcno.mol",
                                  DatasetFormat::kInternal);
  ASSERT_GE(mols.size(), 1000u);
  const FeatureScaler scaler;
  for (std::size_t i = 0; i < 1000; ++i) {
    const auto d = DecodeFeatures(EncodeFeatures(mols[i], scaler), scaler);
    ASSERT_EQ(d.OneHot(), mols[i].atom_types()) << mols[i].id();
    ASSERT_EQ(d.charges, mols[i].charges()) << mols[i].id();
  }
}

}  // namespace
}  // namespace gcdm::moldata
