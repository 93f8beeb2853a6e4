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

#include "gcdm/autodiff.h"

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <vector>

#include "gcdm/errors.h"
#include "test_util.h"

namespace gcdm::ad {
namespace {

using Op = std::function<Var(std::span<const Var>)>;

// Reduces the op output to a scalar with fixed random weights, so every
// output entry contributes a distinct amount.
double Evaluate(const Op& op, const std::vector<Matrix>& inputs, const Matrix& weights) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.Leaf(&m, nullptr));
  const Matrix& out = op(vars).value();
  return out.cwiseProduct(weights).sum();
}

// Max relative error between tape gradients and central differences.
double GradError(const Op& op, std::vector<Matrix> inputs, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Matrix weights;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(probe.Leaf(&m, nullptr));
    const Matrix out = op(vars).value();
    weights = testing::RandomMatrix(out.rows(), out.cols(), rng);
  }
  std::vector<Matrix> grads;
  for (const auto& m : inputs) grads.push_back(Matrix::Zero(m.rows(), m.cols()));
  {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      vars.push_back(tape.Leaf(&inputs[i], &grads[i]));
    }
    const Var out = op(vars);
    const Var loss = Sum(Mul(out, tape.Constant(weights)));
    tape.Backward(loss);
  }
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
      const double keep = inputs[i].data()[k];
      inputs[i].data()[k] = keep + h;
      const double up = Evaluate(op, inputs, weights);
      inputs[i].data()[k] = keep - h;
      const double down = Evaluate(op, inputs, weights);
      inputs[i].data()[k] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[i].data()[k];
      worst = std::max(worst, std::abs(numeric - analytic) /
                                  std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
    }
  }
  return worst;
}

Matrix Rand(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return testing::RandomMatrix(r, c, rng);
}

constexpr double kTol = 1e-6;

TEST(AutodiffTest, TableOps) {
  EXPECT_LT(GradError([](auto v) { return MatMul(v[0], v[1]); }, {Rand(3, 4, 1), Rand(4, 2, 2)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return Add(v[0], v[1]); }, {Rand(3, 2, 3), Rand(3, 2, 4)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return Sub(v[0], v[1]); }, {Rand(3, 2, 5), Rand(3, 2, 6)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return Mul(v[0], v[1]); }, {Rand(3, 2, 7), Rand(3, 2, 8)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return Scale(v[0], -1.7); }, {Rand(2, 2, 9)}), kTol);
  EXPECT_LT(GradError([](auto v) { return AddRowBroadcast(v[0], v[1]); },
                      {Rand(4, 3, 10), Rand(1, 3, 11)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return MulRowScalar(v[0], v[1]); },
                      {Rand(4, 3, 12), Rand(4, 1, 13)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return Sigmoid(v[0]); }, {Rand(3, 3, 14)}), kTol);
  EXPECT_LT(GradError([](auto v) { return Silu(v[0]); }, {Rand(3, 3, 15)}), kTol);
  EXPECT_LT(GradError([](auto v) { return ConcatCols(v); },
                      {Rand(3, 1, 16), Rand(3, 2, 17), Rand(3, 3, 18)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return Sum(v[0]); }, {Rand(3, 3, 19)}), kTol);
  EXPECT_LT(GradError([](auto v) { return SquaredNorm(v[0]); }, {Rand(3, 3, 20)}), kTol);
  EXPECT_LT(GradError([](auto v) { return LayerNormRows(v[0]); }, {Rand(4, 5, 21)}), kTol);
}

TEST(AutodiffTest, GatherAndSegmentOps) {
  const IndexList index = {2, 0, 0, 1, 2};
  EXPECT_LT(GradError([&](auto v) { return GatherRows(v[0], index); }, {Rand(3, 2, 1)}), kTol);
  const IndexList segment = {0, 1, 1, 0, 2, 1};
  EXPECT_LT(GradError([&](auto v) { return SegmentMean(v[0], segment, 4); }, {Rand(6, 2, 2)}),
            kTol);
  Eigen::VectorXd centers = Eigen::VectorXd::LinSpaced(5, 0.0, 4.0);
  Matrix d = Rand(4, 1, 3).cwiseAbs() * 2.0;
  EXPECT_LT(GradError([&](auto v) { return RadialBasis(v[0], centers, 1.0); }, {d}), kTol);
}

TEST(AutodiffTest, VectorOps) {
  const IndexList index = {1, 0, 2, 2};
  EXPECT_LT(GradError([&](auto v) { return GatherVectors(v[0], index); }, {Rand(9, 2, 1)}), kTol);
  const IndexList segment = {0, 1, 0, 1};
  EXPECT_LT(GradError([&](auto v) { return SegmentMeanVectors(v[0], segment, 2); },
                      {Rand(12, 3, 2)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return VectorNorms(v[0]); }, {Rand(9, 2, 3)}), kTol);
  EXPECT_LT(GradError([](auto v) { return GateVectors(v[0], v[1]); },
                      {Rand(9, 2, 4), Rand(3, 2, 5)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return ProjectVectors(v[0], v[1]); },
                      {Rand(9, 3, 6), Rand(9, 1, 7)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return CrossVectors(v[0], v[1]); },
                      {Rand(9, 1, 8), Rand(9, 1, 9)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return NormalizeVectors(v[0], 1e-8); }, {Rand(9, 1, 10)}),
            kTol);
  EXPECT_LT(GradError([&](auto v) { return CenterVectors(v[0], segment, 2); },
                      {Rand(12, 2, 11)}),
            kTol);
  EXPECT_LT(GradError([](auto v) { return RmsNormVectors(v[0]); }, {Rand(9, 4, 12)}), kTol);
}

TEST(AutodiffTest, SharedLeafAccumulates) {
  // f(x) = sum(x * x) + sum(x): df/dx = 2x + 1.
  Matrix x = Rand(2, 3, 4);
  Matrix g = Matrix::Zero(2, 3);
  Tape tape;
  const Var v = tape.Leaf(&x, &g);
  tape.Backward(Add(Sum(Mul(v, v)), Sum(v)));
  EXPECT_LT((g - (2.0 * x).array().matrix() - Matrix::Ones(2, 3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(AutodiffTest, VectorsLayoutValues) {
  // Two items with one channel: (3,4,0) and (0,0,2).
  Matrix v(6, 1);
  v << 3, 4, 0, 0, 0, 2;
  Tape tape;
  const Var x = tape.Constant(v);
  const Matrix norms = VectorNorms(x, 0.0).value();
  EXPECT_DOUBLE_EQ(norms(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(norms(1, 0), 2.0);
  const Matrix centered = CenterVectors(x, {0, 0}, 1).value();
  Matrix want(6, 1);
  want << 1.5, 2, -1, -1.5, -2, 1;
  EXPECT_LT((centered - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AutodiffTest, Misuse) {
  Tape a, b;
  const Var x = a.Constant(Matrix::Ones(2, 2));
  const Var y = b.Constant(Matrix::Ones(2, 2));
  EXPECT_THROW(Add(x, y), InvalidArgument);
  EXPECT_THROW(MatMul(x, a.Constant(Matrix::Ones(3, 1))), InvalidArgument);
  EXPECT_THROW(a.Backward(x), InvalidArgument);
  const Var s = Sum(x);
  a.Backward(s);
  EXPECT_THROW(a.Backward(s), InvalidArgument);
}

}  // namespace
}  // namespace gcdm::ad
