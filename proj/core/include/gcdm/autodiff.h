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

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation in creation order together with a closure
// that maps the output gradient onto its inputs. Backward() walks the tape in
// reverse once. Nodes that do not depend on any gradient-requiring leaf carry
// no closure, so a tape without trainable leaves is a plain forward pass.
//
// Two layouts are used throughout:
//   table:   rows are items (atoms, edges), columns are features.
//   vectors: rows are (item, axis) pairs, row = 3 * item + axis, columns are
//            vector channels. Right-multiplying a vectors matrix by a weight
//            matrix mixes channels and commutes with rotations.

#ifndef GCDM_AUTODIFF_H_
#define GCDM_AUTODIFF_H_

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace gcdm::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Matrix value);
  // Leaf referencing external storage that must outlive the tape. When
  // `grad_sink` is non-null, Backward() accumulates the leaf gradient into it
  // (the sink must already have the leaf's shape).
  Var Leaf(const Matrix* value, Matrix* grad_sink);

  // Records an operation result. `backward` is dropped unless one of
  // `inputs` requires a gradient.
  Var Push(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var Push(Matrix value, std::span<const Var> inputs, BackwardFn backward);

  // Seeds d(output) = 1 for a 1x1 output (or `seed` for general shapes) and
  // propagates to every leaf sink. May be called once per tape.
  void Backward(Var output);
  void Backward(Var output, const Matrix& seed);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  void AccumulateGrad(Var v, const Matrix& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Row index lists shared by gather/segment operations.
using IndexList = std::vector<int>;

// ---- table operations ----
Var MatMul(Var a, Var b);
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);
Var Scale(Var a, double s);
// a (R x C) + bias (1 x C) broadcast over rows.
Var AddRowBroadcast(Var a, Var bias);
// a (R x C) scaled row-wise by s (R x 1).
Var MulRowScalar(Var a, Var s);
Var Sigmoid(Var a);
Var Silu(Var a);
Var ConcatCols(std::span<const Var> parts);
Var GatherRows(Var a, const IndexList& index);
// out.row(s) = mean of a.row(r) over r with segment[r] == s; empty -> 0.
Var SegmentMean(Var a, const IndexList& segment, int num_segments);
// Per-row standardization without affine parameters.
Var LayerNormRows(Var a, double eps = 1e-5);
// Gaussian radial basis: out(r, k) = exp(-((d(r) - centers(k)) / width)^2).
Var RadialBasis(Var distances, const Eigen::VectorXd& centers, double width);
Var Sum(Var a);
Var SquaredNorm(Var a);

// ---- vectors-layout operations ----
Var GatherVectors(Var v, const IndexList& index);
Var SegmentMeanVectors(Var v, const IndexList& segment, int num_segments);
// Per (item, channel) Euclidean norm sqrt(|v|^2 + eps): R x C table.
Var VectorNorms(Var v, double eps = 1e-8);
// Multiplies each (item, channel) vector by gate(item, channel).
Var GateVectors(Var v, Var gate);
// Projects every channel onto a single-channel axis field: R x C table.
Var ProjectVectors(Var v, Var axis);
Var CrossVectors(Var a, Var b);
// Unit vectors; items with norm below eps become zero (and pass no gradient).
Var NormalizeVectors(Var v, double eps);
// Subtracts the per-segment mean over items of each axis and channel.
Var CenterVectors(Var v, const IndexList& segment, int num_segments);
// v / sqrt(mean_c |v_c|^2 + eps) per item.
Var RmsNormVectors(Var v, double eps = 1e-5);

}  // namespace gcdm::ad

#endif  // GCDM_AUTODIFF_H_
