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

#include <cmath>

#include "gcdm/errors.h"

namespace gcdm::ad {
namespace {

void CheckSameTape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw InvalidArgument("autodiff operands belong to different tapes");
  }
}

void CheckSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " +
                          std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
  }
}

std::vector<int> SegmentCounts(const IndexList& segment, int num_segments) {
  std::vector<int> counts(static_cast<std::size_t>(num_segments), 0);
  for (int s : segment) {
    if (s < 0 || s >= num_segments) throw InvalidArgument("segment out of range");
    ++counts[static_cast<std::size_t>(s)];
  }
  return counts;
}

double SigmoidScalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::Constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Leaf(const Matrix* value, Matrix* grad_sink) {
  Node node;
  node.external = value;
  node.sink = grad_sink;
  node.requires_grad = grad_sink != nullptr;
  if (grad_sink != nullptr &&
      (grad_sink->rows() != value->rows() || grad_sink->cols() != value->cols())) {
    throw InvalidArgument("gradient sink shape differs from leaf shape");
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Push(Matrix value, std::initializer_list<Var> inputs,
               BackwardFn backward) {
  return Push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::Push(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw InvalidArgument("operand from another tape");
    if (nodes_[static_cast<std::size_t>(in.id_)].requires_grad) {
      node.requires_grad = true;
    }
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value(Var v) const {
  const Node& node = nodes_[static_cast<std::size_t>(v.id_)];
  return node.external != nullptr ? *node.external : node.value;
}

void Tape::AccumulateGrad(Var v, const Matrix& g) {
  Node& node = nodes_[static_cast<std::size_t>(v.id_)];
  if (!node.requires_grad) return;
  if (node.sink != nullptr) {
    *node.sink += g;
  } else if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::Backward(Var output) {
  if (output.rows() != 1 || output.cols() != 1) {
    throw InvalidArgument("Backward() without seed needs a 1x1 output");
  }
  Backward(output, Matrix::Ones(1, 1));
}

void Tape::Backward(Var output, const Matrix& seed) {
  if (backward_done_) throw InvalidArgument("Backward() called twice on a tape");
  backward_done_ = true;
  CheckSameShape(value(output), seed, "Backward seed");
  if (!requires_grad(output)) return;
  AccumulateGrad(output, seed);
  for (int id = output.id_; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward || node.grad.size() == 0) continue;
    Matrix grad = std::move(node.grad);
    node.grad = Matrix();
    node.backward(*this, grad);
  }
}

// ---- table operations ----

Var MatMul(Var a, Var b) {
  CheckSameTape(a, b);
  if (a.cols() != b.rows()) throw InvalidArgument("MatMul: inner dimensions differ");
  Tape& t = *a.tape();
  Matrix v = a.value() * b.value();
  return t.Push(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.AccumulateGrad(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.AccumulateGrad(b, t.value(a).transpose() * g);
  });
}

Var Add(Var a, Var b) {
  CheckSameTape(a, b);
  CheckSameShape(a.value(), b.value(), "Add");
  Tape& t = *a.tape();
  return t.Push(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a, g);
    t.AccumulateGrad(b, g);
  });
}

Var Sub(Var a, Var b) {
  CheckSameTape(a, b);
  CheckSameShape(a.value(), b.value(), "Sub");
  Tape& t = *a.tape();
  return t.Push(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a, g);
    if (t.requires_grad(b)) t.AccumulateGrad(b, -g);
  });
}

Var Mul(Var a, Var b) {
  CheckSameTape(a, b);
  CheckSameShape(a.value(), b.value(), "Mul");
  Tape& t = *a.tape();
  return t.Push(a.value().cwiseProduct(b.value()), {a, b},
                [a, b](Tape& t, const Matrix& g) {
                  if (t.requires_grad(a)) t.AccumulateGrad(a, g.cwiseProduct(t.value(b)));
                  if (t.requires_grad(b)) t.AccumulateGrad(b, g.cwiseProduct(t.value(a)));
                });
}

Var Scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.Push(a.value() * s, {a},
                [a, s](Tape& t, const Matrix& g) { t.AccumulateGrad(a, g * s); });
}

Var AddRowBroadcast(Var a, Var bias) {
  CheckSameTape(a, bias);
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw InvalidArgument("AddRowBroadcast: bias must be 1 x cols");
  }
  Tape& t = *a.tape();
  Matrix v = a.value().rowwise() + bias.value().row(0);
  return t.Push(std::move(v), {a, bias}, [a, bias](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a, g);
    if (t.requires_grad(bias)) t.AccumulateGrad(bias, g.colwise().sum());
  });
}

Var MulRowScalar(Var a, Var s) {
  CheckSameTape(a, s);
  if (s.cols() != 1 || s.rows() != a.rows()) {
    throw InvalidArgument("MulRowScalar: scale must be rows x 1");
  }
  Tape& t = *a.tape();
  Matrix v = a.value().array().colwise() * s.value().col(0).array();
  return t.Push(std::move(v), {a, s}, [a, s](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) {
      Matrix ga = g.array().colwise() * t.value(s).col(0).array();
      t.AccumulateGrad(a, ga);
    }
    if (t.requires_grad(s)) {
      Matrix gs = g.cwiseProduct(t.value(a)).rowwise().sum();
      t.AccumulateGrad(s, gs);
    }
  });
}

Var Sigmoid(Var a) {
  Tape& t = *a.tape();
  Matrix y = a.value().unaryExpr([](double x) { return SigmoidScalar(x); });
  Matrix dy = y.array() * (1.0 - y.array());
  return t.Push(std::move(y), {a}, [a, dy = std::move(dy)](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a, g.cwiseProduct(dy));
  });
}

Var Silu(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix sig = x.unaryExpr([](double z) { return SigmoidScalar(z); });
  Matrix y = x.cwiseProduct(sig);
  Matrix dy = sig.array() * (1.0 + x.array() * (1.0 - sig.array()));
  return t.Push(std::move(y), {a}, [a, dy = std::move(dy)](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a, g.cwiseProduct(dy));
  });
}

Var ConcatCols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("ConcatCols: no inputs");
  Tape& t = *parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    CheckSameTape(parts[0], p);
    if (p.rows() != rows) throw InvalidArgument("ConcatCols: row counts differ");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.Push(std::move(v), parts,
                [inputs, offsets](Tape& t, const Matrix& g) {
                  for (std::size_t k = 0; k < inputs.size(); ++k) {
                    if (!t.requires_grad(inputs[k])) continue;
                    t.AccumulateGrad(inputs[k],
                                     g.middleCols(offsets[k], inputs[k].cols()));
                  }
                });
}

Var GatherRows(Var a, const IndexList& index) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  const auto n = static_cast<Eigen::Index>(index.size());
  Matrix v(n, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) v(r, c) = x(index[static_cast<std::size_t>(r)], c);
  }
  const Eigen::Index src_rows = x.rows();
  return t.Push(std::move(v), {a}, [a, index, src_rows](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(src_rows, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        ga(index[static_cast<std::size_t>(r)], c) += g(r, c);
      }
    }
    t.AccumulateGrad(a, ga);
  });
}

Var SegmentMean(Var a, const IndexList& segment, int num_segments) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(segment.size()) != x.rows()) {
    throw InvalidArgument("SegmentMean: segment list length != rows");
  }
  const auto counts = SegmentCounts(segment, num_segments);
  Matrix v = Matrix::Zero(num_segments, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      v(segment[static_cast<std::size_t>(r)], c) += x(r, c);
    }
  }
  for (int s = 0; s < num_segments; ++s) {
    if (counts[static_cast<std::size_t>(s)] > 0) v.row(s) /= counts[static_cast<std::size_t>(s)];
  }
  return t.Push(std::move(v), {a},
                [a, segment, counts](Tape& t, const Matrix& g) {
                  const auto rows = static_cast<Eigen::Index>(segment.size());
                  Matrix ga(rows, g.cols());
                  for (Eigen::Index c = 0; c < g.cols(); ++c) {
                    for (Eigen::Index r = 0; r < rows; ++r) {
                      const int s = segment[static_cast<std::size_t>(r)];
                      ga(r, c) = g(s, c) / counts[static_cast<std::size_t>(s)];
                    }
                  }
                  t.AccumulateGrad(a, ga);
                });
}

Var LayerNormRows(Var a, double eps) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  const Eigen::VectorXd mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Eigen::VectorXd inv =
      ((centered.array().square().rowwise().mean()) + eps).rsqrt().matrix();
  Matrix y = centered.array().colwise() * inv.array();
  Matrix y_saved = y;
  return t.Push(std::move(y), {a},
                [a, y = std::move(y_saved), inv](Tape& t, const Matrix& g) {
                  const Eigen::VectorXd g_mean = g.rowwise().mean();
                  const Eigen::VectorXd gy_mean = g.cwiseProduct(y).rowwise().mean();
                  Matrix ga = (g.colwise() - g_mean) - (y.array().colwise() * gy_mean.array()).matrix();
                  ga = ga.array().colwise() * inv.array();
                  t.AccumulateGrad(a, ga);
                });
}

Var RadialBasis(Var distances, const Eigen::VectorXd& centers, double width) {
  Tape& t = *distances.tape();
  const Matrix& d = distances.value();
  if (d.cols() != 1) throw InvalidArgument("RadialBasis: distances must be R x 1");
  const Eigen::Index k = centers.size();
  Matrix v(d.rows(), k);
  for (Eigen::Index j = 0; j < k; ++j) {
    v.col(j) = (-((d.col(0).array() - centers(j)) / width).square()).exp().matrix();
  }
  Matrix v_saved = v;
  return t.Push(std::move(v), {distances},
                [distances, centers, width, v = std::move(v_saved)](Tape& t,
                                                                    const Matrix& g) {
                  const Matrix& d = t.value(distances);
                  Matrix gd = Matrix::Zero(d.rows(), 1);
                  for (Eigen::Index j = 0; j < centers.size(); ++j) {
                    gd.col(0).array() += g.col(j).array() * v.col(j).array() *
                                         (-2.0 * (d.col(0).array() - centers(j)) /
                                          (width * width));
                  }
                  t.AccumulateGrad(distances, gd);
                });
}

Var Sum(Var a) {
  Tape& t = *a.tape();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows();
  const Eigen::Index c = a.cols();
  return t.Push(std::move(v), {a}, [a, r, c](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var SquaredNorm(Var a) {
  Tape& t = *a.tape();
  Matrix v(1, 1);
  v(0, 0) = a.value().squaredNorm();
  return t.Push(std::move(v), {a}, [a](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a, t.value(a) * (2.0 * g(0, 0)));
  });
}

// ---- vectors-layout operations ----

namespace {

void CheckVectors(const Matrix& v, const char* op) {
  if (v.rows() % 3 != 0) {
    throw InvalidArgument(std::string(op) + ": vectors layout needs rows % 3 == 0");
  }
}

}  // namespace

Var GatherVectors(Var v, const IndexList& index) {
  CheckVectors(v.value(), "GatherVectors");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const auto n = static_cast<Eigen::Index>(index.size());
  Matrix out(3 * n, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::Index src = 3 * index[static_cast<std::size_t>(r)];
      out(3 * r, c) = x(src, c);
      out(3 * r + 1, c) = x(src + 1, c);
      out(3 * r + 2, c) = x(src + 2, c);
    }
  }
  const Eigen::Index src_rows = x.rows();
  return t.Push(std::move(out), {v}, [v, index, src_rows](Tape& t, const Matrix& g) {
    Matrix gv = Matrix::Zero(src_rows, g.cols());
    const auto n = static_cast<Eigen::Index>(index.size());
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index dst = 3 * index[static_cast<std::size_t>(r)];
        gv(dst, c) += g(3 * r, c);
        gv(dst + 1, c) += g(3 * r + 1, c);
        gv(dst + 2, c) += g(3 * r + 2, c);
      }
    }
    t.AccumulateGrad(v, gv);
  });
}

Var SegmentMeanVectors(Var v, const IndexList& segment, int num_segments) {
  CheckVectors(v.value(), "SegmentMeanVectors");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  if (static_cast<Eigen::Index>(segment.size()) * 3 != x.rows()) {
    throw InvalidArgument("SegmentMeanVectors: segment list length != items");
  }
  const auto counts = SegmentCounts(segment, num_segments);
  Matrix out = Matrix::Zero(3 * num_segments, x.cols());
  const auto n = static_cast<Eigen::Index>(segment.size());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::Index dst = 3 * segment[static_cast<std::size_t>(r)];
      out(dst, c) += x(3 * r, c);
      out(dst + 1, c) += x(3 * r + 1, c);
      out(dst + 2, c) += x(3 * r + 2, c);
    }
  }
  for (int s = 0; s < num_segments; ++s) {
    const int cnt = counts[static_cast<std::size_t>(s)];
    if (cnt > 0) out.middleRows(3 * s, 3) /= cnt;
  }
  return t.Push(std::move(out), {v}, [v, segment, counts](Tape& t, const Matrix& g) {
    const auto n = static_cast<Eigen::Index>(segment.size());
    Matrix gv(3 * n, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      for (Eigen::Index r = 0; r < n; ++r) {
        const int s = segment[static_cast<std::size_t>(r)];
        const double inv = 1.0 / counts[static_cast<std::size_t>(s)];
        gv(3 * r, c) = g(3 * s, c) * inv;
        gv(3 * r + 1, c) = g(3 * s + 1, c) * inv;
        gv(3 * r + 2, c) = g(3 * s + 2, c) * inv;
      }
    }
    t.AccumulateGrad(v, gv);
  });
}

Var VectorNorms(Var v, double eps) {
  CheckVectors(v.value(), "VectorNorms");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const Eigen::Index n = x.rows() / 3;
  Matrix out(n, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const double a = x(3 * r, c), b = x(3 * r + 1, c), d = x(3 * r + 2, c);
      out(r, c) = std::sqrt(a * a + b * b + d * d + eps);
    }
  }
  Matrix saved = out;
  return t.Push(std::move(out), {v}, [v, norms = std::move(saved)](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(v);
    Matrix gv(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      for (Eigen::Index r = 0; r < norms.rows(); ++r) {
        const double s = g(r, c) / norms(r, c);
        gv(3 * r, c) = s * x(3 * r, c);
        gv(3 * r + 1, c) = s * x(3 * r + 1, c);
        gv(3 * r + 2, c) = s * x(3 * r + 2, c);
      }
    }
    t.AccumulateGrad(v, gv);
  });
}

Var GateVectors(Var v, Var gate) {
  CheckSameTape(v, gate);
  CheckVectors(v.value(), "GateVectors");
  if (gate.rows() * 3 != v.rows() || gate.cols() != v.cols()) {
    throw InvalidArgument("GateVectors: gate must be items x channels");
  }
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const Matrix& s = gate.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      out(3 * r, c) = x(3 * r, c) * s(r, c);
      out(3 * r + 1, c) = x(3 * r + 1, c) * s(r, c);
      out(3 * r + 2, c) = x(3 * r + 2, c) * s(r, c);
    }
  }
  return t.Push(std::move(out), {v, gate}, [v, gate](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(v);
    const Matrix& s = t.value(gate);
    if (t.requires_grad(v)) {
      Matrix gv(x.rows(), x.cols());
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
          gv(3 * r, c) = g(3 * r, c) * s(r, c);
          gv(3 * r + 1, c) = g(3 * r + 1, c) * s(r, c);
          gv(3 * r + 2, c) = g(3 * r + 2, c) * s(r, c);
        }
      }
      t.AccumulateGrad(v, gv);
    }
    if (t.requires_grad(gate)) {
      Matrix gs(s.rows(), s.cols());
      for (Eigen::Index c = 0; c < s.cols(); ++c) {
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
          gs(r, c) = g(3 * r, c) * x(3 * r, c) + g(3 * r + 1, c) * x(3 * r + 1, c) +
                     g(3 * r + 2, c) * x(3 * r + 2, c);
        }
      }
      t.AccumulateGrad(gate, gs);
    }
  });
}

Var ProjectVectors(Var v, Var axis) {
  CheckSameTape(v, axis);
  CheckVectors(v.value(), "ProjectVectors");
  if (axis.cols() != 1 || axis.rows() != v.rows()) {
    throw InvalidArgument("ProjectVectors: axis must be a single-channel field");
  }
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const Matrix& ax = axis.value();
  const Eigen::Index n = x.rows() / 3;
  Matrix out(n, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      out(r, c) = x(3 * r, c) * ax(3 * r, 0) + x(3 * r + 1, c) * ax(3 * r + 1, 0) +
                  x(3 * r + 2, c) * ax(3 * r + 2, 0);
    }
  }
  return t.Push(std::move(out), {v, axis}, [v, axis](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(v);
    const Matrix& ax = t.value(axis);
    const Eigen::Index n = x.rows() / 3;
    if (t.requires_grad(v)) {
      Matrix gv(x.rows(), x.cols());
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (Eigen::Index r = 0; r < n; ++r) {
          gv(3 * r, c) = g(r, c) * ax(3 * r, 0);
          gv(3 * r + 1, c) = g(r, c) * ax(3 * r + 1, 0);
          gv(3 * r + 2, c) = g(r, c) * ax(3 * r + 2, 0);
        }
      }
      t.AccumulateGrad(v, gv);
    }
    if (t.requires_grad(axis)) {
      Matrix ga = Matrix::Zero(ax.rows(), 1);
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (Eigen::Index r = 0; r < n; ++r) {
          ga(3 * r, 0) += g(r, c) * x(3 * r, c);
          ga(3 * r + 1, 0) += g(r, c) * x(3 * r + 1, c);
          ga(3 * r + 2, 0) += g(r, c) * x(3 * r + 2, c);
        }
      }
      t.AccumulateGrad(axis, ga);
    }
  });
}

namespace {

Matrix CrossRows(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols());
  const Eigen::Index n = a.rows() / 3;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const double a0 = a(3 * r, c), a1 = a(3 * r + 1, c), a2 = a(3 * r + 2, c);
      const double b0 = b(3 * r, c), b1 = b(3 * r + 1, c), b2 = b(3 * r + 2, c);
      out(3 * r, c) = a1 * b2 - a2 * b1;
      out(3 * r + 1, c) = a2 * b0 - a0 * b2;
      out(3 * r + 2, c) = a0 * b1 - a1 * b0;
    }
  }
  return out;
}

}  // namespace

Var CrossVectors(Var a, Var b) {
  CheckSameTape(a, b);
  CheckVectors(a.value(), "CrossVectors");
  CheckSameShape(a.value(), b.value(), "CrossVectors");
  Tape& t = *a.tape();
  return t.Push(CrossRows(a.value(), b.value()), {a, b},
                [a, b](Tape& t, const Matrix& g) {
                  // d/da (g . a x b) = b x g ; d/db = g x a
                  if (t.requires_grad(a)) t.AccumulateGrad(a, CrossRows(t.value(b), g));
                  if (t.requires_grad(b)) t.AccumulateGrad(b, CrossRows(g, t.value(a)));
                });
}

Var NormalizeVectors(Var v, double eps) {
  CheckVectors(v.value(), "NormalizeVectors");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const Eigen::Index n = x.rows() / 3;
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  Matrix norms(n, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const double len = x.block(3 * r, c, 3, 1).norm();
      norms(r, c) = len;
      if (len >= eps) out.block(3 * r, c, 3, 1) = x.block(3 * r, c, 3, 1) / len;
    }
  }
  Matrix unit = out;
  return t.Push(std::move(out), {v},
                [v, eps, unit = std::move(unit), norms = std::move(norms)](
                    Tape& t, const Matrix& g) {
                  Matrix gv = Matrix::Zero(unit.rows(), unit.cols());
                  for (Eigen::Index c = 0; c < unit.cols(); ++c) {
                    for (Eigen::Index r = 0; r < norms.rows(); ++r) {
                      const double len = norms(r, c);
                      if (len < eps) continue;
                      const Eigen::Vector3d u = unit.block(3 * r, c, 3, 1);
                      const Eigen::Vector3d gr = g.block(3 * r, c, 3, 1);
                      gv.block(3 * r, c, 3, 1) = (gr - u * u.dot(gr)) / len;
                    }
                  }
                  t.AccumulateGrad(v, gv);
                });
}

Var CenterVectors(Var v, const IndexList& segment, int num_segments) {
  CheckVectors(v.value(), "CenterVectors");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  if (static_cast<Eigen::Index>(segment.size()) * 3 != x.rows()) {
    throw InvalidArgument("CenterVectors: segment list length != items");
  }
  const auto counts = SegmentCounts(segment, num_segments);
  auto center = [segment, counts, num_segments](const Matrix& m) {
    Matrix sums = Matrix::Zero(3 * num_segments, m.cols());
    const auto n = static_cast<Eigen::Index>(segment.size());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index s = 3 * segment[static_cast<std::size_t>(r)];
        for (int k = 0; k < 3; ++k) sums(s + k, c) += m(3 * r + k, c);
      }
    }
    Matrix out = m;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < n; ++r) {
        const int seg = segment[static_cast<std::size_t>(r)];
        const double inv = 1.0 / counts[static_cast<std::size_t>(seg)];
        for (int k = 0; k < 3; ++k) out(3 * r + k, c) -= sums(3 * seg + k, c) * inv;
      }
    }
    return out;
  };
  Matrix out = center(x);
  // The projection is symmetric, so the backward pass applies it again.
  return t.Push(std::move(out), {v}, [v, center](Tape& t, const Matrix& g) {
    t.AccumulateGrad(v, center(g));
  });
}

Var RmsNormVectors(Var v, double eps) {
  CheckVectors(v.value(), "RmsNormVectors");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const Eigen::Index n = x.rows() / 3;
  const double channels = static_cast<double>(x.cols());
  Eigen::VectorXd scale(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    scale(r) = std::sqrt(x.middleRows(3 * r, 3).squaredNorm() / channels + eps);
  }
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < n; ++r) out.middleRows(3 * r, 3) = x.middleRows(3 * r, 3) / scale(r);
  return t.Push(std::move(out), {v}, [v, scale, channels](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(v);
    Matrix gv(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < scale.size(); ++r) {
      const double s = scale(r);
      const double dot = g.middleRows(3 * r, 3).cwiseProduct(x.middleRows(3 * r, 3)).sum();
      gv.middleRows(3 * r, 3) =
          g.middleRows(3 * r, 3) / s - x.middleRows(3 * r, 3) * (dot / (s * s * s * channels));
    }
    t.AccumulateGrad(v, gv);
  });
}

}  // namespace gcdm::ad
