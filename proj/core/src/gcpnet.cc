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

#include "gcdm/gcpnet.h"

#include <algorithm>
#include <cmath>

#include "gcdm/errors.h"

namespace gcdm::gcpnet {

using ad::Matrix;
using ad::Var;

void GCPNetConfig::Validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
  };
  positive(num_layers, "num_layers");
  positive(message_passes, "message_passes");
  positive(node_scalars, "node_scalars");
  positive(node_vectors, "node_vectors");
  positive(edge_scalars, "edge_scalars");
  positive(edge_vectors, "edge_vectors");
  positive(feature_dim, "feature_dim");
  if (!(rbf_max > 0.0)) throw ConfigError("model.rbf_max must be > 0");
  if (!(frame_eps > 0.0)) throw ConfigError("model.frame_eps must be > 0");
  if (cutoff && !(*cutoff > 0.0)) throw ConfigError("model.cutoff must be > 0");
}

GraphBatch GraphBatch::FullyConnected(std::span<const int> sizes) {
  GraphBatch b;
  for (int n : sizes) {
    if (n < 1) throw InvalidArgument("graph with no nodes");
    b.offsets.push_back(b.num_nodes);
    b.sizes.push_back(n);
    for (int i = 0; i < n; ++i) {
      b.node_graph.push_back(static_cast<int>(b.sizes.size()) - 1);
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        b.edge_src.push_back(b.num_nodes + i);
        b.edge_dst.push_back(b.num_nodes + j);
      }
    }
    b.num_nodes += n;
  }
  return b;
}

GraphBatch GraphBatch::WithCutoff(std::span<const int> sizes,
                                  const Eigen::MatrixX3d& coords,
                                  double cutoff) {
  GraphBatch full = FullyConnected(sizes);
  if (coords.rows() != full.num_nodes) {
    throw InvalidArgument("cutoff graph: coordinate rows != total nodes");
  }
  GraphBatch b = full;
  b.edge_src.clear();
  b.edge_dst.clear();
  for (int e = 0; e < full.num_edges(); ++e) {
    const int i = full.edge_src[static_cast<std::size_t>(e)];
    const int j = full.edge_dst[static_cast<std::size_t>(e)];
    if ((coords.row(i) - coords.row(j)).norm() < cutoff) {
      b.edge_src.push_back(i);
      b.edge_dst.push_back(j);
    }
  }
  return b;
}

Eigen::MatrixXd ToVectors(const Eigen::MatrixX3d& coords) {
  Eigen::MatrixXd v(3 * coords.rows(), 1);
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    for (int k = 0; k < 3; ++k) v(3 * i + k, 0) = coords(i, k);
  }
  return v;
}

Eigen::MatrixX3d FromVectors(const Eigen::MatrixXd& vectors) {
  if (vectors.cols() != 1 || vectors.rows() % 3 != 0) {
    throw InvalidArgument("FromVectors expects a 3N x 1 field");
  }
  Eigen::MatrixX3d c(vectors.rows() / 3, 3);
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    for (int k = 0; k < 3; ++k) c(i, k) = vectors(3 * i + k, 0);
  }
  return c;
}

ParamBinder::ParamBinder(ad::Tape& tape, const ParameterSet& params,
                         ParameterSet* grads)
    : tape_(tape), params_(params), grads_(grads) {
  if (grads_ != nullptr) params_.CheckCompatible(*grads_);
}

Var ParamBinder::operator()(const std::string& path) {
  auto it = cache_.find(path);
  if (it != cache_.end()) return it->second;
  const Matrix* value = &params_.Get(path);
  Matrix* sink = grads_ != nullptr ? &grads_->Get(path) : nullptr;
  Var v = tape_.Leaf(value, sink);
  cache_.emplace(path, v);
  return v;
}

EdgeFrames BuildFrames(Var coords, const GraphBatch& batch, double eps) {
  Var xi = ad::GatherVectors(coords, batch.edge_src);
  Var xj = ad::GatherVectors(coords, batch.edge_dst);
  EdgeFrames f;
  f.a = ad::NormalizeVectors(ad::Sub(xi, xj), eps);
  f.b = ad::NormalizeVectors(ad::CrossVectors(xi, xj), eps);
  f.c = ad::CrossVectors(f.a, f.b);
  return f;
}

EdgeState BuildEdgeState(Var coords, const GraphBatch& batch,
                         const GCPNetConfig& config) {
  ad::Tape& tape = *coords.tape();
  Var diff = ad::Sub(ad::GatherVectors(coords, batch.edge_src),
                     ad::GatherVectors(coords, batch.edge_dst));
  Var dist = ad::VectorNorms(diff, config.frame_eps * config.frame_eps);
  const int k = config.edge_scalars;
  Eigen::VectorXd centers = Eigen::VectorXd::Zero(k);
  if (k > 1) centers = Eigen::VectorXd::LinSpaced(k, 0.0, config.rbf_max);
  const double width = k > 1 ? config.rbf_max / (k - 1) : config.rbf_max;
  EdgeState es;
  es.scalars = ad::RadialBasis(dist, centers, width);
  Var unit = ad::NormalizeVectors(diff, config.frame_eps);
  if (config.edge_vectors == 1) {
    es.vectors = unit;
  } else {
    Var pad = tape.Constant(
        Matrix::Zero(3 * batch.num_edges(), config.edge_vectors - 1));
    const Var parts[] = {unit, pad};
    es.vectors = ad::ConcatCols(parts);
  }
  return es;
}

EdgeFeatures InitEdgeFeatures(const Eigen::MatrixX3d& centered_coords,
                              const GCPNetConfig& config) {
  CheckCentered(centered_coords, "InitEdgeFeatures");
  const int sizes[] = {static_cast<int>(centered_coords.rows())};
  GraphBatch batch =
      config.cutoff ? GraphBatch::WithCutoff(sizes, centered_coords, *config.cutoff)
                    : GraphBatch::FullyConnected(sizes);
  ad::Tape tape;
  EdgeState es = BuildEdgeState(tape.Constant(ToVectors(centered_coords)),
                                batch, config);
  return EdgeFeatures{batch.edge_src, batch.edge_dst, es.scalars.value(),
                      es.vectors.value()};
}

int GcpDims::vectors_hidden() const { return std::max(vectors_in, vectors_out); }

void AddGcpParameters(ParameterSet& params, const std::string& prefix,
                      const GcpDims& dims, bool use_frames,
                      std::mt19937_64& rng, bool zero_vector_out) {
  const int vh = dims.vectors_hidden();
  params.Add(prefix + "/w_down", GlorotUniform(dims.vectors_in, vh, rng));
  int scalar_in = dims.scalars_in + vh;
  if (use_frames) {
    params.Add(prefix + "/w_frame", GlorotUniform(dims.vectors_in, 3, rng));
    scalar_in += 9;
  }
  params.Add(prefix + "/w_s", GlorotUniform(scalar_in, dims.scalars_out, rng));
  params.Add(prefix + "/b_s", Matrix::Zero(1, dims.scalars_out));
  params.Add(prefix + "/w_up", zero_vector_out
                                   ? Matrix::Zero(vh, dims.vectors_out)
                                   : GlorotUniform(vh, dims.vectors_out, rng));
  params.Add(prefix + "/w_g", GlorotUniform(dims.scalars_out, dims.vectors_out, rng));
  params.Add(prefix + "/b_g", Matrix::Zero(1, dims.vectors_out));
}

Var FrameScalars(Var frame_vectors, const FrameContext& context) {
  Var v = frame_vectors;
  if (context.node_level) {
    v = ad::GatherVectors(v, context.batch->edge_src);
  }
  const Var parts[] = {ad::ProjectVectors(v, context.frames->a),
                       ad::ProjectVectors(v, context.frames->b),
                       ad::ProjectVectors(v, context.frames->c)};
  Var s = ad::ConcatCols(parts);
  if (context.node_level) {
    s = ad::SegmentMean(s, context.batch->edge_src, context.batch->num_nodes);
  }
  return s;
}

NodeState GcpForward(ParamBinder& p, const std::string& prefix,
                     const GcpDims& dims, const NodeState& in,
                     const FrameContext* frames) {
  if (in.scalars.cols() != dims.scalars_in || in.vectors.cols() != dims.vectors_in) {
    throw InvalidArgument(prefix + ": input dims do not match the module");
  }
  Var down = ad::MatMul(in.vectors, p(prefix + "/w_down"));
  std::vector<Var> scalar_parts = {in.scalars, ad::VectorNorms(down)};
  if (frames != nullptr) {
    scalar_parts.push_back(
        FrameScalars(ad::MatMul(in.vectors, p(prefix + "/w_frame")), *frames));
  }
  Var s = ad::Silu(ad::AddRowBroadcast(
      ad::MatMul(ad::ConcatCols(scalar_parts), p(prefix + "/w_s")),
      p(prefix + "/b_s")));
  Var gate = ad::Sigmoid(
      ad::AddRowBroadcast(ad::MatMul(s, p(prefix + "/w_g")), p(prefix + "/b_g")));
  Var v = ad::GateVectors(ad::MatMul(down, p(prefix + "/w_up")), gate);
  return NodeState{s, v};
}

Var ScalarMessageAttention(ParamBinder& p, const std::string& prefix,
                           Var messages) {
  Var gate = ad::Sigmoid(ad::AddRowBroadcast(
      ad::MatMul(messages, p(prefix + "/w")), p(prefix + "/b")));
  return ad::MulRowScalar(messages, gate);
}

namespace {

std::string LayerPrefix(int layer) { return "layer" + std::to_string(layer); }

GcpDims MessageDims(const GCPNetConfig& c, int pass) {
  if (pass == 0) {
    return {2 * c.node_scalars + c.edge_scalars,
            2 * c.node_vectors + c.edge_vectors, c.node_scalars, c.node_vectors};
  }
  return {c.node_scalars, c.node_vectors, c.node_scalars, c.node_vectors};
}

GcpDims NodeDims(const GCPNetConfig& c) {
  return {2 * c.node_scalars, 2 * c.node_vectors, c.node_scalars, c.node_vectors};
}

GcpDims PositionDims(const GCPNetConfig& c) {
  return {c.node_scalars, c.node_vectors, c.node_scalars, 1};
}

GcpDims EmbeddingDims(const GCPNetConfig& c) {
  return {c.feature_dim + 1, 1, c.node_scalars, c.node_vectors};
}

// Scales aggregated means back to sums.
NodeState MeanToSum(const NodeState& mean, const GraphBatch& batch) {
  ad::Tape& tape = *mean.scalars.tape();
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(batch.num_nodes);
  for (int i : batch.edge_src) counts(i) += 1.0;
  Var c = tape.Constant(counts);
  Var gate = tape.Constant(counts.replicate(1, mean.vectors.cols()));
  return NodeState{ad::MulRowScalar(mean.scalars, c),
                   ad::GateVectors(mean.vectors, gate)};
}

}  // namespace

LayerState GcpConvForward(ParamBinder& p, int layer, const LayerState& in,
                          const GraphBatch& batch, const GCPNetConfig& config) {
  const std::string prefix = LayerPrefix(layer);
  EdgeFrames frames = BuildFrames(in.coords, batch, config.frame_eps);
  EdgeState edges = BuildEdgeState(in.coords, batch, config);
  FrameContext edge_ctx{&frames, &batch, false};
  FrameContext node_ctx{&frames, &batch, true};
  const FrameContext* edge_frames = config.use_frames ? &edge_ctx : nullptr;
  const FrameContext* node_frames = config.use_frames ? &node_ctx : nullptr;

  const Var s_parts[] = {ad::GatherRows(in.nodes.scalars, batch.edge_src),
                         ad::GatherRows(in.nodes.scalars, batch.edge_dst),
                         edges.scalars};
  const Var v_parts[] = {ad::GatherVectors(in.nodes.vectors, batch.edge_src),
                         ad::GatherVectors(in.nodes.vectors, batch.edge_dst),
                         edges.vectors};
  NodeState msg{ad::ConcatCols(s_parts), ad::ConcatCols(v_parts)};
  msg = GcpForward(p, prefix + "/message0", MessageDims(config, 0), msg,
                   edge_frames);
  for (int k = 1; k < config.message_passes; ++k) {
    NodeState next = GcpForward(p, prefix + "/message" + std::to_string(k),
                                MessageDims(config, k), msg, edge_frames);
    msg = NodeState{ad::Add(msg.scalars, next.scalars),
                    ad::Add(msg.vectors, next.vectors)};
  }
  if (config.use_sma) {
    msg.scalars = ScalarMessageAttention(p, prefix + "/sma", msg.scalars);
  }

  NodeState agg{ad::SegmentMean(msg.scalars, batch.edge_src, batch.num_nodes),
                ad::SegmentMeanVectors(msg.vectors, batch.edge_src,
                                       batch.num_nodes)};
  if (config.aggregation == Aggregation::kSum) agg = MeanToSum(agg, batch);

  const Var ns_parts[] = {in.nodes.scalars, agg.scalars};
  const Var nv_parts[] = {in.nodes.vectors, agg.vectors};
  NodeState update = GcpForward(
      p, prefix + "/node", NodeDims(config),
      NodeState{ad::ConcatCols(ns_parts), ad::ConcatCols(nv_parts)}, node_frames);

  LayerState out;
  out.nodes.scalars = ad::LayerNormRows(ad::Add(in.nodes.scalars, update.scalars));
  out.nodes.vectors = ad::RmsNormVectors(ad::Add(in.nodes.vectors, update.vectors));

  NodeState position = GcpForward(p, prefix + "/position", PositionDims(config),
                                  out.nodes, node_frames);
  out.coords = ad::CenterVectors(ad::Add(in.coords, position.vectors),
                                 batch.node_graph, batch.num_graphs());
  return out;
}

ParameterSet InitParameters(const GCPNetConfig& config, std::uint64_t seed) {
  config.Validate();
  std::mt19937_64 rng(seed);
  ParameterSet params;
  AddGcpParameters(params, "embedding", EmbeddingDims(config), config.use_frames,
                   rng);
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string prefix = LayerPrefix(l);
    for (int k = 0; k < config.message_passes; ++k) {
      AddGcpParameters(params, prefix + "/message" + std::to_string(k),
                       MessageDims(config, k), config.use_frames, rng);
    }
    if (config.use_sma) {
      params.Add(prefix + "/sma/w", GlorotUniform(config.node_scalars, 1, rng));
      params.Add(prefix + "/sma/b", Matrix::Zero(1, 1));
    }
    AddGcpParameters(params, prefix + "/node", NodeDims(config),
                     config.use_frames, rng);
    AddGcpParameters(params, prefix + "/position", PositionDims(config),
                     config.use_frames, rng, config.zero_init_heads);
  }
  params.Add("head/w", config.zero_init_heads
                           ? Matrix::Zero(config.node_scalars, config.feature_dim)
                           : GlorotUniform(config.node_scalars,
                                           config.feature_dim, rng));
  params.Add("head/b", Matrix::Zero(1, config.feature_dim));
  return params;
}

void CheckCentered(const Eigen::MatrixX3d& z_x, const char* what) {
  const double tol = 1e-9 * static_cast<double>(std::max<Eigen::Index>(1, z_x.rows()));
  const Eigen::RowVector3d sum = z_x.colwise().sum();
  if (!(sum.cwiseAbs().maxCoeff() <= tol)) {
    throw InvalidArgument(std::string(what) +
                          ": coordinates are not centered (|sum| = " +
                          std::to_string(sum.cwiseAbs().maxCoeff()) + ")");
  }
}

DenoiserVars DenoiserForwardBatch(ParamBinder& p, const GraphBatch& batch,
                                  const Eigen::MatrixXd& z_x,
                                  const Eigen::MatrixXd& z_h,
                                  const Eigen::VectorXd& time,
                                  const GCPNetConfig& config) {
  if (z_x.rows() != 3 * batch.num_nodes || z_x.cols() != 1 ||
      z_h.rows() != batch.num_nodes || z_h.cols() != config.feature_dim ||
      time.size() != batch.num_nodes) {
    throw InvalidArgument("DenoiserForwardBatch: input shapes do not match batch");
  }
  const Eigen::MatrixX3d coords = FromVectors(z_x);
  for (int g = 0; g < batch.num_graphs(); ++g) {
    const auto gi = static_cast<std::size_t>(g);
    CheckCentered(coords.middleRows(batch.offsets[gi], batch.sizes[gi]),
                  "denoiser input");
  }
  ad::Tape& tape = p.tape();
  Var x0 = tape.Constant(z_x);
  Matrix scalars(batch.num_nodes, config.feature_dim + 1);
  scalars << z_h, time;
  Var s0 = tape.Constant(std::move(scalars));

  EdgeFrames frames0 = BuildFrames(x0, batch, config.frame_eps);
  FrameContext ctx0{&frames0, &batch, true};
  LayerState state;
  state.nodes = GcpForward(p, "embedding", EmbeddingDims(config), NodeState{s0, x0},
                           config.use_frames ? &ctx0 : nullptr);
  state.coords = x0;
  for (int l = 0; l < config.num_layers; ++l) {
    state = GcpConvForward(p, l, state, batch, config);
  }
  DenoiserVars out;
  out.eps_h = ad::AddRowBroadcast(ad::MatMul(state.nodes.scalars, p("head/w")),
                                  p("head/b"));
  out.eps_x = ad::CenterVectors(ad::Sub(state.coords, x0), batch.node_graph,
                                batch.num_graphs());
  return out;
}

DenoiserOutput DenoiserForward(const Eigen::MatrixX3d& z_x,
                               const Eigen::MatrixXd& z_h, int t, int T,
                               const ParameterSet& params,
                               const GCPNetConfig& config) {
  if (T < 1 || t < 0 || t > T) {
    throw InvalidArgument("DenoiserForward: t must lie in [0, T]");
  }
  CheckCentered(z_x, "DenoiserForward");
  const int sizes[] = {static_cast<int>(z_x.rows())};
  GraphBatch batch = config.cutoff
                         ? GraphBatch::WithCutoff(sizes, z_x, *config.cutoff)
                         : GraphBatch::FullyConnected(sizes);
  ad::Tape tape;
  ParamBinder binder(tape, params);
  DenoiserVars v = DenoiserForwardBatch(
      binder, batch, ToVectors(z_x), z_h,
      Eigen::VectorXd::Constant(z_x.rows(), static_cast<double>(t) / T), config);
  return DenoiserOutput{FromVectors(v.eps_x.value()), v.eps_h.value()};
}

}  // namespace gcdm::gcpnet
