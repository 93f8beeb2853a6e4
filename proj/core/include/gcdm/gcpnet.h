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

// Geometry-complete graph network used as the diffusion denoiser.
//
// Node states carry scalar features (table layout) and vector channels
// (vectors layout, see autodiff.h). Molecules are batched as a disjoint union
// of fully connected graphs; messages flow from j to i along edge (i, j) and
// are aggregated at i.

#ifndef GCDM_GCPNET_H_
#define GCDM_GCPNET_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gcdm/autodiff.h"
#include "gcdm/moldata.h"
#include "gcdm/parameters.h"

namespace gcdm::gcpnet {

enum class Aggregation { kSum, kMean };

struct GCPNetConfig {
  int num_layers = 9;
  int message_passes = 1;  // ω
  int node_scalars = 256;
  int node_vectors = 32;
  int edge_scalars = 64;
  int edge_vectors = 16;
  Aggregation aggregation = Aggregation::kMean;
  bool use_frames = true;
  bool use_sma = true;
  bool zero_init_heads = true;
  // Radial basis centers span [0, rbf_max] Å.
  double rbf_max = 10.0;
  // Edges only between atoms closer than this in the input (off by default).
  std::optional<double> cutoff;
  double frame_eps = 1e-8;
  int feature_dim = moldata::kFeatureDim;

  // Throws ConfigError on non-positive dims or layer counts.
  void Validate() const;
};

// Disjoint union of molecular graphs.
struct GraphBatch {
  std::vector<int> sizes;
  std::vector<int> offsets;
  ad::IndexList node_graph;
  ad::IndexList edge_src;  // i: receiving node
  ad::IndexList edge_dst;  // j: sending node
  int num_nodes = 0;
  int num_graphs() const { return static_cast<int>(sizes.size()); }
  int num_edges() const { return static_cast<int>(edge_src.size()); }

  static GraphBatch FullyConnected(std::span<const int> sizes);
  // Keeps ordered pairs whose distance in `coords` (stacked per graph) is
  // below `cutoff`.
  static GraphBatch WithCutoff(std::span<const int> sizes,
                               const Eigen::MatrixX3d& coords, double cutoff);
};

// N x 3 <-> vectors layout (3N x 1).
Eigen::MatrixXd ToVectors(const Eigen::MatrixX3d& coords);
Eigen::MatrixX3d FromVectors(const Eigen::MatrixXd& vectors);

// Binds parameters to a tape, creating each leaf once. When `grads` is given
// its tensors receive the gradients during Tape::Backward().
class ParamBinder {
 public:
  ParamBinder(ad::Tape& tape, const ParameterSet& params,
              ParameterSet* grads = nullptr);
  ad::Var operator()(const std::string& path);
  ad::Tape& tape() { return tape_; }
  const ParameterSet& params() const { return params_; }

 private:
  ad::Tape& tape_;
  const ParameterSet& params_;
  ParameterSet* grads_;
  std::map<std::string, ad::Var> cache_;
};

// Frame axes per edge, each a single-channel vectors-layout field (3E x 1).
struct EdgeFrames {
  ad::Var a, b, c;
};

EdgeFrames BuildFrames(ad::Var coords, const GraphBatch& batch, double eps);

struct EdgeState {
  ad::Var scalars;  // E x edge_scalars
  ad::Var vectors;  // 3E x edge_vectors
};

EdgeState BuildEdgeState(ad::Var coords, const GraphBatch& batch,
                         const GCPNetConfig& config);

// Edge features of a single molecule, evaluated without gradients.
struct EdgeFeatures {
  ad::IndexList src, dst;
  Eigen::MatrixXd scalars;
  Eigen::MatrixXd vectors;
};
EdgeFeatures InitEdgeFeatures(const Eigen::MatrixX3d& centered_coords,
                              const GCPNetConfig& config);

struct GcpDims {
  int scalars_in = 1;
  int vectors_in = 1;
  int scalars_out = 1;
  int vectors_out = 1;
  int vectors_hidden() const;
};

// Registers the parameters of one GCP module under `prefix`.
void AddGcpParameters(ParameterSet& params, const std::string& prefix,
                      const GcpDims& dims, bool use_frames,
                      std::mt19937_64& rng, bool zero_vector_out = false);

struct NodeState {
  ad::Var scalars;
  ad::Var vectors;
};

// Where the frame scalars of a GCP come from.
struct FrameContext {
  const EdgeFrames* frames = nullptr;
  // Node-level modules average their projections over incident edges.
  const GraphBatch* batch = nullptr;
  bool node_level = false;
};

// Frame-projected scalars: the down-projected vectors (3 channels) projected
// onto a, b and c, giving 9 columns ordered (a0,a1,a2,b0,b1,b2,c0,c1,c2).
ad::Var FrameScalars(ad::Var frame_vectors, const FrameContext& context);

NodeState GcpForward(ParamBinder& p, const std::string& prefix,
                     const GcpDims& dims, const NodeState& in,
                     const FrameContext* frames);

ad::Var ScalarMessageAttention(ParamBinder& p, const std::string& prefix,
                               ad::Var messages);

struct LayerState {
  NodeState nodes;
  ad::Var coords;  // 3N x 1, zero CoG per graph
};

LayerState GcpConvForward(ParamBinder& p, int layer, const LayerState& in,
                          const GraphBatch& batch, const GCPNetConfig& config);

ParameterSet InitParameters(const GCPNetConfig& config, std::uint64_t seed);

// Output of the batched denoiser; eps_x is 3N x 1 and zero-CoG per graph.
struct DenoiserVars {
  ad::Var eps_x;
  ad::Var eps_h;
};

// Batched forward pass. `z_x` is 3N x 1, `z_h` is N x feature_dim and
// `time` holds t/T per node.
DenoiserVars DenoiserForwardBatch(ParamBinder& p, const GraphBatch& batch,
                                  const Eigen::MatrixXd& z_x,
                                  const Eigen::MatrixXd& z_h,
                                  const Eigen::VectorXd& time,
                                  const GCPNetConfig& config);

struct DenoiserOutput {
  Eigen::MatrixX3d eps_x;
  Eigen::MatrixXd eps_h;
};

// Single-molecule forward pass. Throws InvalidArgument when z_x is not
// centered or t is outside [0, T].
DenoiserOutput DenoiserForward(const Eigen::MatrixX3d& z_x,
                               const Eigen::MatrixXd& z_h, int t, int T,
                               const ParameterSet& params,
                               const GCPNetConfig& config);

// Tolerance used to decide whether coordinates are centered: 1e-9 * N.
void CheckCentered(const Eigen::MatrixX3d& z_x, const char* what);

}  // namespace gcdm::gcpnet

#endif  // GCDM_GCPNET_H_
