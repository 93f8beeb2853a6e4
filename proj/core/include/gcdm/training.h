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

// Optimization of the denoiser: gradients, AdamW updates, finite-difference
// verification and checkpoint files.

#ifndef GCDM_TRAINING_H_
#define GCDM_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gcdm/diffusion.h"
#include "gcdm/gcpnet.h"
#include "gcdm/moldata.h"
#include "gcdm/parameters.h"

namespace gcdm::training {

using diffusion::Rng;

// Worker threads for batched forward/backward passes: GCDM_NUM_THREADS if
// set, otherwise min(hardware threads, 8).
int NumThreads();

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-12;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  void Validate() const;
};

struct OptimizerState {
  AdamWConfig config;
  int batch_size = 64;
  std::int64_t step = 0;
  ParameterSet m;
  ParameterSet v;
};

OptimizerState InitOptimizer(const ParameterSet& params, const AdamWConfig& config,
                             int batch_size);

// p ← p·(1 − lr·wd), then the bias-corrected Adam step. Throws
// NumericalError naming the first non-finite gradient before touching any
// state.
void AdamWUpdate(ParameterSet& params, const ParameterSet& grads,
                 OptimizerState& state);

struct Model {
  gcpnet::GCPNetConfig config;
  ParameterSet params;
};

// ε̂ predictions from a GCPNet, in chunks of at most `max_batch` molecules
// spread over NumThreads() workers.
class GcpDenoiser : public diffusion::Denoiser {
 public:
  GcpDenoiser(const Model& model, int T, int max_batch = 16);
  std::vector<diffusion::Noise> Predict(
      std::span<const diffusion::LatentState> batch) const override;

 private:
  const Model& model_;
  int T_;
  int max_batch_;
};

struct GradientResult {
  diffusion::LossBreakdown loss;
  ParameterSet grads;
  std::vector<diffusion::Noise> predictions;
};

// Loss breakdown and d l_t / d params for fixed noised examples. l_t is the
// batch mean of ½‖ε − ε̂‖²; the zeroth terms are reported but not
// differentiated.
GradientResult ComputeGradients(std::span<const diffusion::NoisedExample> examples,
                                const Model& model,
                                const diffusion::NoiseSchedule& schedule,
                                const moldata::FeatureScaler& scaler,
                                int num_threads = 0);

// l_t alone, forward only (used by finite differences).
double EvaluateLt(std::span<const diffusion::NoisedExample> examples,
                  const Model& model, int T);

diffusion::LossBreakdown TrainStep(std::span<const moldata::MoleculeGraph> batch,
                                   Model& model, OptimizerState& opt,
                                   const diffusion::NoiseSchedule& schedule,
                                   const moldata::FeatureScaler& scaler, Rng& rng);

// Uniform draw of `batch_size` molecules with replacement.
std::vector<moldata::MoleculeGraph> DrawBatch(
    std::span<const moldata::MoleculeGraph> data, int batch_size, Rng& rng);

// Mean l_t over `molecules` with t and noise drawn from a fresh rng seeded
// with `seed`, so repeated calls see identical noise.
double ValidationLoss(std::span<const moldata::MoleculeGraph> molecules,
                      const Model& model, const diffusion::NoiseSchedule& schedule,
                      const moldata::FeatureScaler& scaler, std::uint64_t seed,
                      int batch_size = 32);

struct GradientCheckEntry {
  std::string path;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst_path;
  bool passed = false;
};

struct GradientCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-4;
};

GradientCheckReport CheckGradients(const Model& model,
                                   std::span<const diffusion::NoisedExample> instance,
                                   const diffusion::NoiseSchedule& schedule,
                                   const GradientCheckOptions& options = {});

struct ScheduleDescriptor {
  diffusion::ScheduleKind kind = diffusion::ScheduleKind::kPolynomial;
  int T = 1000;
  double precision = diffusion::kDefaultPrecision;
  diffusion::NoiseSchedule Build() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  Model model;
  OptimizerState optimizer;
  ScheduleDescriptor schedule;
  moldata::FeatureScaler scaler;
  // Training-set molecule size counts, used to draw N when sampling.
  std::map<int, std::int64_t> size_counts;
  std::string rng_state;
};

std::string SerializeCheckpoint(const Checkpoint& ckpt);
Checkpoint DeserializeCheckpoint(const std::string& bytes);
void SaveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Throws CheckpointError on a corrupt, truncated or mismatched file.
Checkpoint LoadCheckpoint(const std::filesystem::path& path);
// FNV-1a digest of the file contents.
std::string CheckpointHash(const std::filesystem::path& path);

std::string RngState(const Rng& rng);
void RestoreRng(Rng& rng, const std::string& state);

moldata::SizeDistribution SizesFromCounts(const std::map<int, std::int64_t>& counts);

}  // namespace gcdm::training

#endif  // GCDM_TRAINING_H_
