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

// Variance-preserving diffusion over coordinates (zero-CoG subspace) and
// scaled atom features.

#ifndef GCDM_DIFFUSION_H_
#define GCDM_DIFFUSION_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "gcdm/moldata.h"

namespace gcdm::diffusion {

using Rng = std::mt19937_64;

enum class ScheduleKind { kPolynomial, kCosine };

std::optional<ScheduleKind> ParseScheduleKind(std::string_view name);
std::string_view ScheduleKindName(ScheduleKind kind);

inline constexpr double kDefaultPrecision = 5e-7;
inline constexpr double kStepClip = 0.001;

class NoiseSchedule {
 public:
  // Throws InvalidArgument on bad arguments and NumericalError when the
  // constructed schedule violates an invariant.
  static NoiseSchedule Build(int T, ScheduleKind kind,
                             double precision = kDefaultPrecision);
  // Arbitrary α_t² table (t = 0..T), which must lie in [0, 1] and be strictly
  // decreasing. Only the structural invariants are checked.
  static NoiseSchedule FromAlpha2(std::vector<double> alpha2);

  int T() const { return static_cast<int>(alpha2_.size()) - 1; }
  ScheduleKind kind() const { return kind_; }
  double precision() const { return precision_; }

  double alpha2(int t) const { return alpha2_.at(static_cast<std::size_t>(t)); }
  double sigma2(int t) const { return 1.0 - alpha2(t); }
  double alpha(int t) const;
  double sigma(int t) const;
  double snr(int t) const { return alpha2(t) / sigma2(t); }
  // Transition s -> t for s < t.
  double alpha_ts(int t, int s) const;
  double sigma2_ts(int t, int s) const;

 private:
  explicit NoiseSchedule(std::vector<double> alpha2);
  std::vector<double> alpha2_;
  ScheduleKind kind_ = ScheduleKind::kPolynomial;
  double precision_ = 0.0;
};

struct LatentState {
  Eigen::MatrixX3d z_x;
  Eigen::MatrixXd z_h;
  int t = 0;
};

struct Noise {
  Eigen::MatrixX3d eps_x;
  Eigen::MatrixXd eps_h;
};

// Standard normal draw with the coordinate part projected to zero CoG.
Noise DrawNoise(int num_atoms, int feature_dim, Rng& rng);

LatentState ForwardNoise(const Eigen::MatrixX3d& x, const Eigen::MatrixXd& h,
                         int t, const NoiseSchedule& schedule,
                         const Noise& noise);

struct PosteriorParams {
  Eigen::MatrixX3d mu_x;
  Eigen::MatrixXd mu_h;
  double sigma = 0.0;
};

PosteriorParams ComputePosterior(const Eigen::MatrixX3d& x_hat,
                                 const Eigen::MatrixXd& h_hat,
                                 const LatentState& z_t, int s,
                                 const NoiseSchedule& schedule);

// [x̂, ĥ] = z_t / α_t − ε̂ σ_t / α_t.
struct CleanEstimate {
  Eigen::MatrixX3d x;
  Eigen::MatrixXd h;
};
CleanEstimate InvertNoise(const LatentState& z_t, const Noise& eps_hat,
                          const NoiseSchedule& schedule);

// ε̂ predictions for a batch of latents (each carrying its own t).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::vector<Noise> Predict(std::span<const LatentState> batch) const = 0;
};

// Adapter for plain functions, mainly for tests and analytic denoisers.
class FunctionDenoiser : public Denoiser {
 public:
  using Fn = std::function<Noise(const LatentState&)>;
  explicit FunctionDenoiser(Fn fn) : fn_(std::move(fn)) {}
  std::vector<Noise> Predict(std::span<const LatentState> batch) const override;

 private:
  Fn fn_;
};

// Losses are negative log-likelihood contributions: l_t = ½‖ε − ε̂‖²,
// l_0_x = −L₀^(x), l_0_h = −log p(h | z₀), l_base = KL(q(z_T | x) ‖ N(0, I)).
struct LossBreakdown {
  double l_t = 0.0;
  double l_0_x = 0.0;
  double l_0_h = 0.0;
  double l_base = 0.0;
};

enum class Weighting {
  kUnit,  // w(t) = 1, used for training
  kTrue,  // SNR(t−1)/SNR(t) − 1, the KL weight used for likelihood bounds
};

double TermWeight(int t, const NoiseSchedule& schedule, Weighting weighting);

// ½ w(t) ‖ε − ε̂‖² over both coordinate and feature blocks.
double DiffusionTerm(const Noise& eps, const Noise& eps_hat, int t,
                     const NoiseSchedule& schedule, Weighting weighting);

// Training example: clean data, drawn t and noise, and the resulting latent.
struct NoisedExample {
  std::string id;
  Eigen::MatrixX3d x;
  Eigen::MatrixXd h;
  Noise noise;
  LatentState z;
};

// Centers coordinates, encodes features and draws t ~ U{0..T} and noise.
std::vector<NoisedExample> DrawTrainingExamples(
    std::span<const moldata::MoleculeGraph> batch, const NoiseSchedule& schedule,
    const moldata::FeatureScaler& scaler, Rng& rng);

// Batch-averaged breakdown given predictions for each example.
LossBreakdown BreakdownFromPredictions(std::span<const NoisedExample> examples,
                                       std::span<const Noise> predictions,
                                       const NoiseSchedule& schedule,
                                       const moldata::FeatureScaler& scaler);

LossBreakdown TrainingLoss(std::span<const moldata::MoleculeGraph> batch,
                           const NoiseSchedule& schedule,
                           const Denoiser& denoiser,
                           const moldata::FeatureScaler& scaler, Rng& rng);

inline constexpr double kLogFloor = -700.0;

// log[Φ((h + ½ − z₀)/σ₀) − Φ((h − ½ − z₀)/σ₀)], floored at kLogFloor. All
// quantities on the unscaled integer level.
double LogIntegerLikelihood(double h, double z0, double sigma0);

struct CategoricalLikelihood {
  Eigen::VectorXd probs;   // normalized over categories
  double log_prob = 0.0;   // of the true category
  bool underflow = false;  // all weights vanished; probs are uniform
};

// Unnormalized weights ∫_{½}^{3/2} N(u | z₀_k, σ₀) du per category, on the
// unscaled level, normalized to a categorical distribution.
CategoricalLikelihood CategoricalZerothLikelihood(int true_category,
                                                  const Eigen::VectorXd& z0,
                                                  double sigma0);

// Per-atom log-likelihoods of the integer and categorical features given the
// scaled latent z₀^(h), using σ₀ rescaled to each feature's unscaled level.
Eigen::VectorXd ZerothLikelihoodInteger(const Eigen::VectorXi& charges,
                                        const Eigen::MatrixXd& z0_h,
                                        const NoiseSchedule& schedule,
                                        const moldata::FeatureScaler& scaler);
Eigen::VectorXd ZerothLikelihoodCategorical(const Eigen::MatrixXd& atom_types,
                                            const Eigen::MatrixXd& z0_h,
                                            const NoiseSchedule& schedule,
                                            const moldata::FeatureScaler& scaler);

// log Z = (N − 1)·3·log(√(2π)·σ₀/α₀).
double LogPositionNormalizer(int num_atoms, const NoiseSchedule& schedule);

// L₀^(x) = −log Z − ½‖ε^(x) − ε̂₀^(x)‖².
double ZerothPositionLogLikelihood(const Eigen::MatrixX3d& eps_x,
                                   const Eigen::MatrixX3d& eps0_hat,
                                   const NoiseSchedule& schedule);

// KL(q(z_T | x, h) ‖ N(0, I)) with (N − 1)·3 coordinate dimensions.
double PriorKl(const Eigen::MatrixX3d& x, const Eigen::MatrixXd& h,
               const NoiseSchedule& schedule);

struct NllEstimate {
  double prior = 0.0;      // L_base as a KL
  double diffusion = 0.0;  // T · KL_t at a uniformly drawn t in 1..T
  double zeroth = 0.0;     // −(L₀^(x) + log p(h | z₀))
  double total() const { return prior + diffusion + zeroth; }
};

// One stochastic estimate of the negative variational bound per t-sample,
// averaged over `num_t_samples`.
NllEstimate NllBound(const moldata::MoleculeGraph& molecule,
                     const NoiseSchedule& schedule, const Denoiser& denoiser,
                     const moldata::FeatureScaler& scaler, int num_t_samples,
                     Rng& rng);

// Supplies the Gaussian draw that produces z_t for molecule `index`; t = −1
// denotes the final p(x | z₀) draw.
using NoiseSource = std::function<Noise(int t, int index, int num_atoms,
                                        int feature_dim)>;
using StepObserver = std::function<void(int t, std::span<const LatentState>)>;

struct SampleOptions {
  int feature_dim = moldata::kFeatureDim;
  moldata::FeatureScaler scaler;
  // Defaults to DrawNoise on the sampler rng.
  NoiseSource noise;
  // Called with every latent z_t, t = T..0.
  StepObserver observer;
  // Add the σ₀/α₀ draw of p(x | z₀) to the final coordinates.
  bool final_noise = true;
};

// Ancestral sampling of one molecule per entry of `sizes`, processed as one
// denoiser batch. Throws NumericalError naming t on a non-finite latent.
std::vector<moldata::MoleculeGraph> SampleBatch(std::span<const int> sizes,
                                                const NoiseSchedule& schedule,
                                                const Denoiser& denoiser,
                                                Rng& rng,
                                                const SampleOptions& options = {});

moldata::MoleculeGraph Sample(int num_atoms, const NoiseSchedule& schedule,
                              const Denoiser& denoiser, Rng& rng,
                              const SampleOptions& options = {});

int SampleNumAtoms(const moldata::SizeDistribution& dist, Rng& rng);

// Fills a matrix with independent standard normal draws.
Eigen::MatrixXd StandardNormal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

}  // namespace gcdm::diffusion

#endif  // GCDM_DIFFUSION_H_
