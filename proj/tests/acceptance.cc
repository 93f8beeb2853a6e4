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

// Acceptance suite: one PASS/FAIL line per criterion.
//
//   gcdm_acceptance [--only N]... [--expect-fail N]... [--desk-dir DIR]
//
// Exit status is 0 when every criterion passes except those named with
// --expect-fail, which must fail. A training run found in --desk-dir with a
// matching config hash is reused instead of retrained.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gcdm/commands.h"
#include "gcdm/diffusion.h"
#include "gcdm/errors.h"
#include "gcdm/evaluate.h"
#include "gcdm/gcpnet.h"
#include "gcdm/geometry.h"
#include "gcdm/hash.h"
#include "gcdm/moldata.h"
#include "gcdm/run_config.h"
#include "gcdm/training.h"

namespace gcdm {
namespace {

namespace fs = std::filesystem;
using diffusion::LatentState;
using diffusion::Noise;
using diffusion::NoiseSchedule;
using diffusion::Rng;
using diffusion::ScheduleKind;
using gcpnet::GCPNetConfig;
using moldata::Element;
using moldata::MoleculeGraph;

const fs::path kSourceDir = GCDM_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

std::string Pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

double MaxAbs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

Eigen::MatrixXd Gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return diffusion::StandardNormal(rows, cols, rng);
}

Eigen::MatrixX3d Centered(int n, Rng& rng, double scale) {
  Eigen::MatrixX3d x = scale * Gaussian(n, 3, rng);
  x.rowwise() -= x.colwise().mean();
  return x;
}

GCPNetConfig RandomHeads(int layers, int s, int v, int es, int ev) {
  GCPNetConfig c;
  c.num_layers = layers;
  c.node_scalars = s;
  c.node_vectors = v;
  c.edge_scalars = es;
  c.edge_vectors = ev;
  c.zero_init_heads = false;
  return c;
}

std::vector<MoleculeGraph> Dataset() {
  return moldata::ReadMolecules(kSourceDir / "data" / "qm7_hcno.mol",
                                moldata::DatasetFormat::kInternal);
}

// ------------------------------------------------------------------ 1

Outcome Equivariance() {
  const GCPNetConfig c = RandomHeads(3, 32, 8, 16, 4);
  const ParameterSet params = gcpnet::InitParameters(c, 101);
  Rng rng(1);
  std::uniform_int_distribution<int> size(2, 10), step(0, 1000);
  double worst_x = 0, worst_h = 0, worst_frame = 0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const int n = size(rng);
    const Eigen::MatrixX3d x = Centered(n, rng, 1.5);
    const Eigen::MatrixXd h = Gaussian(n, c.feature_dim, rng);
    const int t = step(rng);
    const Eigen::Matrix3d q = geometry::RandomRotation(1000 + k).rotation;
    const auto base = gcpnet::DenoiserForward(x, h, t, 1000, params, c);
    const auto turned = gcpnet::DenoiserForward(x * q.transpose(), h, t, 1000, params, c);
    const double sx = std::max(MaxAbs(base.eps_x), 1e-12);
    const double sh = std::max(MaxAbs(base.eps_h), 1e-12);
    worst_x = std::max(worst_x, MaxAbs(base.eps_x * q.transpose() - turned.eps_x) / sx);
    worst_h = std::max(worst_h, MaxAbs(base.eps_h - turned.eps_h) / sh);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const Eigen::Vector3d xi = x.row(i).transpose(), xj = x.row(j).transpose();
        const auto f = geometry::ComputeFrames(xi, xj);
        const auto g = geometry::ComputeFrames(q * xi, q * xj);
        worst_frame = std::max({worst_frame, (q * f.a - g.a).cwiseAbs().maxCoeff(),
                                (q * f.b - g.b).cwiseAbs().maxCoeff(),
                                (q * f.c - g.c).cwiseAbs().maxCoeff()});
      }
    }
  }
  return {worst_x < 1e-5 && worst_h < 1e-5 && worst_frame < 1e-10,
          "eps_x rel " + Sci(worst_x) + " (< 1e-5), eps_h rel " + Sci(worst_h) +
              " (< 1e-5), frames " + Sci(worst_frame) + " (< 1e-10) over 100 rotations"};
}

// ------------------------------------------------------------------ 2

Outcome Chirality() {
  // Tetrahedral center with four distinct substituents at distinct lengths.
  Eigen::MatrixX3d x(5, 3);
  x << 0, 0, 0, 1.0, 1.0, 1.0, 1.1, -1.1, -1.1, -1.2, 1.2, -1.2, -0.9, -0.9, 0.9;
  x *= 0.6;
  x.rowwise() -= x.colwise().mean();
  const std::vector<Element> e = {Element::kC, Element::kH, Element::kN, Element::kO,
                                  Element::kF};
  const MoleculeGraph mol = MoleculeGraph::FromElements("chiral", e, x);
  const Eigen::MatrixXd h = moldata::EncodeFeatures(mol, {});
  const Eigen::Matrix3d mirror = Eigen::Vector3d(-1, 1, 1).asDiagonal();

  auto gap = [&](bool frames) {
    GCPNetConfig c = RandomHeads(2, 16, 4, 8, 2);
    c.use_frames = frames;
    const ParameterSet params = gcpnet::InitParameters(c, 202);
    const auto a = gcpnet::DenoiserForward(x, h, 100, 1000, params, c);
    const auto b = gcpnet::DenoiserForward(x * mirror, h, 100, 1000, params, c);
    return MaxAbs(a.eps_h - b.eps_h);
  };
  const double with = gap(true), without = gap(false);
  return {with > 1e-4 && without < 1e-6,
          "mirror image changes eps_h by " + Sci(with) + " with frames (> 1e-4), " +
              Sci(without) + " without (< 1e-6)"};
}

// ------------------------------------------------------------------ 3

Outcome ZeroCog() {
  const auto schedule = NoiseSchedule::Build(1000, ScheduleKind::kPolynomial);
  Rng rng(3);
  double worst = 0;
  auto track = [&](const Eigen::MatrixX3d& z) {
    worst = std::max(worst, z.colwise().sum().norm() / (1e-6 * static_cast<double>(z.rows())));
  };
  for (int n : {2, 5, 9, 19}) {
    const Eigen::MatrixX3d x = Centered(n, rng, 1.5);
    const Eigen::MatrixXd h = Gaussian(n, moldata::kFeatureDim, rng);
    for (int t = 0; t <= 1000; ++t) {
      track(diffusion::ForwardNoise(x, h, t, schedule,
                                    diffusion::DrawNoise(n, moldata::kFeatureDim, rng))
                .z_x);
    }
  }
  const GCPNetConfig c = RandomHeads(1, 8, 4, 4, 2);
  const training::Model model{c, gcpnet::InitParameters(c, 303)};
  const training::GcpDenoiser denoiser(model, 1000, 8);
  diffusion::SampleOptions options;
  int steps = 0;
  options.observer = [&](int, std::span<const LatentState> zs) {
    ++steps;
    for (const auto& z : zs) track(z.z_x);
  };
  const int sizes[] = {1, 4, 11, 19};
  const auto out = diffusion::SampleBatch(sizes, schedule, denoiser, rng, options);
  for (const auto& m : out) track(m.coords());
  return {worst < 1.0 && steps == 1001,
          "max |sum z_x| / (1e-6 N) = " + Sci(worst) + " (< 1) over 4x1001 forward latents and " +
              std::to_string(steps) + " sampling steps"};
}

// ------------------------------------------------------------------ 4

Outcome ScheduleOracles() {
  double vp = 0, comp = 0;
  for (auto kind : {ScheduleKind::kPolynomial, ScheduleKind::kCosine}) {
    const auto s = NoiseSchedule::Build(1000, kind);
    for (int t = 0; t <= 1000; ++t) {
      vp = std::max(vp, std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0));
      for (int r = 0; r < t; r += std::max(1, t / 7)) {
        const double a = s.alpha_ts(t, r);
        comp = std::max({comp, std::abs(a * s.alpha(r) - s.alpha(t)),
                         std::abs(a * a * s.sigma2(r) + s.sigma2_ts(t, r) - s.sigma2(t))});
      }
    }
  }

  // Posterior mean by residuals of joint draws: z_s - mu(x, z_t) must have
  // zero mean and no correlation with z_t.
  const auto s = NoiseSchedule::Build(1000, ScheduleKind::kPolynomial);
  Rng rng(4);
  std::normal_distribution<double> g;
  double worst_z = 0;
  const int draws = 100000;
  const int pairs[][2] = {{1, 0}, {300, 299}, {600, 550}, {1000, 900}};
  for (const auto& p : pairs) {
    const int t = p[0], r = p[1];
    const double x = 0.7;
    double m = 0, mz = 0, sigma = 0;
    for (int k = 0; k < draws; ++k) {
      const double zs = s.alpha(r) * x + s.sigma(r) * g(rng);
      const double zt = s.alpha_ts(t, r) * zs + std::sqrt(s.sigma2_ts(t, r)) * g(rng);
      LatentState z{Eigen::MatrixX3d::Zero(1, 3), Eigen::MatrixXd::Constant(1, 1, zt), t};
      const auto post = diffusion::ComputePosterior(
          Eigen::MatrixX3d::Zero(1, 3), Eigen::MatrixXd::Constant(1, 1, x), z, r, s);
      const double e = zs - post.mu_h(0, 0);
      m += e;
      mz += e * zt;
      sigma = post.sigma;
    }
    const double se = sigma / std::sqrt(static_cast<double>(draws));
    worst_z = std::max({worst_z, std::abs(m / draws) / se,
                        std::abs(mz / draws) / (se * std::sqrt(1 + x * x))});
  }

  // Weighted diffusion term against the Gaussian KL built from the table.
  double kl_err = 0;
  const auto c = NoiseSchedule::Build(1000, ScheduleKind::kCosine);
  for (int t : {1, 2, 10, 250, 500, 999, 1000}) {
    const double x = g(rng), e = g(rng), e_hat = g(rng);
    const int r = t - 1;
    const double at = c.alpha(t), st2 = c.sigma2(t), ar = c.alpha(r), sr2 = c.sigma2(r);
    const double ats = at / ar, sts2 = st2 - ats * ats * sr2;
    const double zt = at * x + std::sqrt(st2) * e;
    const double x_hat = (zt - std::sqrt(st2) * e_hat) / at;
    auto mu = [&](double clean) { return ats * sr2 / st2 * zt + ar * sts2 / st2 * clean; };
    const double var = sts2 * sr2 / st2;
    const double kl = (mu(x) - mu(x_hat)) * (mu(x) - mu(x_hat)) / (2 * var);
    const Noise eps{Eigen::MatrixX3d::Zero(1, 3), Eigen::MatrixXd::Constant(1, 1, e)};
    const Noise eps_hat{Eigen::MatrixX3d::Zero(1, 3), Eigen::MatrixXd::Constant(1, 1, e_hat)};
    const double term = diffusion::DiffusionTerm(eps, eps_hat, t, c, diffusion::Weighting::kTrue);
    kl_err = std::max(kl_err, std::abs(term - kl) / std::max(1.0, kl));
  }
  return {vp < 1e-10 && comp < 1e-10 && worst_z < 3.0 && kl_err < 1e-8,
          "VP " + Sci(vp) + ", composition " + Sci(comp) + " (< 1e-10); posterior residual " +
              Sci(worst_z) + " SE (< 3) at 1e5 draws; KL " + Sci(kl_err) + " (< 1e-8)"};
}

// ------------------------------------------------------------------ 5

Outcome Gradients() {
  const GCPNetConfig c = RandomHeads(2, 6, 3, 4, 2);
  const training::Model model{c, gcpnet::InitParameters(c, 505)};
  const auto schedule = NoiseSchedule::Build(1000, ScheduleKind::kPolynomial);
  auto data = Dataset();
  data.resize(2, data.front());
  Rng rng(5);
  auto examples = diffusion::DrawTrainingExamples(data, schedule, {}, rng);
  const auto report = training::CheckGradients(model, examples, schedule);
  return {report.passed && report.entries.size() == model.params.size(),
          "max rel error " + Sci(report.max_rel_error) + " (< 1e-4) at " + report.worst_path +
              " over " + std::to_string(report.entries.size()) + " tensors"};
}

// ------------------------------------------------------------------ 6

Outcome ZerothLikelihood() {
  double partition = 0;
  for (double z0 : {0.3, -2.7, 6.49, 0.5, 9.01}) {
    for (double sigma : {0.01, 0.05, 0.7, 2.0}) {
      double total = 0;
      for (int h = -80; h <= 80; ++h) {
        total += std::exp(diffusion::LogIntegerLikelihood(h, z0, sigma));
      }
      partition = std::max(partition, std::abs(total - 1.0));
    }
  }
  Rng rng(6);
  double norm = 0;
  for (int k = 0; k < 1000; ++k) {
    const Eigen::VectorXd z0 = 2.0 * Gaussian(moldata::kNumAtomTypes, 1, rng);
    const double sigma = 0.05 + 0.5 * std::abs(z0(0));
    const auto c = diffusion::CategoricalZerothLikelihood(k % moldata::kNumAtomTypes, z0, sigma);
    norm = std::max(norm, std::abs(c.probs.sum() - 1.0));
  }
  const auto s = NoiseSchedule::Build(1000, ScheduleKind::kPolynomial);
  const moldata::FeatureScaler scaler;
  double lowest = 1.0;
  auto data = Dataset();
  data.resize(200, data.front());
  for (const auto& mol : data) {
    const Eigen::MatrixXd h = moldata::EncodeFeatures(mol, scaler);
    const Eigen::MatrixXd z0 =
        s.alpha(0) * h + s.sigma(0) * Gaussian(h.rows(), h.cols(), rng);
    for (const Eigen::MatrixXd* z : {&h, &z0}) {
      lowest = std::min(
          {lowest,
           diffusion::ZerothLikelihoodInteger(mol.charges(), *z, s, scaler).array().exp().minCoeff(),
           diffusion::ZerothLikelihoodCategorical(mol.atom_types(), *z, s, scaler)
               .array()
               .exp()
               .minCoeff()});
    }
  }
  return {partition < 1e-9 && norm < 1e-12 && lowest > 0.99,
          "integer partition " + Sci(partition) + " (< 1e-9), categorical sum " + Sci(norm) +
              " (< 1e-12), min clean p " + std::to_string(lowest) + " (> 0.99)"};
}

// ------------------------------------------------------------------ 7

// Frozen on the first 1000 molecules of data/qm7_hcno.mol with the default
// bond and valence tables (gcdm 0.1.0, 2026-10-16). The file hashes pin the
// inputs.
constexpr const char* kFrozenDataHash = "5c14876111c2f131";
constexpr const char* kFrozenBondHash = "422af41078e5997d";
constexpr const char* kFrozenValenceHash = "ec246dcb7146a21e";
constexpr std::size_t kFrozenStableAtoms = 13741;
constexpr std::size_t kFrozenAtoms = 13805;
constexpr std::size_t kFrozenStableMolecules = 980;
constexpr std::size_t kFrozenValid = 980;

std::string FileHash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return HexDigest(Fnv1a(s.str()));
}

Outcome GroundTruthMetrics() {
  auto data = Dataset();
  data.resize(1000, data.front());
  const fs::path dir = evaluate::DefaultDataDir();
  const evaluate::EvaluationConfig config{evaluate::BondTable::LoadDefault(),
                                          evaluate::ValenceTable::LoadDefault(), 1};
  std::size_t atoms = 0, stable_atoms = 0, stable_mols = 0;
  for (const auto& mol : data) {
    const auto bonds = evaluate::InferBonds(mol, config.bonds);
    const int stable = evaluate::CountStableAtoms(mol, bonds, config.valences);
    atoms += static_cast<std::size_t>(mol.num_atoms());
    stable_atoms += static_cast<std::size_t>(stable);
    stable_mols += stable == mol.num_atoms() ? 1 : 0;
  }
  const auto report = evaluate::EvaluateSamples(data, config);
  const auto validity =
      evaluate::ValidityAndUniqueness(data, config.bonds, config.valences);

  const bool atom_ok = std::abs(report.atom_stability.value - 0.990) <= 0.010;
  const bool mol_ok = std::abs(report.mol_stability.value - 0.952) <= 0.020;
  const bool valid_ok = std::abs(report.validity.value - 0.977) <= 0.020;
  const bool frozen_ok =
      FileHash(kSourceDir / "data" / "qm7_hcno.mol") == kFrozenDataHash &&
      FileHash(dir / "bond_lengths.tsv") == kFrozenBondHash &&
      FileHash(dir / "valences.tsv") == kFrozenValenceHash && atoms == kFrozenAtoms &&
      stable_atoms == kFrozenStableAtoms && stable_mols == kFrozenStableMolecules &&
      validity.num_valid == kFrozenValid;
  auto mark = [](bool ok) { return ok ? "" : " OUT OF BAND"; };
  std::ostringstream d;
  d << "1000 reference molecules: atom stability " << Pct(report.atom_stability.value)
    << " (99.0 +/- 1.0)" << mark(atom_ok) << ", molecule stability "
    << Pct(report.mol_stability.value) << " (95.2 +/- 2.0)" << mark(mol_ok) << ", validity "
    << Pct(report.validity.value) << " (97.7 +/- 2.0)" << mark(valid_ok) << "; frozen counts "
    << stable_atoms << "/" << atoms << " atoms, " << stable_mols << " stable, "
    << validity.num_valid << " valid" << (frozen_ok ? " match" : " DIFFER");
  return {atom_ok && mol_ok && valid_ok && frozen_ok, d.str()};
}

// ------------------------------------------------------------------ 8

double AtomStability(std::span<const MoleculeGraph> mols) {
  const evaluate::EvaluationConfig config{evaluate::BondTable::LoadDefault(),
                                          evaluate::ValenceTable::LoadDefault(), 1};
  return evaluate::EvaluateSamples(mols, config).atom_stability.value;
}

bool AllFinite(std::span<const MoleculeGraph> mols) {
  for (const auto& m : mols) {
    if (!m.coords().allFinite() || !m.atom_types().allFinite()) return false;
  }
  return true;
}

std::vector<MoleculeGraph> ReadSamples(const fs::path& dir) {
  return moldata::ReadMolecules(dir / "samples.mol", moldata::DatasetFormat::kInternal);
}

struct LossLog {
  std::int64_t last_step = 0;
  double first_val = NAN;
  double last_val = NAN;
};

LossLog ReadLossLog(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  LossLog log;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::int64_t step;
    std::string cols[5];
    row >> step >> cols[0] >> cols[1] >> cols[2] >> cols[3] >> cols[4];
    log.last_step = step;
    if (cols[4] != "nan") {
      const double v = std::stod(cols[4]);
      if (std::isnan(log.first_val)) log.first_val = v;
      log.last_val = v;
    }
  }
  return log;
}

Outcome Overfit() {
  const auto data = Dataset();
  const std::vector<MoleculeGraph> one(64, data.front());
  GCPNetConfig c;
  c.num_layers = 4;
  c.node_scalars = 64;
  c.node_vectors = 16;
  c.edge_scalars = 32;
  c.edge_vectors = 8;
  training::Model model{c, gcpnet::InitParameters(c, 808)};
  training::AdamWConfig adam;
  adam.learning_rate = 2e-3;
  auto opt = training::InitOptimizer(model.params, adam, 64);
  const auto schedule = NoiseSchedule::Build(500, ScheduleKind::kPolynomial);
  Rng probe_rng(80);
  std::vector<diffusion::NoisedExample> probe;
  for (int k = 0; k < 4; ++k) {
    auto batch = diffusion::DrawTrainingExamples(one, schedule, {}, probe_rng);
    probe.insert(probe.end(), batch.begin(), batch.end());
  }
  const double before = training::EvaluateLt(probe, model, schedule.T());
  Rng rng(81);
  for (int step = 0; step < 500; ++step) training::TrainStep(one, model, opt, schedule, {}, rng);
  const double after = training::EvaluateLt(probe, model, schedule.T());
  return {after < 0.1 * before, "single molecule l_t " + Sci(before) + " -> " + Sci(after) +
                                    " after 500 steps (< 10%)"};
}

Outcome DeskRun(const fs::path& desk_dir) {
  using cli::Command;
  const auto start = std::chrono::steady_clock::now();
  cli::RunConfig config = cli::RunConfig::Load(kSourceDir / "configs" / "desk.ini");
  config.output_dir = fs::absolute(desk_dir);
  config.training.resume.clear();
  config.Validate(Command::kTrain);
  const std::string hash = cli::ConfigHash(config);

  std::ostringstream quiet;
  bool reused = false;
  {
    std::ifstream prov(desk_dir / "provenance_train.txt");
    std::stringstream text;
    text << prov.rdbuf();
    reused = fs::exists(config.CheckpointPath()) &&
             text.str().find("config_hash = " + hash) != std::string::npos;
  }
  if (!reused) cli::Run(Command::kTrain, config, quiet);
  const LossLog log = ReadLossLog(desk_dir / "loss_log.tsv");

  // Trained samples.
  config.Validate(Command::kSample);
  cli::Run(Command::kSample, config, quiet);
  const auto trained = ReadSamples(desk_dir);

  // Untrained baseline: same checkpoint with the initial weights.
  training::Checkpoint ckpt = training::LoadCheckpoint(config.CheckpointPath());
  ckpt.model.params = cli::InitialParameters(config);
  cli::RunConfig base = config;
  base.output_dir = desk_dir / "untrained";
  fs::create_directories(base.output_dir);
  base.sampling.checkpoint = base.output_dir / "untrained.ckpt";
  training::SaveCheckpoint(ckpt, base.sampling.checkpoint);
  cli::Run(Command::kSample, base, quiet);
  const auto untrained = ReadSamples(base.output_dir);

  const double a_trained = AtomStability(trained), a_untrained = AtomStability(untrained);
  const double drop = 1.0 - log.last_val / log.first_val;
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  const bool pass = log.last_step >= 2000 && drop >= 0.5 && trained.size() == 100 &&
                    AllFinite(trained) && a_trained > a_untrained && minutes <= 120.0;
  std::ostringstream d;
  d << (reused ? "reused " : "trained ") << log.last_step << " steps; val l_t "
    << Sci(log.first_val) << " -> " << Sci(log.last_val) << " (-" << Pct(drop)
    << ", >= 50%); " << trained.size() << " samples " << (AllFinite(trained) ? "finite" : "NON-FINITE")
    << "; atom stability " << Pct(a_trained) << " vs untrained " << Pct(a_untrained) << "; "
    << std::fixed << std::setprecision(1) << minutes << " min";
  return {pass, d.str()};
}

// ------------------------------------------------------------------ 9

Outcome Ablations() {
  std::map<std::string, cli::RunConfig> variants;
  for (const char* name : {"full", "no_frames", "no_sma"}) {
    variants[name] = cli::RunConfig::Load(kSourceDir / "configs" / (std::string(name) + ".ini"));
    variants[name].Validate(cli::Command::kTrain);
  }
  const auto& full = variants["full"].model;
  const auto& nf = variants["no_frames"].model;
  const auto& ns = variants["no_sma"].model;
  const bool flags = full.use_frames && full.use_sma && !nf.use_frames && nf.use_sma &&
                     ns.use_frames && !ns.use_sma;

  Rng rng(9);
  const int n = 7;
  const Eigen::MatrixX3d x = Centered(n, rng, 1.5);
  const Eigen::MatrixXd h = Gaussian(n, full.feature_dim, rng);
  bool finite = true;
  for (const auto& [name, v] : variants) {
    GCPNetConfig c = v.model;
    c.zero_init_heads = false;
    const auto out = gcpnet::DenoiserForward(x, h, 250, v.schedule.T,
                                             gcpnet::InitParameters(c, 909), c);
    finite = finite && out.eps_x.allFinite() && out.eps_h.allFinite();
  }

  GCPNetConfig on = full, off = ns;
  on.zero_init_heads = off.zero_init_heads = false;
  ParameterSet gated = gcpnet::InitParameters(on, 910);
  ParameterSet plain;
  for (std::size_t i = 0; i < gated.size(); ++i) {
    if (gated.name(i).find("/sma/") != std::string::npos) {
      if (gated.name(i).ends_with("/w")) gated.at(i).setZero();
      if (gated.name(i).ends_with("/b")) gated.at(i).setConstant(1e4);
    } else {
      plain.Add(gated.name(i), gated.at(i));
    }
  }
  const auto a = gcpnet::DenoiserForward(x, h, 250, 1000, gated, on);
  const auto b = gcpnet::DenoiserForward(x, h, 250, 1000, plain, off);
  const double diff = std::max(MaxAbs(a.eps_x - b.eps_x), MaxAbs(a.eps_h - b.eps_h));
  return {flags && finite && diff == 0.0,
          std::string("full / no_frames / no_sma built from configs") +
              (flags ? "" : " WITH WRONG FLAGS") + (finite ? "" : ", NON-FINITE output") +
              "; w/o SMA vs open gate max diff " + Sci(diff) + " (== 0)"};
}

}  // namespace
}  // namespace gcdm

int main(int argc, char** argv) {
  CLI::App app{"GCDM acceptance suite"};
  std::vector<int> only, expect_fail;
  std::string desk_dir = "acceptance_desk";
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail");
  app.add_option("--desk-dir", desk_dir, "Working directory for the desk-scale run");
  CLI11_PARSE(app, argc, argv);

  using gcdm::Outcome;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"equivariance", gcdm::Equivariance},
      {"chirality", gcdm::Chirality},
      {"zero CoG", gcdm::ZeroCog},
      {"schedule and posterior oracles", gcdm::ScheduleOracles},
      {"gradient check", gcdm::Gradients},
      {"zeroth likelihood", gcdm::ZerothLikelihood},
      {"ground-truth metrics", gcdm::GroundTruthMetrics},
      {"learning smoke test",
       [&] {
         const Outcome o = gcdm::Overfit();
         const Outcome d = gcdm::DeskRun(desk_dir);
         return Outcome{o.pass && d.pass, o.detail + "; desk: " + d.detail};
       }},
      {"ablation plumbing", gcdm::Ablations},
  };
  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  bool ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool known = expected.count(id) != 0;
    ok = ok && (o.pass != known);
    std::printf("%s [%d] %s: %s (%.1f s)%s\n", o.pass ? "PASS" : "FAIL", id,
                criteria[i].first.c_str(), o.detail.c_str(), secs,
                known ? (o.pass ? " [expected failure did not occur]" : " [known failure]") : "");
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}
