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

#include "gcdm/commands.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <vector>

#include "gcdm/diffusion.h"
#include "gcdm/errors.h"
#include "gcdm/evaluate.h"
#include "gcdm/hash.h"
#include "gcdm/moldata.h"
#include "gcdm/training.h"

#ifndef GCDM_VERSION
#define GCDM_VERSION "unknown"
#endif

namespace gcdm::cli {
namespace {

namespace fs = std::filesystem;
using diffusion::Rng;
using moldata::MoleculeGraph;

// Independent streams derived from the run seed.
constexpr std::uint64_t kInitStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kValidationStream = 0xc2b2ae3d27d4eb4fULL;
constexpr std::uint64_t kNllStream = 0x165667b19e3779f9ULL;

void WriteText(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string Fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << std::fixed << v;
  return s.str();
}

std::string Sci(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << std::scientific << v;
  return s.str();
}

std::vector<MoleculeGraph> ReadDatasetMolecules(const DataConfig& data) {
  auto mols = moldata::ReadMolecules(data.path, data.format);
  if (data.max_molecules > 0 &&
      mols.size() > static_cast<std::size_t>(data.max_molecules)) {
    mols.erase(mols.begin() + static_cast<std::ptrdiff_t>(data.max_molecules), mols.end());
  }
  if (mols.empty()) throw Error("dataset is empty: " + data.path.string());
  return mols;
}

moldata::DatasetSplit LoadSplit(const DataConfig& data) {
  moldata::SplitOptions options;
  options.seed = data.split_seed;
  if (!data.manifest.empty()) options.manifest = data.manifest;
  if (data.train_count >= 0) {
    options.counts = std::array<std::size_t, 2>{
        static_cast<std::size_t>(data.train_count),
        static_cast<std::size_t>(data.val_count)};
  }
  return moldata::SplitMolecules(ReadDatasetMolecules(data), options);
}

const std::vector<MoleculeGraph>& SplitPart(const moldata::DatasetSplit& split,
                                            const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  return split.test;
}

std::map<int, std::int64_t> SizeCounts(std::span<const MoleculeGraph> mols) {
  std::map<int, std::int64_t> counts;
  for (const auto& m : mols) ++counts[m.num_atoms()];
  return counts;
}

evaluate::EvaluationConfig MakeEvaluationConfig(const EvalConfig& cfg) {
  return evaluate::EvaluationConfig{
      cfg.bond_table.empty() ? evaluate::BondTable::LoadDefault()
                             : evaluate::BondTable::Load(cfg.bond_table),
      cfg.valence_table.empty() ? evaluate::ValenceTable::LoadDefault()
                                : evaluate::ValenceTable::Load(cfg.valence_table),
      cfg.num_batches};
}

moldata::DatasetFormat GuessFormat(const fs::path& path) {
  if (fs::is_directory(path) || path.extension() == ".xyz") {
    return moldata::DatasetFormat::kXyzDir;
  }
  if (path.extension() == ".sdf") return moldata::DatasetFormat::kSdf;
  return moldata::DatasetFormat::kInternal;
}

struct SampleRun {
  std::vector<MoleculeGraph> molecules;
  std::string checkpoint_hash;
  training::ScheduleDescriptor schedule;
};

SampleRun GenerateSamples(const RunConfig& config, std::ostream& log) {
  const fs::path ckpt_path = config.CheckpointPath();
  const training::Checkpoint ckpt = training::LoadCheckpoint(ckpt_path);
  if (ckpt.size_counts.empty()) {
    throw CheckpointError("checkpoint has no size distribution: " + ckpt_path.string());
  }
  const diffusion::NoiseSchedule schedule = ckpt.schedule.Build();
  const moldata::SizeDistribution sizes = training::SizesFromCounts(ckpt.size_counts);
  const training::GcpDenoiser denoiser(ckpt.model, schedule.T(),
                                       config.sampling.batch_size);
  diffusion::SampleOptions options;
  options.feature_dim = ckpt.model.config.feature_dim;
  options.scaler = ckpt.scaler;

  Rng rng(config.seed);
  SampleRun run{{}, training::CheckpointHash(ckpt_path), ckpt.schedule};
  run.molecules.reserve(static_cast<std::size_t>(config.sampling.count));
  while (static_cast<int>(run.molecules.size()) < config.sampling.count) {
    const int n = std::min(config.sampling.batch_size,
                           config.sampling.count - static_cast<int>(run.molecules.size()));
    std::vector<int> batch_sizes(static_cast<std::size_t>(n));
    for (int& s : batch_sizes) s = diffusion::SampleNumAtoms(sizes, rng);
    auto batch = diffusion::SampleBatch(batch_sizes, schedule, denoiser, rng, options);
    for (auto& mol : batch) {
      const std::string id = "sample_" + std::to_string(run.molecules.size());
      run.molecules.emplace_back(id, mol.coords(), mol.atom_types(), mol.charges());
    }
    log << "sampled " << run.molecules.size() << "/" << config.sampling.count << '\n';
  }
  return run;
}

void WriteSamples(const SampleRun& run, const RunConfig& config) {
  const fs::path& out = config.output_dir;
  moldata::WriteInternal(out / "samples.mol", run.molecules);
  moldata::WriteXyz(out / "samples.xyz", run.molecules);
  std::ostringstream meta;
  meta << "count = " << run.molecules.size() << '\n'
       << "seed = " << config.seed << '\n'
       << "schedule.kind = " << diffusion::ScheduleKindName(run.schedule.kind) << '\n'
       << "schedule.T = " << run.schedule.T << '\n'
       << "schedule.precision = " << Sci(run.schedule.precision) << '\n'
       << "checkpoint_hash = " << run.checkpoint_hash << '\n'
       << "version = " << Version() << '\n';
  WriteText(out / "samples_meta.txt", meta.str());
}

// ---------------------------------------------------------------- inspect

void RunInspect(const RunConfig& config, std::ostream& log) {
  const auto all = ReadDatasetMolecules(config.data);
  const auto split = LoadSplit(config.data);
  const auto dist = moldata::ComputeSizeDistribution(all);

  log << "molecules: " << all.size() << " (train " << split.train.size() << ", val "
      << split.val.size() << ", test " << split.test.size() << ")\n";
  std::map<moldata::Element, std::size_t> elements;
  std::size_t atoms = 0;
  for (const auto& m : all) {
    for (auto e : m.elements()) ++elements[e];
    atoms += static_cast<std::size_t>(m.num_atoms());
  }
  log << "atoms: " << atoms << '\n';
  for (const auto& [e, count] : elements) {
    log << "  " << moldata::Symbol(e) << ": " << count << '\n';
  }

  std::ostringstream size_tsv;
  size_tsv << "N\tcount\tprob\n";
  log << "size distribution p(N):\n";
  for (const auto& [n, p] : dist.probs) {
    size_tsv << n << '\t' << dist.counts.at(n) << '\t' << Sci(p) << '\n';
    log << "  " << n << ": " << Fixed(p) << '\n';
  }
  WriteText(config.output_dir / "size_distribution.tsv", size_tsv.str());

  const auto schedule = config.schedule.Build();
  std::ostringstream snr_tsv;
  snr_tsv << "t\talpha2\tsigma2\tsnr\tlog_snr\n";
  for (int t = 0; t <= schedule.T(); ++t) {
    snr_tsv << t << '\t' << Sci(schedule.alpha2(t)) << '\t' << Sci(schedule.sigma2(t))
            << '\t' << Sci(schedule.snr(t)) << '\t' << Sci(std::log(schedule.snr(t)))
            << '\n';
  }
  WriteText(config.output_dir / "snr.tsv", snr_tsv.str());
  log << "schedule " << diffusion::ScheduleKindName(schedule.kind()) << ", T = "
      << schedule.T() << ":\n  t\talpha2\tlog_snr\n";
  const int stride = std::max(1, schedule.T() / 10);
  for (int t = 0; t <= schedule.T(); t += stride) {
    log << "  " << t << '\t' << Sci(schedule.alpha2(t)) << '\t'
        << Fixed(std::log(schedule.snr(t)), 4) << '\n';
  }
}

// ------------------------------------------------------------------ train

void RunTrain(const RunConfig& config, std::ostream& log) {
  const auto split = LoadSplit(config.data);
  if (split.train.empty()) throw Error("training split is empty");
  if (config.data.manifest.empty()) {
    WriteText(config.output_dir / "manifest.txt", split.ManifestText());
  }
  const std::vector<MoleculeGraph> val(
      split.val.begin(),
      split.val.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(
                              split.val.size(),
                              static_cast<std::size_t>(config.training.val_molecules))));
  const bool validate = config.training.validate_every > 0 && !val.empty();
  if (config.training.validate_every > 0 && val.empty()) {
    log << "warning: validation split is empty, validation disabled\n";
  }

  training::Checkpoint ckpt;
  Rng rng(config.seed);
  if (!config.training.resume.empty()) {
    ckpt = training::LoadCheckpoint(config.training.resume);
    if (ckpt.schedule.kind != config.schedule.kind || ckpt.schedule.T != config.schedule.T ||
        ckpt.schedule.precision != config.schedule.precision) {
      throw CheckpointError("resume checkpoint was trained with a different schedule");
    }
    ckpt.model.params.CheckCompatible(
        gcpnet::InitParameters(config.model, 0));
    ckpt.model.config = config.model;
    ckpt.optimizer.config = config.optimizer;
    ckpt.optimizer.batch_size = config.batch_size;
    training::RestoreRng(rng, ckpt.rng_state);
    log << "resumed from " << config.training.resume.string() << " at step "
        << ckpt.optimizer.step << '\n';
  } else {
    ckpt.model = training::Model{config.model, InitialParameters(config)};
    ckpt.optimizer =
        training::InitOptimizer(ckpt.model.params, config.optimizer, config.batch_size);
  }
  ckpt.schedule = config.schedule;
  ckpt.scaler = config.features;
  ckpt.size_counts = SizeCounts(split.train);

  const auto schedule = config.schedule.Build();
  const fs::path ckpt_path = config.output_dir / "checkpoint.ckpt";
  const fs::path log_path = config.output_dir / "loss_log.tsv";
  const bool append = !config.training.resume.empty() && fs::exists(log_path);
  std::ofstream loss_log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!loss_log) throw Error("cannot write " + log_path.string());
  if (!append) loss_log << "step\tl_t\tl_0_x\tl_0_h\tl_base\tval_l_t\n";

  auto save = [&] {
    ckpt.rng_state = training::RngState(rng);
    training::SaveCheckpoint(ckpt, ckpt_path);
  };
  auto validation = [&] {
    return training::ValidationLoss(val, ckpt.model, schedule, config.features,
                                    config.seed ^ kValidationStream);
  };

  double best_val = std::numeric_limits<double>::infinity();
  int bad_validations = 0;
  if (validate) {
    best_val = validation();
    log << "initial validation l_t " << Fixed(best_val) << '\n';
    loss_log << ckpt.optimizer.step << "\tnan\tnan\tnan\tnan\t" << Sci(best_val) << '\n';
  }

  diffusion::LossBreakdown window{};
  int window_steps = 0;
  const std::int64_t last = ckpt.optimizer.step + config.training.steps;
  while (ckpt.optimizer.step < last) {
    const auto batch = training::DrawBatch(split.train, config.batch_size, rng);
    const auto loss = training::TrainStep(batch, ckpt.model, ckpt.optimizer, schedule,
                                          config.features, rng);
    window.l_t += loss.l_t;
    window.l_0_x += loss.l_0_x;
    window.l_0_h += loss.l_0_h;
    window.l_base += loss.l_base;
    ++window_steps;
    const std::int64_t step = ckpt.optimizer.step;

    const bool log_now = step % config.training.log_every == 0 || step == last;
    const bool val_now = validate && step % config.training.validate_every == 0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (val_now) val_loss = validation();
    if (log_now || val_now) {
      const double k = 1.0 / window_steps;
      loss_log << step << '\t' << Sci(window.l_t * k) << '\t' << Sci(window.l_0_x * k)
               << '\t' << Sci(window.l_0_h * k) << '\t' << Sci(window.l_base * k) << '\t'
               << (val_now ? Sci(val_loss) : std::string("nan")) << '\n';
      loss_log.flush();
      log << "step " << step << " l_t " << Fixed(window.l_t * k);
      if (val_now) log << " val_l_t " << Fixed(val_loss);
      log << '\n';
      window = {};
      window_steps = 0;
    }
    if (config.training.checkpoint_every > 0 &&
        step % config.training.checkpoint_every == 0) {
      save();
    }
    if (val_now) {
      if (val_loss < best_val) {
        best_val = val_loss;
        bad_validations = 0;
      } else if (config.training.patience > 0 &&
                 ++bad_validations >= config.training.patience) {
        log << "early stop at step " << step << " (no improvement in "
            << bad_validations << " validations)\n";
        break;
      }
    }
  }
  save();
  log << "wrote " << ckpt_path.string() << '\n';
}

// ----------------------------------------------------------------- sample

void RunSample(const RunConfig& config, std::ostream& log) {
  const SampleRun run = GenerateSamples(config, log);
  WriteSamples(run, config);
  log << "wrote " << run.molecules.size() << " molecules to "
      << (config.output_dir / "samples.mol").string() << '\n';
}

// ------------------------------------------------------------------- eval

void RunEval(const RunConfig& config, std::ostream& log) {
  const auto eval_config = MakeEvaluationConfig(config.evaluation);
  std::vector<MoleculeGraph> molecules;
  std::map<std::string, std::string> provenance;
  provenance["config_hash"] = ConfigHash(config);
  provenance["seed"] = std::to_string(config.seed);
  provenance["version"] = std::string(Version());

  std::optional<moldata::DatasetSplit> split;
  auto dataset = [&]() -> const moldata::DatasetSplit& {
    if (!split) split = LoadSplit(config.data);
    return *split;
  };

  switch (config.evaluation.source) {
    case EvalSource::kCheckpoint: {
      SampleRun run = GenerateSamples(config, log);
      WriteSamples(run, config);
      provenance["source"] = "checkpoint";
      provenance["checkpoint_hash"] = run.checkpoint_hash;
      molecules = std::move(run.molecules);
      break;
    }
    case EvalSource::kSamples:
      molecules = moldata::ReadMolecules(config.evaluation.samples,
                                         GuessFormat(config.evaluation.samples));
      provenance["source"] = "samples:" + config.evaluation.samples.string();
      break;
    case EvalSource::kDataset:
      molecules = SplitPart(dataset(), config.evaluation.split);
      provenance["source"] = "dataset:" + config.evaluation.split;
      break;
  }
  if (molecules.empty()) throw Error("nothing to evaluate");

  evaluate::GenerationReport report = evaluate::EvaluateSamples(molecules, eval_config);

  if (config.evaluation.nll_molecules > 0) {
    const auto& part = SplitPart(dataset(), config.evaluation.split);
    if (part.empty()) throw Error("split '" + config.evaluation.split + "' is empty");
    const fs::path ckpt_path = config.CheckpointPath();
    const training::Checkpoint ckpt = training::LoadCheckpoint(ckpt_path);
    const auto schedule = ckpt.schedule.Build();
    const training::GcpDenoiser denoiser(ckpt.model, schedule.T());
    Rng rng(config.seed ^ kNllStream);
    const std::size_t n =
        std::min(part.size(), static_cast<std::size_t>(config.evaluation.nll_molecules));
    std::vector<double> values;
    values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      values.push_back(diffusion::NllBound(part[i], schedule, denoiser, ckpt.scaler,
                                           config.evaluation.nll_t_samples, rng)
                           .total());
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    report.nll_bound = evaluate::Summarize(mean, values);
    provenance["nll_split"] = config.evaluation.split;
    provenance["nll_molecules"] = std::to_string(n);
    provenance["checkpoint_hash"] = training::CheckpointHash(ckpt_path);
  }

  report.provenance = provenance;
  WriteText(config.output_dir / "report.txt", report.ToText());
  WriteText(config.output_dir / "report.kv", report.ToKeyValue());
  log << report.ToText();
}

}  // namespace

std::optional<Command> ParseCommand(std::string_view name) {
  if (name == "train") return Command::kTrain;
  if (name == "sample") return Command::kSample;
  if (name == "eval") return Command::kEval;
  if (name == "inspect") return Command::kInspect;
  return std::nullopt;
}

std::string_view CommandName(Command command) {
  switch (command) {
    case Command::kTrain: return "train";
    case Command::kSample: return "sample";
    case Command::kEval: return "eval";
    case Command::kInspect: break;
  }
  return "inspect";
}

std::string_view Version() { return GCDM_VERSION; }

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    throw Error("output directory " + dir.string() +
                " is in use by another run (remove " + path_.string() +
                " if that run is gone)");
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

ParameterSet InitialParameters(const RunConfig& config) {
  return gcpnet::InitParameters(config.model, config.seed ^ kInitStream);
}

std::string ConfigHash(const RunConfig& config) {
  return HexDigest(Fnv1a(config.Canonical()));
}

std::string ProvenanceText(Command command, const RunConfig& config) {
  std::ostringstream out;
  out << "command = " << CommandName(command) << '\n'
      << "version = " << Version() << '\n'
      << "seed = " << config.seed << '\n'
      << "config_hash = " << ConfigHash(config) << '\n'
      << '\n'
      << config.Canonical();
  return out.str();
}

void Run(Command command, const RunConfig& config, std::ostream& log) {
  OutputLock lock(config.output_dir);
  WriteText(config.output_dir / ("provenance_" + std::string(CommandName(command)) + ".txt"),
            ProvenanceText(command, config));
  switch (command) {
    case Command::kTrain: RunTrain(config, log); break;
    case Command::kSample: RunSample(config, log); break;
    case Command::kEval: RunEval(config, log); break;
    case Command::kInspect: RunInspect(config, log); break;
  }
}

}  // namespace gcdm::cli
