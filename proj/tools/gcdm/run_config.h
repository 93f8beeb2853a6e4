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

// Declarative run configuration: INI-style sections of key = value pairs,
// plus command-line overrides.

#ifndef GCDM_TOOLS_RUN_CONFIG_H_
#define GCDM_TOOLS_RUN_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gcdm/gcpnet.h"
#include "gcdm/moldata.h"
#include "gcdm/training.h"

namespace gcdm::cli {

enum class Command { kTrain, kSample, kEval, kInspect };

struct DataConfig {
  std::filesystem::path path;
  moldata::DatasetFormat format = moldata::DatasetFormat::kInternal;
  std::filesystem::path manifest;  // empty: seeded split
  std::uint64_t split_seed = 0;
  std::int64_t train_count = -1;   // -1: proportional split
  std::int64_t val_count = -1;
  // Keep only the first N molecules (after reading) when > 0.
  std::int64_t max_molecules = 0;
};

struct TrainConfig {
  int steps = 1000;
  int log_every = 50;
  int validate_every = 0;  // 0 disables validation
  int val_molecules = 256;
  int checkpoint_every = 0;
  // Stop after this many validations without improvement; 0 disables.
  int patience = 0;
  std::filesystem::path resume;
};

struct SampleConfig {
  int count = 100;
  int batch_size = 16;
  std::filesystem::path checkpoint;  // empty: <output>/checkpoint.ckpt
};

enum class EvalSource { kCheckpoint, kSamples, kDataset };

struct EvalConfig {
  EvalSource source = EvalSource::kCheckpoint;
  std::filesystem::path samples;  // for source = samples
  std::string split = "test";     // for source = dataset
  std::filesystem::path bond_table;
  std::filesystem::path valence_table;
  int num_batches = 1;
  int nll_molecules = 0;
  int nll_t_samples = 1;
};

struct RunConfig {
  DataConfig data;
  gcpnet::GCPNetConfig model;
  training::ScheduleDescriptor schedule;
  moldata::FeatureScaler features;
  training::AdamWConfig optimizer;
  int batch_size = 64;
  TrainConfig training;
  SampleConfig sampling;
  EvalConfig evaluation;
  std::filesystem::path output_dir = "gcdm_out";
  std::uint64_t seed = 0;

  // Parses `text`; relative paths resolve against `base_dir`. Throws
  // ConfigError naming the line and key on any problem, including unknown
  // sections or keys.
  static RunConfig Parse(const std::string& text, const std::string& source,
                         const std::filesystem::path& base_dir);
  static RunConfig Load(const std::filesystem::path& path);

  // "section.key=value"; relative paths resolve against the working
  // directory.
  void ApplyOverride(const std::string& assignment);

  // Checks every field and the inputs the command needs.
  void Validate(Command command) const;

  // Every key with its resolved value, one "section.key = value" per line in
  // a fixed order.
  std::string Canonical() const;

  std::filesystem::path CheckpointPath() const;
};

std::vector<std::string> KnownKeys();

}  // namespace gcdm::cli

#endif  // GCDM_TOOLS_RUN_CONFIG_H_
