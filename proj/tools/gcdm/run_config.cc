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

#include "gcdm/run_config.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "gcdm/errors.h"

namespace gcdm::cli {
namespace {

namespace fs = std::filesystem;

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T ParseInteger(const std::string& key, const std::string& v) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double ParseReal(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool ParseBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

fs::path ResolvePath(const std::string& v, const fs::path& base) {
  if (v.empty()) return {};
  fs::path p(v);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

std::string Real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Helpers building fields from accessors.
template <typename Get>
Field MakeInt(std::string key, Get access) {
  return Field{key,
               [key, access](RunConfig& c, const std::string& v, const fs::path&) {
                 auto& ref = access(c);
                 ref = ParseInteger<std::remove_reference_t<decltype(ref)>>(key, v);
               },
               [access](const RunConfig& c) {
                 return std::to_string(access(const_cast<RunConfig&>(c)));
               }};
}

template <typename Get>
Field MakeReal(std::string key, Get access) {
  return Field{key,
               [key, access](RunConfig& c, const std::string& v, const fs::path&) {
                 access(c) = ParseReal(key, v);
               },
               [access](const RunConfig& c) { return Real(access(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field MakeBool(std::string key, Get access) {
  return Field{key,
               [key, access](RunConfig& c, const std::string& v, const fs::path&) {
                 access(c) = ParseBool(key, v);
               },
               [access](const RunConfig& c) {
                 return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false");
               }};
}

template <typename Get>
Field MakePath(std::string key, Get access) {
  return Field{key,
               [access](RunConfig& c, const std::string& v, const fs::path& base) {
                 access(c) = ResolvePath(v, base);
               },
               [access](const RunConfig& c) {
                 return access(const_cast<RunConfig&>(c)).string();
               }};
}

const std::vector<Field>& Fields() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    // [run]
    f.push_back(MakeInt("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    // [data]
    f.push_back(MakePath("data.path", [](RunConfig& c) -> fs::path& { return c.data.path; }));
    f.push_back(Field{
        "data.format",
        [](RunConfig& c, const std::string& v, const fs::path&) {
          auto fmt = moldata::ParseDatasetFormat(v);
          if (!fmt) throw ConfigError("data.format: expected xyz-dir, sdf or internal, got '" + v + "'");
          c.data.format = *fmt;
        },
        [](const RunConfig& c) {
          switch (c.data.format) {
            case moldata::DatasetFormat::kXyzDir: return std::string("xyz-dir");
            case moldata::DatasetFormat::kSdf: return std::string("sdf");
            case moldata::DatasetFormat::kInternal: break;
          }
          return std::string("internal");
        }});
    f.push_back(MakePath("data.manifest", [](RunConfig& c) -> fs::path& { return c.data.manifest; }));
    f.push_back(MakeInt("data.split_seed", [](RunConfig& c) -> std::uint64_t& { return c.data.split_seed; }));
    f.push_back(MakeInt("data.train_count", [](RunConfig& c) -> std::int64_t& { return c.data.train_count; }));
    f.push_back(MakeInt("data.val_count", [](RunConfig& c) -> std::int64_t& { return c.data.val_count; }));
    f.push_back(MakeInt("data.max_molecules", [](RunConfig& c) -> std::int64_t& { return c.data.max_molecules; }));
    // [model]
    f.push_back(MakeInt("model.num_layers", [](RunConfig& c) -> int& { return c.model.num_layers; }));
    f.push_back(MakeInt("model.message_passes", [](RunConfig& c) -> int& { return c.model.message_passes; }));
    f.push_back(MakeInt("model.node_scalars", [](RunConfig& c) -> int& { return c.model.node_scalars; }));
    f.push_back(MakeInt("model.node_vectors", [](RunConfig& c) -> int& { return c.model.node_vectors; }));
    f.push_back(MakeInt("model.edge_scalars", [](RunConfig& c) -> int& { return c.model.edge_scalars; }));
    f.push_back(MakeInt("model.edge_vectors", [](RunConfig& c) -> int& { return c.model.edge_vectors; }));
    f.push_back(Field{
        "model.aggregation",
        [](RunConfig& c, const std::string& v, const fs::path&) {
          if (v == "mean") {
            c.model.aggregation = gcpnet::Aggregation::kMean;
          } else if (v == "sum") {
            c.model.aggregation = gcpnet::Aggregation::kSum;
          } else {
            throw ConfigError("model.aggregation: expected mean or sum, got '" + v + "'");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.model.aggregation == gcpnet::Aggregation::kSum ? "sum" : "mean");
        }});
    f.push_back(MakeBool("model.use_frames", [](RunConfig& c) -> bool& { return c.model.use_frames; }));
    f.push_back(MakeBool("model.use_sma", [](RunConfig& c) -> bool& { return c.model.use_sma; }));
    f.push_back(MakeBool("model.zero_init_heads", [](RunConfig& c) -> bool& { return c.model.zero_init_heads; }));
    f.push_back(MakeReal("model.rbf_max", [](RunConfig& c) -> double& { return c.model.rbf_max; }));
    f.push_back(MakeReal("model.frame_eps", [](RunConfig& c) -> double& { return c.model.frame_eps; }));
    f.push_back(Field{
        "model.cutoff",
        [](RunConfig& c, const std::string& v, const fs::path&) {
          if (v == "none" || v.empty()) {
            c.model.cutoff.reset();
          } else {
            c.model.cutoff = ParseReal("model.cutoff", v);
          }
        },
        [](const RunConfig& c) { return c.model.cutoff ? Real(*c.model.cutoff) : std::string("none"); }});
    // [schedule]
    f.push_back(Field{
        "schedule.kind",
        [](RunConfig& c, const std::string& v, const fs::path&) {
          auto kind = diffusion::ParseScheduleKind(v);
          if (!kind) throw ConfigError("schedule.kind: expected polynomial or cosine, got '" + v + "'");
          c.schedule.kind = *kind;
        },
        [](const RunConfig& c) { return std::string(diffusion::ScheduleKindName(c.schedule.kind)); }});
    f.push_back(MakeInt("schedule.T", [](RunConfig& c) -> int& { return c.schedule.T; }));
    f.push_back(MakeReal("schedule.precision", [](RunConfig& c) -> double& { return c.schedule.precision; }));
    // [features]
    f.push_back(MakeReal("features.categorical_scale", [](RunConfig& c) -> double& { return c.features.categorical_scale; }));
    f.push_back(MakeReal("features.integer_scale", [](RunConfig& c) -> double& { return c.features.integer_scale; }));
    // [optimizer]
    f.push_back(MakeReal("optimizer.learning_rate", [](RunConfig& c) -> double& { return c.optimizer.learning_rate; }));
    f.push_back(MakeReal("optimizer.weight_decay", [](RunConfig& c) -> double& { return c.optimizer.weight_decay; }));
    f.push_back(MakeReal("optimizer.beta1", [](RunConfig& c) -> double& { return c.optimizer.beta1; }));
    f.push_back(MakeReal("optimizer.beta2", [](RunConfig& c) -> double& { return c.optimizer.beta2; }));
    f.push_back(MakeReal("optimizer.epsilon", [](RunConfig& c) -> double& { return c.optimizer.epsilon; }));
    f.push_back(MakeInt("optimizer.batch_size", [](RunConfig& c) -> int& { return c.batch_size; }));
    // [training]
    f.push_back(MakeInt("training.steps", [](RunConfig& c) -> int& { return c.training.steps; }));
    f.push_back(MakeInt("training.log_every", [](RunConfig& c) -> int& { return c.training.log_every; }));
    f.push_back(MakeInt("training.validate_every", [](RunConfig& c) -> int& { return c.training.validate_every; }));
    f.push_back(MakeInt("training.val_molecules", [](RunConfig& c) -> int& { return c.training.val_molecules; }));
    f.push_back(MakeInt("training.checkpoint_every", [](RunConfig& c) -> int& { return c.training.checkpoint_every; }));
    f.push_back(MakeInt("training.patience", [](RunConfig& c) -> int& { return c.training.patience; }));
    f.push_back(MakePath("training.resume", [](RunConfig& c) -> fs::path& { return c.training.resume; }));
    // [sampling]
    f.push_back(MakeInt("sampling.count", [](RunConfig& c) -> int& { return c.sampling.count; }));
    f.push_back(MakeInt("sampling.batch_size", [](RunConfig& c) -> int& { return c.sampling.batch_size; }));
    f.push_back(MakePath("sampling.checkpoint", [](RunConfig& c) -> fs::path& { return c.sampling.checkpoint; }));
    // [evaluation]
    f.push_back(Field{
        "evaluation.source",
        [](RunConfig& c, const std::string& v, const fs::path&) {
          if (v == "checkpoint") {
            c.evaluation.source = EvalSource::kCheckpoint;
          } else if (v == "samples") {
            c.evaluation.source = EvalSource::kSamples;
          } else if (v == "dataset") {
            c.evaluation.source = EvalSource::kDataset;
          } else {
            throw ConfigError("evaluation.source: expected checkpoint, samples or dataset, got '" + v + "'");
          }
        },
        [](const RunConfig& c) {
          switch (c.evaluation.source) {
            case EvalSource::kSamples: return std::string("samples");
            case EvalSource::kDataset: return std::string("dataset");
            case EvalSource::kCheckpoint: break;
          }
          return std::string("checkpoint");
        }});
    f.push_back(MakePath("evaluation.samples", [](RunConfig& c) -> fs::path& { return c.evaluation.samples; }));
    f.push_back(Field{
        "evaluation.split",
        [](RunConfig& c, const std::string& v, const fs::path&) {
          if (v != "train" && v != "val" && v != "test") {
            throw ConfigError("evaluation.split: expected train, val or test, got '" + v + "'");
          }
          c.evaluation.split = v;
        },
        [](const RunConfig& c) { return c.evaluation.split; }});
    f.push_back(MakePath("evaluation.bond_table", [](RunConfig& c) -> fs::path& { return c.evaluation.bond_table; }));
    f.push_back(MakePath("evaluation.valence_table", [](RunConfig& c) -> fs::path& { return c.evaluation.valence_table; }));
    f.push_back(MakeInt("evaluation.num_batches", [](RunConfig& c) -> int& { return c.evaluation.num_batches; }));
    f.push_back(MakeInt("evaluation.nll_molecules", [](RunConfig& c) -> int& { return c.evaluation.nll_molecules; }));
    f.push_back(MakeInt("evaluation.nll_t_samples", [](RunConfig& c) -> int& { return c.evaluation.nll_t_samples; }));
    // [output]
    f.push_back(MakePath("output.dir", [](RunConfig& c) -> fs::path& { return c.output_dir; }));
    return f;
  }();
  return fields;
}

const Field* FindField(const std::string& key) {
  for (const auto& f : Fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void SetKey(RunConfig& c, const std::string& key, const std::string& value,
            const fs::path& base, const std::string& where) {
  const Field* f = FindField(key);
  if (f == nullptr) throw ConfigError(where + "unknown key '" + key + "'");
  try {
    f->set(c, value, base);
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  }
}

}  // namespace

std::vector<std::string> KnownKeys() {
  std::vector<std::string> keys;
  for (const auto& f : Fields()) keys.push_back(f.key);
  return keys;
}

RunConfig RunConfig::Parse(const std::string& text, const std::string& source,
                           const fs::path& base_dir) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = Trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = Trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : Fields()) {
        if (f.key.rfind(section + ".", 0) == 0) known = true;
      }
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside any [section]");
    const std::string key = section + "." + Trim(line.substr(0, eq));
    for (const auto& s : seen) {
      if (s == key) throw ConfigError(where + "duplicate key '" + key + "'");
    }
    seen.push_back(key);
    SetKey(c, key, Trim(line.substr(eq + 1)), base_dir, where);
  }
  return c;
}

RunConfig RunConfig::Load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path base = fs::absolute(path).parent_path();
  return Parse(ss.str(), path.string(), base);
}

void RunConfig::ApplyOverride(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--override expects KEY=VALUE, got '" + assignment + "'");
  }
  SetKey(*this, Trim(assignment.substr(0, eq)), Trim(assignment.substr(eq + 1)),
         fs::current_path(), "--override: ");
}

fs::path RunConfig::CheckpointPath() const {
  return sampling.checkpoint.empty() ? output_dir / "checkpoint.ckpt" : sampling.checkpoint;
}

void RunConfig::Validate(Command command) const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  model.Validate();
  optimizer.Validate();
  try {
    features.Validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("features: ") + e.what());
  }
  require(schedule.T >= 2, "schedule.T must be >= 2");
  require(schedule.precision > 0.0 && schedule.precision < 0.5,
          "schedule.precision must lie in (0, 0.5)");
  try {
    schedule.Build();
  } catch (const Error& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  require(batch_size >= 1, "optimizer.batch_size must be >= 1");
  require(training.steps >= 0, "training.steps must be >= 0");
  require(training.log_every >= 1, "training.log_every must be >= 1");
  require(training.validate_every >= 0, "training.validate_every must be >= 0");
  require(training.val_molecules >= 1, "training.val_molecules must be >= 1");
  require(training.checkpoint_every >= 0, "training.checkpoint_every must be >= 0");
  require(training.patience >= 0, "training.patience must be >= 0");
  require(sampling.count >= 1, "sampling.count must be >= 1");
  require(sampling.batch_size >= 1, "sampling.batch_size must be >= 1");
  require(evaluation.num_batches >= 1, "evaluation.num_batches must be >= 1");
  require(evaluation.nll_molecules >= 0, "evaluation.nll_molecules must be >= 0");
  require(evaluation.nll_t_samples >= 1, "evaluation.nll_t_samples must be >= 1");
  require(data.max_molecules >= 0, "data.max_molecules must be >= 0");
  require((data.train_count < 0) == (data.val_count < 0),
          "data.train_count and data.val_count must be set together");
  require(!output_dir.empty(), "output.dir must not be empty");

  const bool needs_data =
      command == Command::kTrain || command == Command::kInspect ||
      (command == Command::kEval &&
       (evaluation.source == EvalSource::kDataset || evaluation.nll_molecules > 0));
  if (needs_data) {
    require(!data.path.empty(), "data.path is required for this command");
    require(fs::exists(data.path), "data.path does not exist: " + data.path.string());
    if (!data.manifest.empty()) {
      require(fs::exists(data.manifest),
              "data.manifest does not exist: " + data.manifest.string());
    }
  }
  if (command == Command::kTrain && !training.resume.empty()) {
    require(fs::exists(training.resume),
            "training.resume does not exist: " + training.resume.string());
  }
  const bool needs_checkpoint =
      command == Command::kSample ||
      (command == Command::kEval &&
       (evaluation.source == EvalSource::kCheckpoint || evaluation.nll_molecules > 0));
  if (needs_checkpoint) {
    require(fs::exists(CheckpointPath()),
            "checkpoint not found: " + CheckpointPath().string() +
                " (run 'train' first or set sampling.checkpoint)");
  }
  if (command == Command::kEval && evaluation.source == EvalSource::kSamples) {
    require(!evaluation.samples.empty(), "evaluation.samples is required when source = samples");
    require(fs::exists(evaluation.samples),
            "evaluation.samples does not exist: " + evaluation.samples.string());
  }
  if (command == Command::kEval) {
    for (const fs::path& p : {evaluation.bond_table, evaluation.valence_table}) {
      require(p.empty() || fs::exists(p), "evaluation table not found: " + p.string());
    }
  }
}

std::string RunConfig::Canonical() const {
  std::ostringstream out;
  for (const auto& f : Fields()) out << f.key << " = " << f.get(*this) << '\n';
  return out.str();
}

}  // namespace gcdm::cli
