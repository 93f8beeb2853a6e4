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

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gcdm/commands.h"
#include "gcdm/errors.h"
#include "gcdm/run_config.h"

namespace {

struct Options {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::vector<std::string> overrides;
};

void AddCommonFlags(CLI::App* cmd, Options& opts) {
  cmd->add_option("--config", opts.config, "Run configuration file")->required();
  cmd->add_option("--seed", opts.seed, "Overrides run.seed");
  cmd->add_option("--out", opts.out, "Overrides output.dir");
  cmd->add_option("--override", opts.overrides, "section.key=value (repeatable)")
      ->take_all()
      ->allow_extra_args(false);
}

}  // namespace

int main(int argc, char** argv) {
  using gcdm::cli::Command;
  CLI::App app{"GCDM: geometry-complete diffusion for 3D molecules"};
  app.set_version_flag("--version", std::string(gcdm::cli::Version()));
  app.require_subcommand(1);

  Options opts;
  const std::pair<Command, const char*> commands[] = {
      {Command::kTrain, "Train a denoiser and write checkpoint.ckpt and loss_log.tsv"},
      {Command::kSample, "Generate molecules from a checkpoint"},
      {Command::kEval, "Compute stability, validity and uniqueness (and optionally NLL)"},
      {Command::kInspect, "Print dataset statistics, p(N) and the schedule's SNR curve"},
  };
  for (const auto& [command, help] : commands) {
    AddCommonFlags(app.add_subcommand(std::string(gcdm::cli::CommandName(command)), help),
                   opts);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? gcdm::cli::kExitOk : gcdm::cli::kExitUsage;
  }
  const Command command =
      *gcdm::cli::ParseCommand(app.get_subcommands().front()->get_name());

  gcdm::cli::RunConfig config;
  try {
    config = gcdm::cli::RunConfig::Load(opts.config);
    for (const auto& o : opts.overrides) config.ApplyOverride(o);
    if (opts.seed) config.seed = *opts.seed;
    if (opts.out) config.output_dir = std::filesystem::absolute(*opts.out).lexically_normal();
    config.Validate(command);
  } catch (const gcdm::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return gcdm::cli::kExitUsage;
  }

  try {
    gcdm::cli::Run(command, config, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return gcdm::cli::kExitRuntime;
  }
  return gcdm::cli::kExitOk;
}
