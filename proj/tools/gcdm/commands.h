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

#ifndef GCDM_TOOLS_COMMANDS_H_
#define GCDM_TOOLS_COMMANDS_H_

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "gcdm/run_config.h"

namespace gcdm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

std::optional<Command> ParseCommand(std::string_view name);
std::string_view CommandName(Command command);

std::string_view Version();

// Holds <dir>/.lock for the lifetime of the object. Throws Error if another
// run already owns the directory.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// FNV-1a over the canonical config text.
std::string ConfigHash(const RunConfig& config);

// Everything needed to repeat the run: command, version, seed, config hash
// and the canonical config. Contains no timestamps.
std::string ProvenanceText(Command command, const RunConfig& config);

// Untrained weights a fresh training run starts from.
ParameterSet InitialParameters(const RunConfig& config);

// Runs a validated config. Progress goes to `log`; artifacts go to
// config.output_dir. Throws on failure.
void Run(Command command, const RunConfig& config, std::ostream& log);

}  // namespace gcdm::cli

#endif  // GCDM_TOOLS_COMMANDS_H_
