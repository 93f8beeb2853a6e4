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

#ifndef GCDM_ERRORS_H_
#define GCDM_ERRORS_H_

#include <stdexcept>
#include <string>

namespace gcdm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files. The message names the file and line.
class ParseError : public Error {
 public:
  using Error::Error;
};

// A value violates a documented precondition or type invariant.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during a numerical computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace gcdm

#endif  // GCDM_ERRORS_H_
