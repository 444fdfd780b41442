// Copyright 2026 The mixq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace mixq {

/// Machine-readable error category. The CLI maps these onto exit codes.
enum class ErrorCode {
  Internal,
  Dimension,
  Config,
  MissingArtifact,
  Infeasible,
  Numeric,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorCode::Dimension, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::Config, what) {}
};

class MissingArtifactError : public Error {
 public:
  MissingArtifactError(const std::string& what, std::string stage)
      : Error(ErrorCode::MissingArtifact, what), stage_(std::move(stage)) {}
  /// Name of the stage that produces the missing artifact.
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, std::string constraint)
      : Error(ErrorCode::Infeasible, what), constraint_(std::move(constraint)) {}
  const std::string& constraint() const noexcept { return constraint_; }

 private:
  std::string constraint_;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCode::Numeric, what) {}
};

}  // namespace mixq
