/*
 * Copyright (c) 2026 The LFAM Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace lfam {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or rank disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed bytes: truncation, bad magic, inconsistent chunk contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A value outside the admissible domain (non-finite input, non-positive scale, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Calibration data cannot produce a usable scale (e.g. all zeros).
class CalibrationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training diverged; the message carries the step and loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Wraps a failure raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace lfam
