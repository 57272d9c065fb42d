// Copyright 2026 The oodshift Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace oodshift {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, out-of-range configuration values,
/// datasets that violate an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed CSV/IDX/JSON input. `line` is 1-based, 0 when not applicable.
class ParseError : public InvalidArgument {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : InvalidArgument(line == 0 ? what
                                  : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A computation produced a non-finite value (loss, density, gradient).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace oodshift
