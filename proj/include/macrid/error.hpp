// Copyright 2026 The Macrid Authors.
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace macrid {

// Broad error classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kUsage,         // bad arguments or invalid configuration
  kData,          // malformed or empty input data, missing files
  kNumeric,       // non-finite values during computation
  kIo,            // unreadable / unwritable paths
  kPrecondition,  // caller violated an operation's contract
  kDimension,     // tensor shape mismatch
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::kData,
              "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyCorpusError : public Error {
 public:
  explicit EmptyCorpusError(const std::string& what)
      : Error(ErrorKind::kData, what) {}
};

class NumericError : public Error {
 public:
  NumericError(std::string node, const std::string& what)
      : Error(ErrorKind::kNumeric, what), node_(std::move(node)) {}
  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

// Raised by the control module when a concept has fewer in-range items than
// the requested trajectory length.
class InsufficientItemsError : public Error {
 public:
  InsufficientItemsError(std::size_t eligible, std::size_t required)
      : Error(ErrorKind::kPrecondition,
              "only " + std::to_string(eligible) +
                  " eligible items in range, need " +
                  std::to_string(required)),
        eligible_(eligible),
        required_(required) {}
  std::size_t eligible() const noexcept { return eligible_; }
  std::size_t required() const noexcept { return required_; }

 private:
  std::size_t eligible_;
  std::size_t required_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorKind::kPrecondition, what);
}

}  // namespace macrid
