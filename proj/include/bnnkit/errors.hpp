// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The bnnkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef BNNKIT_ERRORS_HPP
#define BNNKIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace bnnkit {

// Argument outside the mathematical domain of an operation (e.g. distance <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Matrix/tensor dimensions that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Floating point trouble: singular systems, non-finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An iterative method ran out of iterations. `last_value` carries the
// last objective estimate (e.g. the balanced SINR level).
class NonConvergenceError : public NumericError {
 public:
  NonConvergenceError(const std::string& what, double last_value)
      : NumericError(what), last_value_(last_value) {}
  double last_value() const noexcept { return last_value_; }

 private:
  double last_value_;
};

// The instance (or a predicted solution) cannot meet its QoS targets.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API used in the wrong order (e.g. backward without a train-mode forward).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace bnnkit

#endif  // BNNKIT_ERRORS_HPP
