// Copyright 2026 The UniME Authors. All Rights Reserved.
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

#ifndef UNIME_ERRORS_HPP_
#define UNIME_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace unime {

// Error taxonomy, mapped to process exit codes by the CLI:
//   ConfigError -> 2, DataError (and subclasses) -> 3, NumericalError -> 4.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// On-disk case/checkpoint layout violations.
class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& msg) : DataError(msg) {}
};

// Misuse of the evaluation protocol (empty subset, empty test split, ...).
class ProtocolError : public DataError {
 public:
  explicit ProtocolError(const std::string& msg) : DataError(msg) {}
};

// Shape or precondition violations between composed components.
class ContractError : public DataError {
 public:
  explicit ContractError(const std::string& msg) : DataError(msg) {}
};

// Non-finite values during training or inference.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_contract(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace unime

#endif  // UNIME_ERRORS_HPP_
