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
//
// Minimal TOML subset used for configuration: [section] tables one level
// deep, scalar values (string/bool/integer/float) and flat arrays, with #
// comments. Keys are flattened to "section.key". Parse errors are
// configuration errors because the only TOML inputs are config files.

#ifndef UNIME_TOML_HPP_
#define UNIME_TOML_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace unime {
namespace toml {

struct Value {
  enum class Type { kBool, kInt, kFloat, kString, kArray };
  Type type = Type::kString;
  bool b = false;
  int64_t i = 0;
  double f = 0.0;
  std::string s;
  std::vector<Value> arr;

  static Value of_bool(bool v);
  static Value of_int(int64_t v);
  static Value of_float(double v);
  static Value of_string(std::string v);
  static Value of_array(std::vector<Value> v);

  // Checked accessors; a type mismatch names the offending key.
  bool as_bool(const std::string& key) const;
  int64_t as_int(const std::string& key) const;
  double as_float(const std::string& key) const;  // accepts integers
  const std::string& as_string(const std::string& key) const;
  std::vector<int64_t> as_int_array(const std::string& key, size_t n) const;
  std::vector<double> as_float_array(const std::string& key, size_t n) const;
};

using Table = std::map<std::string, Value>;

Table parse(const std::string& text);
Table parse_file(const std::string& path);

// Emits top-level keys first, then one [section] per prefix, keys sorted.
std::string serialize(const Table& table);

}  // namespace toml
}  // namespace unime

#endif  // UNIME_TOML_HPP_
