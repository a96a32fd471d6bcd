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

#include "unime/seg_network.hpp"

#include <cmath>

#include "unime/errors.hpp"

namespace unime {
namespace seg_network {

Arch parse_arch(const std::string& name) {
  if (name == "full") return Arch::kFull;
  if (name == "multi-only") return Arch::kMultiOnly;
  if (name == "uni-only") return Arch::kUniOnly;
  throw ConfigError("unknown architecture '" + name +
                    "' (expected full, multi-only, or uni-only)");
}

std::string arch_name(Arch arch) {
  switch (arch) {
    case Arch::kFull:
      return "full";
    case Arch::kMultiOnly:
      return "multi-only";
    case Arch::kUniOnly:
      return "uni-only";
  }
  throw ContractError("invalid Arch value");
}

int eca_kernel(int channels) {
  check_contract(channels >= 1, "eca_kernel: channels must be >= 1");
  const double v = 0.5 * std::log2((double)channels) + 0.5;
  // Nearest odd integer; exact ties round up (128 channels -> 5).
  const int lo = 2 * (int)std::floor((v - 1.0) / 2.0) + 1;
  const int hi = lo + 2;
  const int k = (v - lo < hi - v) ? lo : hi;
  return k < 1 ? 1 : k;
}

}  // namespace seg_network
}  // namespace unime
