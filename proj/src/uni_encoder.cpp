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

#include "unime/uni_encoder.hpp"

namespace unime {
namespace uni_encoder {

void UniEncoderConfig::validate() const {
  check_config(patch >= 1, "encoder patch size must be >= 1");
  check_config(layers >= 1, "encoder layer count must be >= 1");
  check_config(heads >= 1, "encoder head count must be >= 1");
  check_config(n_reg >= 0, "register count must be >= 0");
  check_config(rope_base > 0.0, "rope base must be positive");
  check_config(d_embed % heads == 0,
               "d_embed must be divisible by the head count");
  // Rotary channels come in three axis groups of 2*floor(d_head/6) each;
  // widths below 6 leave no rotary pairs at all.
  check_config(d_head() >= 6, "per-head width must be >= 6 for 3D rotary");
  check_config(d_head() % 2 == 0, "per-head width must be even");
}

UniEncoderConfig scale_preset(const std::string& name) {
  UniEncoderConfig cfg;
  if (name == "small") {
    cfg.heads = 12;
    cfg.layers = 12;
    cfg.d_embed = 864;
  } else if (name == "base") {
    cfg.heads = 12;
    cfg.layers = 16;
    cfg.d_embed = 864;
  } else if (name == "large") {
    cfg.heads = 16;
    cfg.layers = 24;
    cfg.d_embed = 1056;
  } else {
    throw ConfigError("unknown encoder scale preset: " + name);
  }
  return cfg;
}

int swiglu_hidden(int d_embed) {
  const double target = (8.0 / 3.0) * d_embed;
  const int rounded = (int)std::llround(target / 64.0) * 64;
  return rounded < 64 ? 64 : rounded;
}

std::shared_ptr<std::vector<std::array<int, 3>>> token_positions(
    std::array<int, 3> grid, int n_reg) {
  auto pos = std::make_shared<std::vector<std::array<int, 3>>>();
  pos->reserve((size_t)grid[0] * grid[1] * grid[2] + n_reg);
  for (int z = 0; z < grid[0]; ++z)
    for (int y = 0; y < grid[1]; ++y)
      for (int x = 0; x < grid[2]; ++x) pos->push_back({z, y, x});
  for (int r = 0; r < n_reg; ++r) pos->push_back({0, 0, 0});
  return pos;
}

}  // namespace uni_encoder
}  // namespace unime
