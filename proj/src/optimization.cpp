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

#include "unime/optimization.hpp"

namespace unime {
namespace optimization {

double lr_at_step(int64_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  check_config(step >= 0, "schedule step must be >= 0");
  const double total = (double)cfg.total_steps;
  const double warm = cfg.warmup_fraction * total;
  if (step >= cfg.total_steps) return cfg.end_lr;
  if ((double)step <= warm)
    return cfg.start_lr + (cfg.base_lr - cfg.start_lr) * ((double)step / warm);
  const double u = ((double)step - warm) / (total - warm);
  return cfg.end_lr +
         (cfg.base_lr - cfg.end_lr) * 0.5 * (1.0 + std::cos(M_PI * u));
}

double llrd_scale(int llrd_layer, double omega, int depth) {
  check_config(omega > 0.0 && omega <= 1.0,
               "llrd decay factor must lie in (0, 1]");
  if (llrd_layer < 0) return 1.0;
  check_config(llrd_layer <= depth,
               "llrd layer index exceeds the configured depth");
  return std::pow(omega, (double)(depth - llrd_layer));
}

std::shared_ptr<const Tensor<uint8_t>> downsample_labels(
    const std::shared_ptr<const Tensor<uint8_t>>& labels, int factor) {
  check_contract(labels->ndim() == 3, "labels must be [D, H, W]");
  if (factor == 1) return labels;
  const int64_t d = labels->shape[0], h = labels->shape[1],
                w = labels->shape[2];
  check_contract(factor >= 1 && d % factor == 0 && h % factor == 0 &&
                     w % factor == 0,
                 "downsample factor must divide the label dims");
  auto out = std::make_shared<Tensor<uint8_t>>(
      Tensor<uint8_t>::zeros({d / factor, h / factor, w / factor}));
  const int64_t oh = h / factor, ow = w / factor;
  for (int64_t z = 0; z < d / factor; ++z)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x)
        out->data[(z * oh + y) * ow + x] =
            labels->data[((z * factor) * h + y * factor) * w + x * factor];
  return out;
}

}  // namespace optimization
}  // namespace unime
