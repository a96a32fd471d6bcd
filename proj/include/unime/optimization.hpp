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
// Segmentation losses, layer-wise lr decay, the warmup-cosine schedule, and
// the AdamW update.

#ifndef UNIME_OPTIMIZATION_HPP_
#define UNIME_OPTIMIZATION_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "unime/errors.hpp"
#include "unime/ops.hpp"
#include "unime/parallel.hpp"
#include "unime/tape.hpp"

namespace unime {
namespace optimization {

struct LossConfig {
  std::array<double, 4> class_weights{1.0, 2.0, 1.0, 2.0};
  double dice_smooth = 1e-5;

  void validate() const {
    for (double w : class_weights)
      check_config(std::isfinite(w) && w > 0.0,
                   "class weights must be finite and positive");
    check_config(std::isfinite(dice_smooth) && dice_smooth > 0.0,
                 "dice smoothing must be finite and positive");
  }
};

struct ScheduleConfig {
  double base_lr = 3e-4;
  double start_lr = 1e-5;
  double end_lr = 1e-6;
  double warmup_fraction = 0.05;
  int64_t total_steps = 0;
  double weight_decay = 1e-4;
  double llrd_omega = 0.75;
  int llrd_depth = 16;     // encoder layer count L
  bool freeze_uni = false;
  double grad_clip = 0.0;  // global grad-norm cap; 0 disables

  void validate() const {
    check_config(total_steps >= 1, "total_steps must be >= 1");
    check_config(start_lr <= base_lr, "start_lr must be <= base_lr");
    check_config(warmup_fraction > 0.0 && warmup_fraction < 1.0,
                 "warmup_fraction must lie in (0, 1)");
    check_config(llrd_omega > 0.0 && llrd_omega <= 1.0,
                 "llrd decay factor must lie in (0, 1]");
    check_config(llrd_depth >= 1, "llrd depth must be >= 1");
    check_config(weight_decay >= 0.0 && grad_clip >= 0.0,
                 "weight decay and grad clip must be >= 0");
  }
};

// Global lr value: linear start_lr -> base_lr over the first warmup_fraction
// of steps, cosine base_lr -> end_lr afterwards; clamps to end_lr past the
// end. Layer-wise scales compose multiplicatively with this value.
double lr_at_step(int64_t step, const ScheduleConfig& cfg);

// omega^(L - l) for encoder layers (stem counts as layer 0); 1 elsewhere.
double llrd_scale(int llrd_layer, double omega, int depth);

// ---------------------------------------------------------------------------
// Losses.

// Nearest-neighbor label downsampling for deep supervision targets.
std::shared_ptr<const Tensor<uint8_t>> downsample_labels(
    const std::shared_ptr<const Tensor<uint8_t>>& labels, int factor);

// Soft Dice + class-weighted cross-entropy, equally weighted.
template <typename T>
Val dice_wce_loss(Tape<T>& t, Val logits,
                  std::shared_ptr<const Tensor<uint8_t>> labels,
                  const LossConfig& cfg) {
  cfg.validate();
  std::vector<T> weights(cfg.class_weights.begin(), cfg.class_weights.end());
  return ops::dice_wce(t, logits, std::move(labels), weights,
                       (T)cfg.dice_smooth);
}

// L_total = L_main + sum(L_aux over available modalities) + sum(L_deep),
// every term weighted 1. Deep targets are NN-downsampled by the resolution
// ratio of each deep head.
template <typename T>
Val total_loss(Tape<T>& t, Val main_logits, const std::vector<Val>& deep_logits,
               const std::vector<Val>& aux_logits,
               std::shared_ptr<const Tensor<uint8_t>> labels,
               const LossConfig& cfg) {
  Val total = dice_wce_loss(t, main_logits, labels, cfg);
  for (Val aux : aux_logits)
    total = ops::add(t, total, dice_wce_loss(t, aux, labels, cfg));
  for (Val deep : deep_logits) {
    const int64_t full = t.val(main_logits).shape[1];
    const int64_t low = t.val(deep).shape[1];
    check_contract(low >= 1 && full % low == 0,
                   "deep head resolution must divide the input resolution");
    total = ops::add(
        t, total,
        dice_wce_loss(t, deep, downsample_labels(labels, (int)(full / low)),
                      cfg));
  }
  return total;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay. Norm/bias/positional/token parameters
// carry no_decay and are exempt; frozen groups (lr scale 0) are untouched.

template <typename T>
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }

  void step(ParamStore<T>& ps, const ScheduleConfig& cfg, double lr_now) {
    cfg.validate();
    ++t_;
    if (cfg.grad_clip > 0.0) clip_grads(ps, cfg.grad_clip);
    const double bc1 = 1.0 - std::pow(beta1, (double)t_);
    const double bc2 = 1.0 - std::pow(beta2, (double)t_);
    for (Parameter<T>* p : ps.all()) {
      double scale = llrd_scale(p->llrd_layer, cfg.llrd_omega, cfg.llrd_depth);
      if (cfg.freeze_uni && p->llrd_layer >= 0) scale = 0.0;
      if (scale == 0.0) continue;
      const double lr = lr_now * scale;
      if (p->adam_m.numel() != p->numel()) {
        p->adam_m = Tensor<T>::zeros(p->value.shape);
        p->adam_v = Tensor<T>::zeros(p->value.shape);
      }
      const int64_t n = p->numel();
      T* val = p->value.ptr();
      const T* g = p->grad.ptr();
      T* m = p->adam_m.ptr();
      T* v = p->adam_v.ptr();
      const double wd = p->no_decay ? 0.0 : cfg.weight_decay;
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < n; ++i) {
        const double gi = (double)g[i];
        const double mi = beta1 * (double)m[i] + (1.0 - beta1) * gi;
        const double vi = beta2 * (double)v[i] + (1.0 - beta2) * gi * gi;
        m[i] = (T)mi;
        v[i] = (T)vi;
        double x = (double)val[i];
        if (wd > 0.0) x -= lr * wd * x;
        x -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
        val[i] = (T)x;
      }
    }
  }

 private:
  void clip_grads(ParamStore<T>& ps, double max_norm) {
    double sq = 0.0;
    for (Parameter<T>* p : ps.all())
      sq += (double)par::block_sum_sq(p->grad.ptr(), p->numel());
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const T factor = (T)(max_norm / norm);
    for (Parameter<T>* p : ps.all()) {
      T* g = p->grad.ptr();
      const int64_t n = p->numel();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < n; ++i) g[i] *= factor;
    }
  }

  int64_t t_ = 0;
};

}  // namespace optimization
}  // namespace unime

#endif  // UNIME_OPTIMIZATION_HPP_
