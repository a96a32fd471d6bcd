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
// Command-line surface: gen-data / pretrain / finetune / eval, the stage-1
// -> stage-2 weight transfer, and the stage-2 training loop. Every command
// echoes its resolved config into the output directory. Exit codes: 0 ok,
// 2 config error, 3 data error, 4 numerical divergence.

#ifndef UNIME_CLI_HPP_
#define UNIME_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unime/checkpoint.hpp"
#include "unime/config.hpp"
#include "unime/evaluation.hpp"
#include "unime/seg_network.hpp"
#include "unime/tape.hpp"

namespace unime {
namespace cli {

// Synthesizes data.n_cases phantom cases into run.out with the documented
// split rule (val = floor(n/10), test = floor(n/5), train = rest; cases
// assigned in index order train, then val, then test) and writes the
// manifest. Refuses a non-empty output directory unless force.
void gen_dataset(const config::ExperimentConfig& cfg, bool force);

// Copies tokenizer, Uni-Encoder, and mask-token tensors from a stage-1
// checkpoint into a stage-2 store bit-exactly, marking them "pretrained";
// aux_decoder.* tensors are dropped. Raises a config error naming every
// mismatched encoder key when the stages are incompatible.
void transfer_stage1(ParamStore<float>& ps, const checkpoint::Loaded& stage1,
                     const uni_encoder::UniEncoderConfig& enc_cfg);

// Deterministic inference wrapper: eval-mode segment + argmax. Case dims
// must equal the training crop (center-crop beforehand). `ps` is captured
// by reference and must outlive the returned function.
evaluation::SegmentFn make_segment_fn(ParamStore<float>& ps,
                                      const config::ExperimentConfig& cfg,
                                      seg_network::Arch arch);

// Center-crops every case to the configured crop when dims differ.
std::vector<data_synth::MultimodalCase> crop_cases(
    std::vector<data_synth::MultimodalCase> cases, std::array<int, 3> crop);

struct FinetuneResult {
  int64_t steps_run = 0;
  double step0_loss = 0.0;
  double final_loss = 0.0;
  bool has_val = false;
  double best_val_dsc = 0.0;  // percent, mean over subsets and regions
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

// The stage-2 loop: delta sampled uniformly over the 15 subsets each step
// (eta == 1), dice + weighted-cross-entropy total loss with deep and
// per-modality auxiliary terms, layer-wise lr decay on the Uni branch.
// Initializes from finetune.init_from unless finetune.from_scratch or the
// multi-only variant; resumes from <out>/checkpoints/last when present;
// selects best by validation mean DSC (last when the val split is empty).
FinetuneResult run_finetune(const config::ExperimentConfig& cfg);

// Loads a stage-2 checkpoint (architecture and crop are taken from the
// checkpoint's config record), runs the 15-subset protocol over the test
// split, and writes report.csv / report.md (+ report.jsonl when configured)
// into run.out.
evaluation::ProtocolReport run_eval(const config::ExperimentConfig& cfg);

// Full argv surface; maps errors to exit codes.
int run_main(int argc, const char* const* argv);

}  // namespace cli
}  // namespace unime

#endif  // UNIME_CLI_HPP_
