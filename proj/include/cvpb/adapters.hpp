// Copyright 2026 The cvpb Authors.
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

// Test-time adaptation. Prompt adapters optimize an input-space prompt
// against a self-supervised loss with sign-gradient steps and never touch
// the model. Weight adapters run inside an episode: the backbone is
// snapshotted, adapted, used for prediction and restored bit-exactly.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cvpb/augment.hpp"
#include "cvpb/models.hpp"
#include "cvpb/prompts.hpp"

namespace cvpb {

enum class SslTask { kContrastive, kRotation };

std::string_view ssl_task_name(SslTask task);
SslTask parse_ssl_task(std::string_view name);

/// The self-supervised objective L_s. Only the head matching `task` is used.
struct SslModel {
  SslTask task = SslTask::kContrastive;
  const SslHead* contrastive = nullptr;
  const RotationHead* rotation = nullptr;
};

struct AdaptConfig {
  int iters = 5;  // T
  int batch_size = 16;
  SslTask ssl_task = SslTask::kContrastive;
  int n_views = 3;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  bool fallback = true;

  // Convolutional prompt.
  int kernel_size = 3;
  KernelInit init = KernelInit::kRandom;
  LambdaRange lambda_range;
  float kernel_step = 0.05f;
  float lambda_step = 0.1f;

  // Additive prompt.
  float epsilon = kDefaultVpEpsilon;
  float vp_step = kDefaultVpStep;
  NormKind norm = NormKind::kLinf;
  int padding_width = 1;

  // Low-rank prompt.
  int rank = 3;
  float lvp_step = 0.01f;

  // Weight adaptation.
  int weight_iters = 1;
  float weight_lr = 1e-3f;
  float weight_momentum = 0.9f;
  int memo_copies = 8;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct AdaptOutcome {
  Tensor adapted;  // the input that was classified
  Tensor logits;
  std::vector<int> predictions;
  // Prompt adapters: L_s(x) followed by L_s(x^1) .. L_s(x^T).
  // Weight adapters: the adapted objective before each step and after the last.
  std::vector<float> loss_trace;
  float final_loss = 0.0f;  // min(loss^T, loss^0) when the fallback fired
  bool fallback = false;
  bool non_finite = false;
  std::string summary;
  // Weight adapters: parameters that differed from the snapshot before restoration.
  std::vector<std::string> changed;
  double wall_ms = 0.0;

  float initial_loss() const { return loss_trace.empty() ? 0.0f : loss_trace.front(); }
};

/// Convolutional prompt. The backbone must be frozen. `init` overrides the
/// configured initialization (used by ablations and tests).
AdaptOutcome adapt_cvp(const Tensor& x, const Backbone& backbone, const SslModel& ssl, const AdaptConfig& cfg,
                       std::optional<CvpParams> init = std::nullopt);
AdaptOutcome adapt_additive_vp(const Tensor& x, const Backbone& backbone, const SslModel& ssl, const AdaptConfig& cfg,
                               VpVariant variant);
AdaptOutcome adapt_lvp(const Tensor& x, const Backbone& backbone, const SslModel& ssl, const AdaptConfig& cfg);

/// SSL-loss fine-tuning of `scope` (kAll or kBnAffine), then restoration.
AdaptOutcome adapt_weights(const Tensor& x, Backbone& backbone, const SslModel& ssl, const AdaptConfig& cfg,
                           TrainScope scope);
/// Eval with batch statistics in place of running statistics.
Prediction bn_statistics_adapt(const Tensor& x, const Backbone& backbone);
/// Entropy minimization over BN affine weights with batch statistics.
AdaptOutcome tent_episodic(const Tensor& x, Backbone& backbone, const AdaptConfig& cfg);
/// Marginal-entropy adaptation of all weights on `memo_copies` augmentations
/// of a single image [1, C, H, W]; returns the predicted label.
int memo_single(const Tensor& image, Backbone& backbone, const AdaptConfig& cfg, std::uint64_t seed);
/// memo_single over every image of a batch.
AdaptOutcome memo_batch(const Tensor& x, Backbone& backbone, const AdaptConfig& cfg);

/// Copies `snapshot` into `live` and verifies the result bit for bit;
/// throws IntegrityError on any mismatch.
void restore_snapshot(ParameterSet& live, const ParameterSet& snapshot);

// ---------------------------------------------------------------------------
// Method registry. A method is an optional weight adaptation followed by an
// optional prompt, e.g. "tent+cvp".

enum class WeightMethod { kNone, kBn, kTent, kFt, kPft, kMemo };
enum class PromptMethod { kNone, kCvp, kVpPatch, kVpPadding, kLvp };

struct Method {
  WeightMethod weight = WeightMethod::kNone;
  PromptMethod prompt = PromptMethod::kNone;

  std::string name() const;
  bool is_prompt_only() const { return weight == WeightMethod::kNone && prompt != PromptMethod::kNone; }
  bool operator==(const Method&) const = default;
};

/// "standard", "bn", "tent", "ft", "pft", "memo", "cvp", "vp-patch",
/// "vp-padding", "lvp", or "<weight>+<prompt>". MEMO does not compose.
Method parse_method(std::string_view name);

/// Runs one method on one batch using `workspace` as the mutable model copy.
/// The workspace is restored before returning.
AdaptOutcome run_method(const Method& method, const Tensor& x, Backbone& workspace, const SslModel& ssl,
                        const AdaptConfig& cfg);

}  // namespace cvpb
