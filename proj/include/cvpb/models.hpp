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

// Desk-scale classifier, self-supervised heads and their training loops.
//
// Backbone: 4 x [conv3x3 -> batchnorm -> relu], widths 32/64/128/128, 2x2
// max-pool after blocks 2 and 4. Features are the flattened output of the
// last pool (penultimate, before the classifier), 128 * (S/4)^2 values.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvpb/augment.hpp"
#include "cvpb/data.hpp"
#include "cvpb/ops.hpp"
#include "cvpb/parameters.hpp"

namespace cvpb {

struct BackboneSpec {
  int in_channels = 3;
  int image_size = 32;
  std::array<int, 4> widths{32, 64, 128, 128};
  int num_classes = 10;
};

/// Which backbone weights become trainable in a forward pass.
enum class TrainScope { kNone, kAll, kBnAffine };

bool in_scope(TrainScope scope, const std::string& name);

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneSpec& spec, std::uint64_t seed);

  const BackboneSpec& spec() const { return spec_; }
  int feature_dim() const;
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// A frozen backbone refuses to be trained; prompt adapters require it.
  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }
  bool frozen() const { return frozen_; }

  struct Outputs {
    ad::Var features;
    ad::Var logits;
  };

  /// kTrain mode updates the running statistics. Weights in `scope` are
  /// tape parameters, returned through `bound` when given.
  Outputs forward(ad::Tape& tape, ad::Var x, ad::BnMode mode, TrainScope scope = TrainScope::kNone,
                  VarMap* bound = nullptr);
  /// Read-only pass; kTrain is rejected.
  Outputs forward(ad::Tape& tape, ad::Var x, ad::BnMode mode) const;

 private:
  Outputs run(ad::Tape& tape, ad::Var x, ad::BnMode mode, TrainScope scope, VarMap* bound,
              ParameterSet* stats) const;

  BackboneSpec spec_;
  ParameterSet params_;
  bool frozen_ = false;
};

/// MLP feature_dim -> 128 -> 64 with unit-norm outputs.
struct SslHead {
  SslHead() = default;
  SslHead(int feature_dim, std::uint64_t seed, int hidden = 128, int out = 64);

  ParameterSet params;
  float tau = 0.5f;

  ad::Var forward(ad::Tape& tape, ad::Var features, VarMap* bound = nullptr, bool trainable = false) const;
};

/// Linear feature_dim -> 4 predicting the quarter-turn count.
struct RotationHead {
  RotationHead() = default;
  RotationHead(int feature_dim, std::uint64_t seed);

  ParameterSet params;

  ad::Var forward(ad::Tape& tape, ad::Var features, VarMap* bound = nullptr, bool trainable = false) const;
};

/// Mean over positive pairs of -log(exp(cos_ij / tau) / sum_{k != i} exp(cos_ik / tau)).
/// Rows are normalized internally, so cos is exact for any nonzero input.
/// Anchors whose indicator row is empty contribute nothing.
ad::Var contrastive_loss(ad::Var embeddings, const Tensor& pair_indicator, float tau);

/// Contrastive objective of x through frozen backbone and head on the views of `plan`.
ad::Var contrastive_objective(ad::Tape& tape, ad::Var x, const Backbone& backbone, const SslHead& head,
                              const ViewPlan& plan, ad::BnMode mode = ad::BnMode::kEval);

/// Cross-entropy of predicting which quarter turn was applied, over all four
/// turns of every image.
ad::Var rotation_loss(ad::Tape& tape, ad::Var x, const Backbone& backbone, const RotationHead& head,
                      ad::BnMode mode = ad::BnMode::kEval);

/// Mean Shannon entropy (nats) of the softmax rows.
ad::Var entropy(ad::Var logits);
double entropy(const Tensor& logits);
/// Entropy of the mean softmax over rows.
ad::Var marginal_entropy(ad::Var logits);

struct Prediction {
  Tensor logits;
  std::vector<int> labels;
};

/// Eval-mode logits and argmax labels, processed in chunks.
Prediction predict(const Backbone& backbone, const Tensor& x, int chunk = 128);
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

struct TrainHyper {
  int steps = 1000;
  int batch_size = 64;
  // The wide flattened classifier is unstable above roughly 0.01.
  float lr = 0.005f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  bool cosine = true;
  bool augment = true;  // random flips and small shifts
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<float> loss_trace;
  double train_accuracy = 0.0;  // on the last pass over the data
};

/// Supervised cross-entropy training with momentum SGD.
TrainReport train_backbone(Backbone& backbone, const Dataset& data, const TrainHyper& hyper);

struct SslHyper {
  int steps = 200;
  int batch_size = 64;
  float lr = 0.05f;
  float momentum = 0.9f;
  int n_views = 3;
  AugmentConfig augment;
  std::uint64_t seed = 0;
};

/// Trains only the head on views of clean images; the backbone must be frozen.
TrainReport train_ssl_head(const Backbone& backbone, SslHead& head, const Tensor& images, const SslHyper& hyper);
TrainReport train_rotation_head(const Backbone& backbone, RotationHead& head, const Tensor& images,
                                const SslHyper& hyper);

}  // namespace cvpb
