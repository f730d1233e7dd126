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

#pragma once

#include <span>
#include <vector>

#include "cvpb/tensor.hpp"

namespace cvpb {

/// theta <- theta - step * sign(grad), with sign(0) = 0.
void sign_step(Tensor& param, const Tensor& grad, float step);

struct SgdHyper {
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
};

/// Heavy-ball SGD: v <- mu*v + (g + wd*theta); theta <- theta - lr*v.
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdHyper hyper) : hyper_(hyper) {}

  /// params[i] is updated with grads[i]; velocity buffers are created on the
  /// first call and must keep the same alignment afterwards.
  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);
  void set_lr(float lr) { hyper_.lr = lr; }
  const SgdHyper& hyper() const { return hyper_; }

 private:
  SgdHyper hyper_;
  std::vector<Tensor> velocity_;
};

/// Cosine-annealed learning rate at step t of total (t in [0, total]).
float cosine_lr(float base, int t, int total);

}  // namespace cvpb
