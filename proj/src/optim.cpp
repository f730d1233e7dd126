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

#include "cvpb/optim.hpp"

#include <cmath>
#include <numbers>

namespace cvpb {

void sign_step(Tensor& param, const Tensor& grad, float step) {
  if (param.shape() != grad.shape()) {
    throw ShapeError("sign_step: parameter " + to_string(param.shape()) + " vs gradient " +
                     to_string(grad.shape()));
  }
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const float g = grad[i];
    if (g > 0.0f) param[i] -= step;
    else if (g < 0.0f) param[i] += step;
  }
}

void SgdMomentum::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) throw ShapeError("SgdMomentum: params and grads misaligned");
  if (params.empty()) return;
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (Tensor* p : params) velocity_.emplace_back(p->shape(), 0.0f);
  }
  if (velocity_.size() != params.size()) throw ShapeError("SgdMomentum: parameter count changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& v = velocity_[k];
    if (p.shape() != g.shape() || v.shape() != p.shape()) {
      throw ShapeError("SgdMomentum: shape mismatch at parameter " + std::to_string(k));
    }
    for (std::size_t i = 0; i < p.numel(); ++i) {
      v[i] = hyper_.momentum * v[i] + g[i] + hyper_.weight_decay * p[i];
      p[i] -= hyper_.lr * v[i];
    }
  }
}

float cosine_lr(float base, int t, int total) {
  if (total <= 0) return base;
  const double frac = static_cast<double>(t) / total;
  return static_cast<float>(0.5 * base * (1.0 + std::cos(std::numbers::pi * frac)));
}

}  // namespace cvpb
