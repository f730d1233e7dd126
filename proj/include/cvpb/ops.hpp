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

// Differentiable operations recorded on a Tape. Every op is differentiable
// with respect to all of its Var operands; Tensor operands are constants.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cvpb/autodiff.hpp"

namespace cvpb::ad {

enum class Padding { kZero, kReplicate };

enum class BnMode {
  kEval,        // running statistics
  kTrain,       // batch statistics, running statistics updated
  kBatchStats,  // batch statistics, running statistics untouched
};

inline constexpr float kBnEpsilon = 1e-5f;
inline constexpr float kBnMomentum = 0.1f;

// Elementwise and reductions.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, float s);
/// x * s where s holds a single element.
Var scale_by(Var x, Var s);
Var relu(Var x);
Var log(Var x);
Var sum(Var x);
Var mean(Var x);
Var sum_squares(Var x);
/// sum(w * x) for a constant weight tensor of x's shape.
Var weighted_sum(Var x, const Tensor& w);
Var reshape(Var x, Shape shape);

// Matrices, rows of [N, D] tensors.
Var matmul(Var a, Var b);
Var transpose(Var a);
/// x[N,in] * w[out,in]^T + b[out]
Var linear(Var x, Var w, Var b);
Var softmax(Var logits);
/// Row-wise log-softmax. With exclude_diagonal the normalizer of row i skips
/// column i and the diagonal output is fixed at 0.
Var log_softmax(Var logits, bool exclude_diagonal = false);
/// Mean negative log-likelihood of integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);
/// Unit-norm rows; an all-zero row maps to zero with zero gradient.
Var l2_normalize(Var x);
Var sum_rows(Var x);
/// Row-wise cosine similarity of two [N, D] tensors, shape [N].
Var cosine_similarity(Var a, Var b);
/// Mean over rows, [N, C] -> [1, C].
Var column_mean(Var x);

// Images, NCHW.
Var conv2d(Var x, Var kernel, Padding padding);
/// One [k, k] kernel applied to every channel independently.
Var depthwise_conv2d(Var x, Var kernel, Padding padding);
Var maxpool2x2(Var x);
Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                BnMode mode, float momentum = kBnMomentum, float eps = kBnEpsilon);

/// Per-output-pixel bilinear taps into a source image; channels share taps.
struct ResamplePlan {
  int out_h = 0;
  int out_w = 0;
  int in_h = 0;
  int in_w = 0;
  std::vector<int> source;        // source image per output image
  std::vector<std::int32_t> tap;  // [out_n * out_h * out_w * 4] plane offsets
  std::vector<float> weight;      // matching bilinear weights

  int out_n() const { return static_cast<int>(source.size()); }
};
Var resample(Var x, const ResamplePlan& plan);

/// Throws NumericError naming `where` if `t` holds NaN or Inf.
void check_finite(const Tensor& t, const char* where);

}  // namespace cvpb::ad
