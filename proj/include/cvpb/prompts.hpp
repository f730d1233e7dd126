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

// Input-space prompts: convolutional (x + lambda * conv(x, k)), additive
// (x + mask * v) and low-rank additive (x + U S V^T per channel).

#pragma once

#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

#include "cvpb/autodiff.hpp"
#include "cvpb/linalg.hpp"
#include "cvpb/tensor.hpp"

namespace cvpb {

// ---------------------------------------------------------------------------
// Convolutional prompt.

enum class KernelInit { kFixed, kRandom };

std::string_view kernel_init_name(KernelInit init);
KernelInit parse_kernel_init(std::string_view name);

struct LambdaRange {
  float lo = 0.5f;
  float hi = 3.0f;
};

struct CvpParams {
  Tensor kernel;  // [k, k], shared by all channels
  float lambda = 0.0f;
  LambdaRange range;

  int k() const { return kernel.dim(0); }
  std::size_t trainable_count() const { return kernel.numel() + 1; }
  /// Clamps lambda into its range.
  void project();
};

/// Sharpness kernel: center 5, 4-neighborhood -1, zero elsewhere (k = 3 or 5).
Tensor sharpness_kernel(int k);

/// kFixed -> sharpness kernel; kRandom -> i.i.d. U(-1/k^2, 1/k^2).
/// Lambda starts at the midpoint of `range`.
CvpParams init_cvp(KernelInit init, int k, LambdaRange range, std::uint64_t seed);

/// x + lambda * depthwise_conv2d(x, kernel) with replicate padding; `lambda`
/// holds one element. Not clipped.
ad::Var apply_cvp(ad::Var x, ad::Var kernel, ad::Var lambda);
Tensor apply_cvp(const Tensor& x, const CvpParams& p);

// ---------------------------------------------------------------------------
// Additive prompt.

enum class VpVariant { kPatch, kPadding };
enum class NormKind { kLinf, kL2 };

inline constexpr float kDefaultVpEpsilon = 8.0f / 255.0f;
inline constexpr float kDefaultVpStep = 2.0f / 255.0f;
inline constexpr float kUnbounded = std::numeric_limits<float>::infinity();

struct AdditiveVpParams {
  Tensor v;     // [C, H, W]
  Tensor mask;  // [C, H, W], 0 or 1
  NormKind norm = NormKind::kLinf;
  float epsilon = kDefaultVpEpsilon;
  float step = kDefaultVpStep;

  /// Number of active (masked) entries.
  std::size_t trainable_count() const;
  /// Zeroes off-mask entries and projects onto the epsilon ball.
  void project();
};

/// Frame of the given width around each channel.
Tensor padding_mask(int channels, int height, int width, int frame);

/// v = 0 with an all-ones (patch) or frame (padding) mask.
AdditiveVpParams init_additive_vp(VpVariant variant, int channels, int height, int width, int frame = 1,
                                  NormKind norm = NormKind::kLinf, float epsilon = kDefaultVpEpsilon,
                                  float step = kDefaultVpStep);

/// x + mask * v, broadcast over the batch.
ad::Var apply_additive_vp(ad::Var x, ad::Var v, const Tensor& mask);
Tensor apply_additive_vp(const Tensor& x, const AdditiveVpParams& p);

// ---------------------------------------------------------------------------
// Low-rank prompt.

/// Per-image, per-channel SVD factors. Full factors are kept; the prompt is
/// the rank-r truncation of each.
struct LvpParams {
  int rank = 0;
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<FactorTriple> factors;  // n * c, image-major

  /// C * (H r + r + W r): the truncated values of one image.
  std::size_t trainable_count_per_image() const;

  /// Leading-r factors packed as U [n*c, h, r], S [n*c, r], Vt [n*c, r, w].
  Tensor packed_u() const;
  Tensor packed_s() const;
  Tensor packed_vt() const;
  /// Writes packed leading-r factors back.
  void unpack(const Tensor& u, const Tensor& s, const Tensor& vt);
  /// Replaces each triple by the SVD of its rank-r reconstruction, with
  /// singular values beyond r set to zero.
  void project();
  /// The additive prompt, [n, c, h, w].
  Tensor delta() const;
};

/// SVD of every channel of every image of x. Requires 0 <= r <= min(H, W).
LvpParams lvp_init(const Tensor& x, int r);

/// Per-slice U diag(S) Vt reshaped to [n, c, h, w].
ad::Var lowrank_delta(ad::Var u, ad::Var s, ad::Var vt, int n, int c);
/// x + lowrank_delta(...); rank 0 returns x.
ad::Var lvp_apply(ad::Var x, ad::Var u, ad::Var s, ad::Var vt);
Tensor lvp_apply(const Tensor& x, const LvpParams& p);

}  // namespace cvpb
