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

#include "cvpb/prompts.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cvpb/ops.hpp"
#include "gradcheck.hpp"

namespace cvpb {
namespace {

using testing::gradcheck;
using testing::random_tensor;

// Direct replicate-padded depthwise correlation.
Tensor naive_cvp(const Tensor& x, const Tensor& k, float lambda) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), ks = k.dim(0), r = ks / 2;
  Tensor out(x.shape());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          double acc = 0.0;
          for (int dy = 0; dy < ks; ++dy)
            for (int dx = 0; dx < ks; ++dx) {
              const int sy = std::clamp(y + dy - r, 0, h - 1), sx = std::clamp(xx + dx - r, 0, w - 1);
              acc += double(k[static_cast<std::size_t>(dy * ks + dx)]) * x.at(i, ch, sy, sx);
            }
          out.at(i, ch, y, xx) = x.at(i, ch, y, xx) + static_cast<float>(lambda * acc);
        }
  return out;
}

TEST(CvpInit, FixedKernelsAreSharpness) {
  const CvpParams p3 = init_cvp(KernelInit::kFixed, 3, {}, 0);
  const float want3[9] = {0, -1, 0, -1, 5, -1, 0, -1, 0};
  for (int i = 0; i < 9; ++i) EXPECT_EQ(p3.kernel[static_cast<std::size_t>(i)], want3[i]);
  const CvpParams p5 = init_cvp(KernelInit::kFixed, 5, {}, 0);
  float sum = 0.0f;
  for (float v : p5.kernel.data()) sum += v;
  EXPECT_EQ(sum, 1.0f);
  EXPECT_EQ(p5.kernel[12], 5.0f);
  EXPECT_EQ(p5.kernel[7], -1.0f);
  EXPECT_EQ(p5.kernel[0], 0.0f);
}

TEST(CvpInit, RandomKernelBoundsAndLambdaMidpoint) {
  const CvpParams p = init_cvp(KernelInit::kRandom, 5, {0.5f, 3.0f}, 9);
  for (float v : p.kernel.data()) EXPECT_LE(std::abs(v), 1.0f / 25.0f);
  EXPECT_FLOAT_EQ(p.lambda, 1.75f);
  EXPECT_TRUE(p.kernel.bit_equal(init_cvp(KernelInit::kRandom, 5, {0.5f, 3.0f}, 9).kernel));
  EXPECT_FALSE(p.kernel.bit_equal(init_cvp(KernelInit::kRandom, 5, {0.5f, 3.0f}, 10).kernel));
}

TEST(CvpInit, RejectsEvenKernelAndInvertedRange) {
  EXPECT_THROW(init_cvp(KernelInit::kRandom, 4, {}, 0), std::invalid_argument);
  EXPECT_THROW(init_cvp(KernelInit::kRandom, 3, {2.0f, 1.0f}, 0), std::invalid_argument);
  EXPECT_THROW(parse_kernel_init("gauss"), std::invalid_argument);
  EXPECT_EQ(parse_kernel_init(kernel_init_name(KernelInit::kRandom)), KernelInit::kRandom);
}

TEST(CvpInit, ParameterCounts) {
  EXPECT_EQ(init_cvp(KernelInit::kFixed, 3, {}, 0).trainable_count(), 10u);
  EXPECT_EQ(init_cvp(KernelInit::kFixed, 5, {}, 0).trainable_count(), 26u);
  EXPECT_EQ(init_cvp(KernelInit::kRandom, 7, {}, 0).trainable_count(), 50u);
}

TEST(ApplyCvp, MatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 3, 6, 7}, rng, 0.0f, 1.0f);
  CvpParams p = init_cvp(KernelInit::kRandom, 3, {}, 4);
  p.lambda = 1.3f;
  const Tensor got = apply_cvp(x, p);
  const Tensor want = naive_cvp(x, p.kernel, p.lambda);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
}

TEST(ApplyCvp, ConstantImageUnderSharpness) {
  // The sharpness kernel sums to 1, so a constant c maps to c + lambda * c.
  const Tensor x({1, 3, 5, 5}, 0.2f);
  CvpParams p = init_cvp(KernelInit::kFixed, 3, {}, 0);
  p.lambda = 2.0f;
  const Tensor y = apply_cvp(x, p);
  for (float v : y.data()) EXPECT_NEAR(v, 0.6f, 1e-6);
}

TEST(ApplyCvp, ZeroLambdaOrKernelIsBitwiseIdentity) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3, 3, 8, 8}, rng, 0.0f, 1.0f);
  CvpParams p = init_cvp(KernelInit::kRandom, 3, {}, 1);
  p.lambda = 0.0f;
  EXPECT_TRUE(apply_cvp(x, p).bit_equal(x));
  p.lambda = 1.0f;
  p.kernel.fill(0.0f);
  EXPECT_TRUE(apply_cvp(x, p).bit_equal(x));
}

TEST(ApplyCvp, ProjectClampsLambda) {
  CvpParams p = init_cvp(KernelInit::kFixed, 3, {0.5f, 3.0f}, 0);
  p.lambda = 7.0f;
  p.project();
  EXPECT_EQ(p.lambda, 3.0f);
  p.lambda = -1.0f;
  p.project();
  EXPECT_EQ(p.lambda, 0.5f);
  p.project();
  EXPECT_EQ(p.lambda, 0.5f);
}

TEST(ApplyCvp, FiniteDifferenceGradient) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = trial % 2 ? 3 : 5;
    const Tensor w = random_tensor({2, 2, 5, 6}, rng);
    const double err = gradcheck(
        [&w](ad::Tape&, const std::vector<ad::Var>& v) { return ad::weighted_sum(apply_cvp(v[0], v[1], v[2]), w); },
        {random_tensor({2, 2, 5, 6}, rng, 0.0f, 1.0f), random_tensor({k, k}, rng),
         random_tensor({1}, rng, 0.5f, 3.0f)});
    EXPECT_LT(err, 1e-3) << "trial " << trial;
  }
}

TEST(AdditiveVp, ParameterCountsAndRatio) {
  const auto patch = init_additive_vp(VpVariant::kPatch, 3, 32, 32);
  const auto pad = init_additive_vp(VpVariant::kPadding, 3, 32, 32, 1);
  EXPECT_EQ(patch.trainable_count(), 3072u);
  EXPECT_EQ(pad.trainable_count(), 3u * (4 * 32 - 4));
  EXPECT_EQ(init_additive_vp(VpVariant::kPadding, 3, 32, 32, 2).trainable_count(), 3u * (32 * 32 - 28 * 28));
  EXPECT_LT(10.0 / 3072.0, 0.01);
  EXPECT_LT(26.0 / 3072.0, 0.01);
}

TEST(AdditiveVp, ZeroEpsilonIsBitwiseIdentity) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng, 0.0f, 1.0f);
  auto p = init_additive_vp(VpVariant::kPatch, 3, 8, 8, 1, NormKind::kLinf, 0.0f);
  p.v = random_tensor({3, 8, 8}, rng);
  p.project();
  EXPECT_TRUE(apply_additive_vp(x, p).bit_equal(x));
}

TEST(AdditiveVp, BroadcastsMaskedPrompt) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({2, 1, 4, 4}, rng);
  auto p = init_additive_vp(VpVariant::kPadding, 1, 4, 4, 1, NormKind::kLinf, kUnbounded);
  p.v.fill(0.5f);
  p.project();
  const Tensor y = apply_additive_vp(x, p);
  for (int i = 0; i < 2; ++i)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        const bool edge = r == 0 || c == 0 || r == 3 || c == 3;
        EXPECT_FLOAT_EQ(y.at(i, 0, r, c), x.at(i, 0, r, c) + (edge ? 0.5f : 0.0f));
      }
}

TEST(AdditiveVp, Projections) {
  std::mt19937_64 rng(6);
  auto p = init_additive_vp(VpVariant::kPatch, 3, 6, 6);
  p.v = random_tensor({3, 6, 6}, rng);
  p.project();
  for (float v : p.v.data()) EXPECT_LE(std::abs(v), kDefaultVpEpsilon);
  const Tensor once = p.v;
  p.project();
  EXPECT_TRUE(p.v.bit_equal(once));

  auto q = init_additive_vp(VpVariant::kPatch, 3, 6, 6, 1, NormKind::kL2, 0.5f);
  q.v = random_tensor({3, 6, 6}, rng);
  q.project();
  double n2 = 0;
  for (float v : q.v.data()) n2 += double(v) * v;
  EXPECT_NEAR(std::sqrt(n2), 0.5, 1e-5);

  auto u = init_additive_vp(VpVariant::kPatch, 3, 6, 6, 1, NormKind::kLinf, kUnbounded);
  u.v = random_tensor({3, 6, 6}, rng, -4.0f, 4.0f);
  const Tensor before = u.v;
  u.project();
  EXPECT_TRUE(u.v.bit_equal(before));
}

TEST(AdditiveVp, FiniteDifferenceGradient) {
  std::mt19937_64 rng(7);
  const Tensor mask = padding_mask(2, 5, 5, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = random_tensor({3, 2, 5, 5}, rng);
    const double err = gradcheck(
        [&](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::weighted_sum(apply_additive_vp(v[0], v[1], mask), w);
        },
        {random_tensor({3, 2, 5, 5}, rng), random_tensor({2, 5, 5}, rng)});
    EXPECT_LT(err, 1e-3) << "trial " << trial;
  }
}

TEST(Lvp, InitRejectsBadRank) {
  const Tensor x({1, 3, 8, 6}, 0.5f);
  EXPECT_THROW(lvp_init(x, 7), std::invalid_argument);
  EXPECT_THROW(lvp_init(x, -1), std::invalid_argument);
  EXPECT_NO_THROW(lvp_init(x, 6));
}

TEST(Lvp, ParameterCount) {
  const Tensor x({2, 3, 32, 32}, 0.5f);
  EXPECT_EQ(lvp_init(x, 3).trainable_count_per_image(), 3u * (32 * 3 + 3 + 32 * 3));
  EXPECT_EQ(lvp_init(x, 0).trainable_count_per_image(), 0u);
}

TEST(Lvp, ZeroSpectrumAndZeroRankAreBitwiseIdentity) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng, 0.0f, 1.0f);
  EXPECT_TRUE(lvp_apply(x, lvp_init(x, 0)).bit_equal(x));
  LvpParams p = lvp_init(x, 3);
  for (auto& f : p.factors) f.s.fill(0.0f);
  EXPECT_TRUE(lvp_apply(x, p).bit_equal(x));
}

TEST(Lvp, FullRankDoublesTheInput) {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({2, 3, 6, 5}, rng, 0.0f, 1.0f);
  const Tensor y = lvp_apply(x, lvp_init(x, 5));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], 2.0f * x[i], 1e-4);
}

TEST(Lvp, PackUnpackRoundTrip) {
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({2, 2, 6, 6}, rng);
  LvpParams p = lvp_init(x, 2);
  const Tensor d0 = p.delta();
  p.unpack(p.packed_u(), p.packed_s(), p.packed_vt());
  EXPECT_TRUE(p.delta().bit_equal(d0));
  EXPECT_THROW(p.unpack(p.packed_u(), p.packed_s(), Tensor({4, 3, 6})), ShapeError);
}

TEST(Lvp, ProjectionIsRankBoundedAndIdempotent) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({1, 2, 7, 7}, rng);
  LvpParams p = lvp_init(x, 2);
  // Perturb the packed factors so the triple leaves the SVD manifold.
  Tensor u = p.packed_u(), s = p.packed_s(), vt = p.packed_vt();
  for (float& v : u.data()) v += 0.1f;
  for (float& v : vt.data()) v -= 0.05f;
  p.unpack(u, s, vt);
  const Tensor before = p.delta();
  p.project();
  const Tensor once = p.delta();
  EXPECT_LT(frobenius_distance(before, once), 1e-4);
  for (const auto& f : p.factors)
    for (std::size_t k = 2; k < f.s.numel(); ++k) EXPECT_EQ(f.s[k], 0.0f);
  p.project();
  EXPECT_LT(frobenius_distance(once, p.delta()), 1e-4);
}

TEST(Lvp, FiniteDifferenceGradient) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const int r = 1 + trial % 3;
    const Tensor w = random_tensor({2, 2, 5, 4}, rng);
    const double err = gradcheck(
        [&w](ad::Tape&, const std::vector<ad::Var>& v) {
          return ad::weighted_sum(lvp_apply(v[0], v[1], v[2], v[3]), w);
        },
        {random_tensor({2, 2, 5, 4}, rng), random_tensor({4, 5, r}, rng), random_tensor({4, r}, rng),
         random_tensor({4, r, 4}, rng)});
    EXPECT_LT(err, 1e-3) << "trial " << trial;
  }
}

}  // namespace
}  // namespace cvpb
