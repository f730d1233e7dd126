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

#include "cvpb/adapters.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cvpb/corruption.hpp"
#include "cvpb/data.hpp"

namespace cvpb {
namespace {

// A small backbone trained once on shapes, plus an SSL head fitted on top.
struct Fixture {
  Backbone backbone;
  SslHead head;
  RotationHead rotation;
  Dataset clean;

  Fixture() {
    BackboneSpec spec;
    spec.widths = {8, 16, 16, 16};
    spec.num_classes = 4;
    backbone = Backbone(spec, 3);
    const Dataset train = synth_shapes({1000, 4, 32, 0.04f, 0.5f}, 21);
    TrainHyper h;
    h.steps = 150;
    h.batch_size = 32;
    h.seed = 4;
    train_backbone(backbone, train, h);
    backbone.freeze();
    head = SslHead(backbone.feature_dim(), 5);
    SslHyper sh;
    sh.steps = 20;
    sh.batch_size = 16;
    train_ssl_head(backbone, head, train.images, sh);
    rotation = RotationHead(backbone.feature_dim(), 6);
    clean = synth_shapes({256, 4, 32, 0.04f, 0.5f}, 22);
  }

  SslModel ssl() const { return {SslTask::kContrastive, &head, &rotation}; }

  Tensor batch(int index, int n = 8) const { return clean.slice(index * n, (index + 1) * n).images; }

  Tensor corrupted(int index, CorruptionKind kind = CorruptionKind::kGaussianNoise, int n = 8) const {
    return corrupt(batch(index, n), {kind, 3, static_cast<std::uint64_t>(index)});
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

AdaptConfig small_cfg(std::uint64_t seed = 0) {
  AdaptConfig c;
  c.iters = 3;
  c.seed = seed;
  return c;
}

TEST(AdaptConfig, ValidateRejectsBadFields) {
  AdaptConfig c;
  EXPECT_NO_THROW(c.validate());
  c.iters = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.kernel_size = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.lambda_range = {3.0f, 0.5f};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.memo_copies = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(AdaptCvp, ZeroItersReturnsInitialPrompt) {
  const auto& f = fx();
  AdaptConfig c = small_cfg(1);
  c.iters = 0;
  const Tensor x = f.corrupted(0);
  const CvpParams init = init_cvp(KernelInit::kRandom, 3, c.lambda_range, 77);
  const AdaptOutcome out = adapt_cvp(x, f.backbone, f.ssl(), c, init);
  ASSERT_EQ(out.loss_trace.size(), 1u);
  EXPECT_FALSE(out.fallback);
  Tensor want = apply_cvp(x, init);
  for (float& v : want.data()) v = std::clamp(v, 0.0f, 1.0f);
  EXPECT_TRUE(out.adapted.bit_equal(want));
  EXPECT_EQ(out.final_loss, out.loss_trace[0]);
}

TEST(AdaptCvp, FinalLossNeverExceedsInitial) {
  const auto& f = fx();
  const auto fp = f.backbone.params().fingerprint();
  const auto head_fp = f.head.params.fingerprint();
  for (int b = 0; b < 12; ++b) {
    const AdaptOutcome out = adapt_cvp(f.corrupted(b), f.backbone, f.ssl(), small_cfg(b));
    ASSERT_EQ(out.loss_trace.size(), 4u);
    EXPECT_LE(out.final_loss, out.initial_loss()) << "batch " << b;
    for (float v : out.adapted.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  EXPECT_EQ(f.backbone.params().fingerprint(), fp);
  EXPECT_EQ(f.head.params.fingerprint(), head_fp);
}

TEST(AdaptCvp, FallbackRestoresInitialKernel) {
  // Huge steps throw the kernel far from its start; whenever that raises the
  // loss the output must be exactly the T = 0 output.
  const auto& f = fx();
  int fired = 0;
  for (int b = 0; b < 12; ++b) {
    AdaptConfig c = small_cfg(b);
    c.kernel_step = 5.0f;
    c.lambda_step = 5.0f;
    c.lambda_range = {0.5f, 50.0f};
    const Tensor x = f.corrupted(b);
    const CvpParams init = init_cvp(KernelInit::kRandom, 3, c.lambda_range, 100 + b);
    const AdaptOutcome out = adapt_cvp(x, f.backbone, f.ssl(), c, init);
    if (!out.fallback) continue;
    ++fired;
    EXPECT_GT(out.loss_trace.back(), out.loss_trace.front());
    AdaptConfig c0 = c;
    c0.iters = 0;
    EXPECT_TRUE(out.adapted.bit_equal(adapt_cvp(x, f.backbone, f.ssl(), c0, init).adapted));
    EXPECT_EQ(out.final_loss, out.initial_loss());
  }
  EXPECT_GT(fired, 0);
}

TEST(AdaptCvp, DisabledFallbackReportsLastLoss) {
  const auto& f = fx();
  AdaptConfig c = small_cfg(3);
  c.fallback = false;
  const AdaptOutcome out = adapt_cvp(f.corrupted(3), f.backbone, f.ssl(), c);
  EXPECT_FALSE(out.fallback);
  EXPECT_EQ(out.final_loss, out.loss_trace.back());
}

TEST(AdaptCvp, ZeroLambdaLeavesPredictionsBitwise) {
  const auto& f = fx();
  AdaptConfig c = small_cfg(2);
  c.lambda_range = {0.0f, 0.0f};
  const Tensor x = f.corrupted(2);
  const AdaptOutcome out = adapt_cvp(x, f.backbone, f.ssl(), c);
  EXPECT_TRUE(out.adapted.bit_equal(x));
  EXPECT_TRUE(out.logits.bit_equal(predict(f.backbone, x).logits));
}

TEST(AdaptCvp, RejectsUnfrozenBackboneAndMissingHead) {
  const auto& f = fx();
  Backbone open = f.backbone;
  open.unfreeze();
  EXPECT_THROW(adapt_cvp(f.batch(0), open, f.ssl(), small_cfg()), std::logic_error);
  SslModel none{SslTask::kContrastive, nullptr, nullptr};
  EXPECT_THROW(adapt_cvp(f.batch(0), f.backbone, none, small_cfg()), std::invalid_argument);
}

TEST(AdaptCvp, RotationObjectiveWorks) {
  const auto& f = fx();
  SslModel rot{SslTask::kRotation, nullptr, &f.rotation};
  const AdaptOutcome out = adapt_cvp(f.corrupted(4), f.backbone, rot, small_cfg(4));
  EXPECT_LE(out.final_loss, out.initial_loss());
  EXPECT_TRUE(std::isfinite(out.final_loss));
}

TEST(AdaptAdditiveVp, ZeroEpsilonIsIdentity) {
  const auto& f = fx();
  AdaptConfig c = small_cfg(5);
  c.epsilon = 0.0f;
  const Tensor x = f.corrupted(5);
  const AdaptOutcome out = adapt_additive_vp(x, f.backbone, f.ssl(), c, VpVariant::kPatch);
  EXPECT_TRUE(out.adapted.bit_equal(x));
  EXPECT_TRUE(out.logits.bit_equal(predict(f.backbone, x).logits));
}

TEST(AdaptAdditiveVp, StaysInsideTheBall) {
  const auto& f = fx();
  AdaptConfig c = small_cfg(6);
  c.iters = 6;
  c.fallback = false;
  const Tensor x = f.corrupted(6);
  const AdaptOutcome out = adapt_additive_vp(x, f.backbone, f.ssl(), c, VpVariant::kPatch);
  float worst = 0.0f;
  for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(out.adapted[i] - x[i]));
  EXPECT_LE(worst, 8.0f / 255.0f + 1e-6f);
  EXPECT_GT(worst, 0.0f);
}

TEST(AdaptAdditiveVp, PaddingOnlyTouchesTheFrame) {
  const auto& f = fx();
  AdaptConfig c = small_cfg(7);
  c.fallback = false;
  const Tensor x = f.corrupted(7);
  const AdaptOutcome out = adapt_additive_vp(x, f.backbone, f.ssl(), c, VpVariant::kPadding);
  int frame_diffs = 0;
  for (int i = 0; i < x.dim(0); ++i)
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < 32; ++y)
        for (int xx = 0; xx < 32; ++xx) {
          const bool edge = y == 0 || xx == 0 || y == 31 || xx == 31;
          const bool same = out.adapted.at(i, ch, y, xx) == x.at(i, ch, y, xx);
          if (!edge) ASSERT_TRUE(same);
          frame_diffs += !same;
        }
  EXPECT_GT(frame_diffs, 0);
}

TEST(AdaptLvp, RankZeroIsIdentityAndFullRankDoubles) {
  const auto& f = fx();
  AdaptConfig c = small_cfg(8);
  c.rank = 0;
  const Tensor x = f.corrupted(8);
  const AdaptOutcome out = adapt_lvp(x, f.backbone, f.ssl(), c);
  EXPECT_TRUE(out.adapted.bit_equal(x));

  c.rank = 32;
  c.iters = 0;
  const AdaptOutcome full = adapt_lvp(x, f.backbone, f.ssl(), c);
  for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_NEAR(full.adapted[i], std::min(2.0f * x[i], 1.0f), 1e-4);
}

TEST(AdaptLvp, FallbackKeepsFinalLossBounded) {
  const auto& f = fx();
  for (int b = 0; b < 6; ++b) {
    const AdaptOutcome out = adapt_lvp(f.corrupted(b), f.backbone, f.ssl(), small_cfg(b));
    EXPECT_EQ(out.loss_trace.size(), 4u);
    EXPECT_LE(out.final_loss, out.initial_loss());
  }
}

TEST(RestoreSnapshot, DetectsMismatch) {
  const auto& f = fx();
  Backbone other(BackboneSpec{}, 1);
  ParameterSet live = f.backbone.params();
  EXPECT_THROW(restore_snapshot(live, other.params()), IntegrityError);
  EXPECT_NO_THROW(restore_snapshot(live, f.backbone.params()));
}

TEST(AdaptWeights, ZeroStepsMatchesFrozenAndRestores) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  AdaptConfig c = small_cfg(9);
  c.weight_iters = 0;
  const Tensor x = f.corrupted(9);
  const AdaptOutcome out = adapt_weights(x, ws, f.ssl(), c, TrainScope::kAll);
  EXPECT_TRUE(out.logits.bit_equal(predict(f.backbone, x).logits));
  EXPECT_TRUE(ws.params().bit_equal(f.backbone.params()));
  EXPECT_TRUE(ws.frozen());
}

TEST(AdaptWeights, BnAffineScopeOnlyMovesGammaBeta) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  AdaptConfig c = small_cfg(10);
  c.weight_iters = 2;
  c.weight_lr = 0.05f;
  const AdaptOutcome pft = adapt_weights(f.corrupted(10), ws, f.ssl(), c, TrainScope::kBnAffine);
  ASSERT_FALSE(pft.changed.empty());
  for (const auto& name : pft.changed) EXPECT_TRUE(in_scope(TrainScope::kBnAffine, name)) << name;
  EXPECT_TRUE(ws.params().bit_equal(f.backbone.params()));

  const AdaptOutcome ft = adapt_weights(f.corrupted(10), ws, f.ssl(), c, TrainScope::kAll);
  EXPECT_TRUE(std::find(ft.changed.begin(), ft.changed.end(), "block0.conv.weight") != ft.changed.end());
  EXPECT_TRUE(ws.params().bit_equal(f.backbone.params()));
}

TEST(BnStatistics, AgreesWithEvalOnCleanData) {
  const auto& f = fx();
  const Tensor x = f.clean.slice(0, 64).images;
  const auto bn = bn_statistics_adapt(x, f.backbone);
  const auto ev = predict(f.backbone, x);
  int agree = 0;
  for (std::size_t i = 0; i < bn.labels.size(); ++i) agree += bn.labels[i] == ev.labels[i];
  EXPECT_GE(agree, 0.9 * 64);
}

TEST(BnStatistics, GuardsDegenerateBatches) {
  const auto& f = fx();
  EXPECT_THROW(bn_statistics_adapt(f.batch(0, 1), f.backbone), std::invalid_argument);
  Tensor dup({4, 3, 32, 32});
  const Tensor one = f.batch(0, 1);
  for (int i = 0; i < 4; ++i) std::copy_n(one.ptr(), one.numel(), dup.ptr() + i * one.numel());
  const auto fp = f.backbone.params().fingerprint();
  const auto p = bn_statistics_adapt(dup, f.backbone);
  for (float v : p.logits.data()) ASSERT_TRUE(std::isfinite(v));
  EXPECT_EQ(f.backbone.params().fingerprint(), fp);
}

TEST(Tent, ZeroStepsEqualsBatchStatistics) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  AdaptConfig c = small_cfg(11);
  c.weight_iters = 0;
  const Tensor x = f.corrupted(11);
  const AdaptOutcome out = tent_episodic(x, ws, c);
  EXPECT_TRUE(out.logits.bit_equal(bn_statistics_adapt(x, f.backbone).logits));
}

TEST(Tent, EntropyDescendsAndRestores) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  AdaptConfig c;
  c.weight_iters = 5;
  int descended = 0;
  const int trials = 20;
  for (int b = 0; b < trials; ++b) {
    const AdaptOutcome out = tent_episodic(f.corrupted(b % 16, CorruptionKind::kContrast), ws, c);
    ASSERT_EQ(out.loss_trace.size(), 6u);
    descended += out.loss_trace.back() <= out.loss_trace.front();
    ASSERT_TRUE(ws.params().bit_equal(f.backbone.params()));
    for (const auto& name : out.changed) ASSERT_TRUE(in_scope(TrainScope::kBnAffine, name)) << name;
  }
  EXPECT_GE(descended, 0.95 * trials);
}

TEST(Memo, IdenticalCopiesReduceToSingleEntropy) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  AdaptConfig c;
  c.augment = AugmentConfig::none();
  c.weight_iters = 0;
  const Tensor x = f.batch(0, 1);
  const AdaptOutcome out = memo_batch(x, ws, c);
  EXPECT_NEAR(out.loss_trace.front(), entropy(predict(f.backbone, x).logits), 1e-5);
  EXPECT_EQ(out.predictions, predict(f.backbone, x).labels);
}

TEST(Memo, AdaptsAndRestores) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  AdaptConfig c;
  c.weight_iters = 2;
  const int label = memo_single(f.corrupted(0, CorruptionKind::kGaussianNoise, 1), ws, c, 3);
  EXPECT_GE(label, 0);
  EXPECT_LT(label, 4);
  EXPECT_TRUE(ws.params().bit_equal(f.backbone.params()));
  EXPECT_THROW(memo_single(f.batch(0, 2), ws, c, 3), ShapeError);
}

TEST(Methods, NamesRoundTrip) {
  for (const char* name : {"standard", "bn", "tent", "ft", "pft", "memo", "cvp", "vp-patch", "vp-padding", "lvp",
                           "tent+cvp", "bn+lvp", "pft+vp-patch"})
    EXPECT_EQ(parse_method(name).name(), name);
  EXPECT_THROW(parse_method("memo+cvp"), std::invalid_argument);
  EXPECT_THROW(parse_method("cvp+tent"), std::invalid_argument);
  EXPECT_THROW(parse_method("sharpen"), std::invalid_argument);
}

TEST(Methods, StandardIsFrozenPrediction) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  const Tensor x = f.corrupted(1);
  const AdaptOutcome out = run_method(parse_method("standard"), x, ws, f.ssl(), small_cfg());
  EXPECT_TRUE(out.logits.bit_equal(predict(f.backbone, x).logits));
  EXPECT_EQ(out.wall_ms, 0.0);
}

TEST(Methods, IdentityComposeEqualsCvp) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  const Tensor x = f.corrupted(2);
  const AdaptOutcome a = run_method(parse_method("cvp"), x, ws, f.ssl(), small_cfg(2));
  const AdaptOutcome b = adapt_cvp(x, f.backbone, f.ssl(), small_cfg(2));
  EXPECT_TRUE(a.logits.bit_equal(b.logits));
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Methods, TentWithFrozenIdentityPromptEqualsTent) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  AdaptConfig c = small_cfg(3);
  c.lambda_range = {0.0f, 0.0f};
  const Tensor x = f.corrupted(3);
  const AdaptOutcome composed = run_method(parse_method("tent+cvp"), x, ws, f.ssl(), c);
  const AdaptOutcome tent = tent_episodic(x, ws, c);
  EXPECT_EQ(composed.predictions, tent.predictions);
  EXPECT_TRUE(composed.logits.bit_equal(tent.logits));
  EXPECT_TRUE(ws.params().bit_equal(f.backbone.params()));
}

TEST(Methods, EpisodesAreOrderIndependent) {
  const auto& f = fx();
  Backbone ws = f.backbone;
  AdaptConfig c = small_cfg(4);
  const Tensor b1 = f.corrupted(4), b2 = f.corrupted(5);
  for (const char* name : {"tent", "pft", "tent+cvp"}) {
    const Method m = parse_method(name);
    const AdaptOutcome alone = run_method(m, b2, ws, f.ssl(), c);
    run_method(m, b1, ws, f.ssl(), c);
    const AdaptOutcome after = run_method(m, b2, ws, f.ssl(), c);
    EXPECT_TRUE(alone.logits.bit_equal(after.logits)) << name;
  }
}

}  // namespace
}  // namespace cvpb
