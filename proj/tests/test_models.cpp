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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cvpb/augment.hpp"
#include "cvpb/corruption.hpp"
#include "cvpb/data.hpp"
#include "cvpb/models.hpp"
#include "gradcheck.hpp"

namespace cvpb {
namespace {

using testing::gradcheck;
using testing::random_tensor;

// Narrow variant of the default layout; keeps unit tests fast.
BackboneSpec small_spec(int classes) {
  BackboneSpec s;
  s.widths = {8, 16, 16, 16};
  s.num_classes = classes;
  return s;
}

TEST(ParameterSet, FingerprintTracksBits) {
  ParameterSet a;
  a.add("w", Tensor({2}, 1.0f));
  a.add("stat", Tensor({1}, 0.0f), false);
  ParameterSet b = a;
  EXPECT_TRUE(a.bit_equal(b));
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.get("w")[1] = std::nextafter(1.0f, 2.0f);
  EXPECT_FALSE(a.bit_equal(b));
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  b.assign_from(a);
  EXPECT_TRUE(a.bit_equal(b));
  EXPECT_EQ(a.trainable_count(), 2u);
  EXPECT_THROW(a.add("w", Tensor({1})), std::invalid_argument);
  EXPECT_THROW(a.get("missing"), std::out_of_range);
}

TEST(Backbone, LayoutMatchesDefaults) {
  const Backbone net(BackboneSpec{}, 1);
  EXPECT_EQ(net.feature_dim(), 128 * 8 * 8);
  EXPECT_EQ(net.params().get("block2.conv.weight").shape(), (Shape{128, 64, 3, 3}));
  EXPECT_EQ(net.params().get("fc.weight").shape(), (Shape{10, 8192}));
  // Roughly 300K trainable values.
  EXPECT_GT(net.params().trainable_count(), 250000u);
  EXPECT_LT(net.params().trainable_count(), 350000u);
}

TEST(Backbone, ScopeSelectsTensors) {
  EXPECT_TRUE(in_scope(TrainScope::kBnAffine, "block1.bn.gamma"));
  EXPECT_TRUE(in_scope(TrainScope::kBnAffine, "block3.bn.beta"));
  EXPECT_FALSE(in_scope(TrainScope::kBnAffine, "block1.conv.weight"));
  EXPECT_FALSE(in_scope(TrainScope::kBnAffine, "fc.weight"));
  EXPECT_TRUE(in_scope(TrainScope::kAll, "fc.bias"));
  EXPECT_FALSE(in_scope(TrainScope::kNone, "fc.bias"));
}

TEST(Predict, DuplicateRowsAndBatchIndependence) {
  const Backbone net(small_spec(4), 3);
  const Dataset d = synth_shapes({6, 4, 32, 0.04f}, 5);
  Tensor x = d.images;
  const std::size_t per = x.numel() / 6;
  std::copy_n(x.ptr(), per, x.ptr() + per);  // image 1 := image 0
  const Prediction batched = predict(net, x);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(batched.logits[static_cast<std::size_t>(j)], batched.logits[4u + j]);
  for (int i = 0; i < 6; ++i) {
    const Prediction single = predict(net, x.slice_batch(i, i + 1));
    for (int j = 0; j < 4; ++j)
      EXPECT_NEAR(single.logits[static_cast<std::size_t>(j)], batched.logits[static_cast<std::size_t>(i * 4 + j)], 1e-5);
  }
  EXPECT_THROW(predict(net, Tensor({1, 3, 16, 16})), ShapeError);
  EXPECT_THROW(predict(net, Tensor({1, 1, 32, 32})), ShapeError);
}

TEST(TrainBackbone, ZeroStepsIsChance) {
  const Backbone net(small_spec(4), 11);
  const Dataset d = synth_shapes({1000, 4, 32, 0.04f}, 6);
  const double acc = accuracy(predict(net, d.images).labels, d.labels);
  EXPECT_NEAR(acc, 0.25, 0.05);
}

TEST(TrainBackbone, SeparableTwoClassReachesNinetyFive) {
  Backbone net(small_spec(2), 12);
  // Zero variability: each class is one template plus noise, linearly separable.
  const Dataset d = synth_shapes({1000, 2, 32, 0.04f, 0.0f}, 7);
  TrainHyper h;
  h.steps = 200;
  h.batch_size = 32;
  h.seed = 1;
  const TrainReport r = train_backbone(net, d, h);
  EXPECT_EQ(r.loss_trace.size(), 200u);
  EXPECT_GE(r.train_accuracy, 0.95);
  EXPECT_GE(accuracy(predict(net, d.images).labels, d.labels), 0.95);
}

TEST(TrainBackbone, RejectsSmallDataAndFrozen) {
  Backbone net(small_spec(2), 1);
  const Dataset tiny = synth_shapes({100, 2, 32, 0.04f}, 1);
  EXPECT_THROW(train_backbone(net, tiny, {}), std::invalid_argument);
  net.freeze();
  const Dataset d = synth_shapes({1000, 2, 32, 0.04f}, 1);
  EXPECT_THROW(train_backbone(net, d, {}), std::logic_error);
}

TEST(TrainBackbone, DivergenceAborts) {
  Backbone net(small_spec(2), 1);
  net.params().get("fc.bias")[0] = std::numeric_limits<float>::quiet_NaN();
  const Dataset d = synth_shapes({1000, 2, 32, 0.04f}, 1);
  TrainHyper h;
  h.steps = 2;
  EXPECT_THROW(train_backbone(net, d, h), NumericError);
}

TEST(AugmentViews, PairIndicatorConstruction) {
  const Tensor y = pair_indicator(2, 2);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) EXPECT_EQ(y[static_cast<std::size_t>(a * 4 + b)], std::abs(a - b) == 2 ? 1.0f : 0.0f);
  const Tensor y3 = pair_indicator(5, 3);
  for (int a = 0; a < 15; ++a) {
    float row = 0;
    for (int b = 0; b < 15; ++b) {
      row += y3[static_cast<std::size_t>(a * 15 + b)];
      EXPECT_EQ(y3[static_cast<std::size_t>(a * 15 + b)], y3[static_cast<std::size_t>(b * 15 + a)]);
    }
    EXPECT_EQ(row, 2.0f);
    EXPECT_EQ(y3[static_cast<std::size_t>(a * 16)], 0.0f);
  }
  EXPECT_THROW(sample_views(2, 8, 8, 1, 0), std::invalid_argument);
}

TEST(AugmentViews, DisabledReplicatesInput) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 3, 8, 8}, rng, 0.0f, 1.0f);
  const ContrastiveBatch b = augment_views(x, 3, 9, AugmentConfig::none());
  const std::size_t per = x.numel();
  for (int v = 0; v < 3; ++v)
    for (std::size_t i = 0; i < per; ++i) ASSERT_EQ(b.views[v * per + i], x[i]);
}

TEST(AugmentViews, RotationAnglesWithinBounds) {
  const ViewPlan p = sample_views(500, 4, 4, 2, 3);
  ASSERT_EQ(p.views.size(), 1000u);
  float lo = 0.0f, hi = 0.0f;
  for (const auto& v : p.views) {
    EXPECT_GE(v.angle_deg, -90.0f);
    EXPECT_LE(v.angle_deg, 90.0f);
    lo = std::min(lo, v.angle_deg);
    hi = std::max(hi, v.angle_deg);
  }
  // The draws cover most of the interval.
  EXPECT_LT(lo, -80.0f);
  EXPECT_GT(hi, 80.0f);
}

TEST(AugmentViews, QuarterTurnsCycle) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({1, 1, 5, 5}, rng);
  ad::Tape tape;
  const Tensor r = ad::resample(tape.constant(x), quarter_turn_plan(1, 5, 5)).value();
  // One quarter turn counterclockwise moves the top-right corner to the top-left.
  EXPECT_EQ(r[25 + 0], x[4]);
  // Two turns reverse the pixel order.
  for (int i = 0; i < 25; ++i) EXPECT_EQ(r[static_cast<std::size_t>(50 + i)], x[static_cast<std::size_t>(24 - i)]);
}

double brute_force_contrastive(const std::vector<std::vector<double>>& z, const Tensor& y, double tau) {
  const std::size_t m = z.size();
  auto cos = [&](std::size_t a, std::size_t b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < z[a].size(); ++k) {
      d += z[a][k] * z[b][k];
      na += z[a][k] * z[a][k];
      nb += z[b][k] * z[b][k];
    }
    return d / std::sqrt(na * nb);
  };
  double total = 0, pairs = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (y[i * m + j] == 0.0f) continue;
      double denom = 0;
      for (std::size_t k = 0; k < m; ++k)
        if (k != i) denom += std::exp(cos(i, k) / tau);
      total += -std::log(std::exp(cos(i, j) / tau) / denom);
      pairs += 1;
    }
  return total / pairs;
}

TEST(ContrastiveLoss, IdenticalEmbeddingsGiveLogMMinusOne) {
  for (int m : {4, 6, 12}) {
    ad::Tape tape;
    const Tensor z({m, 3}, 0.5f);
    const float loss = contrastive_loss(tape.constant(z), pair_indicator(m / 2, 2), 0.5f).value()[0];
    EXPECT_NEAR(loss, std::log(m - 1.0), 1e-5);
  }
}

TEST(ContrastiveLoss, MatchesBruteForce) {
  const std::vector<std::vector<double>> z{{1.0, 0.0}, {0.6, 0.8}, {0.8, 0.6}, {-0.28, 0.96}};
  Tensor t({4, 2});
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 2; ++k) t[static_cast<std::size_t>(i * 2 + k)] = static_cast<float>(z[i][k]);
  const Tensor y = pair_indicator(2, 2);
  ad::Tape tape;
  EXPECT_NEAR(contrastive_loss(tape.constant(t), y, 0.5f).value()[0], brute_force_contrastive(z, y, 0.5), 1e-5);
}

TEST(ContrastiveLoss, AligningPositivesLowersLoss) {
  // Positives (0,2) and (1,3); move view 2 from orthogonal to identical with view 0.
  auto eval = [](float angle) {
    Tensor t = Tensor::from({4, 2}, {1, 0, 0, 1, std::cos(angle), std::sin(angle), -0.6f, 0.8f});
    ad::Tape tape;
    return contrastive_loss(tape.constant(t), pair_indicator(2, 2), 0.5f).value()[0];
  };
  EXPECT_LT(eval(0.0f), eval(1.5707963f));
}

TEST(ContrastiveLoss, EmptyRowsContributeNothing) {
  Tensor y({4, 4});
  y[0 * 4 + 2] = y[2 * 4 + 0] = 1.0f;  // only anchors 0 and 2 have positives
  std::mt19937_64 rng(5);
  const Tensor z = random_tensor({4, 3}, rng);
  ad::Tape tape;
  const float got = contrastive_loss(tape.constant(z), y, 0.5f).value()[0];
  std::vector<std::vector<double>> zz(4, std::vector<double>(3));
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 3; ++k) zz[i][k] = z[static_cast<std::size_t>(i * 3 + k)];
  EXPECT_NEAR(got, brute_force_contrastive(zz, y, 0.5), 1e-5);
}

TEST(ContrastiveLoss, FiniteDifferenceGradient) {
  std::mt19937_64 rng(6);
  const Tensor y = pair_indicator(3, 2);
  for (int trial = 0; trial < 10; ++trial) {
    const double err = gradcheck(
        [&y](ad::Tape&, const std::vector<ad::Var>& v) { return contrastive_loss(v[0], y, 0.5f); },
        {random_tensor({6, 4}, rng)});
    EXPECT_LT(err, 1e-3) << "trial " << trial;
  }
}

TEST(SslHead, EmbeddingsAreUnitNorm) {
  const SslHead head(40, 2);
  std::mt19937_64 rng(7);
  ad::Tape tape;
  const Tensor z = head.forward(tape, tape.constant(random_tensor({5, 40}, rng))).value();
  ASSERT_EQ(z.shape(), (Shape{5, 64}));
  for (int i = 0; i < 5; ++i) {
    double n = 0;
    for (int k = 0; k < 64; ++k) n += double(z[static_cast<std::size_t>(i * 64 + k)]) * z[static_cast<std::size_t>(i * 64 + k)];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  }
}

TEST(TrainSslHead, OneStepLeavesBackboneBitIdentical) {
  Backbone net(small_spec(4), 1);
  SslHead head(net.feature_dim(), 2);
  const Dataset d = synth_shapes({16, 4, 32, 0.04f}, 3);
  SslHyper h;
  h.steps = 1;
  h.batch_size = 8;
  EXPECT_THROW(train_ssl_head(net, head, d.images, h), std::logic_error);
  net.freeze();
  const ParameterSet before = net.params();
  const ParameterSet head_before = head.params;
  train_ssl_head(net, head, d.images, h);
  EXPECT_TRUE(net.params().bit_equal(before));
  EXPECT_FALSE(head.params.bit_equal(head_before));
}

TEST(TrainSslHead, LossDecreases) {
  Backbone net(small_spec(4), 1);
  net.freeze();
  SslHead head(net.feature_dim(), 2);
  const Dataset d = synth_shapes({256, 4, 32, 0.04f}, 4);
  SslHyper h;
  h.steps = 60;
  h.batch_size = 16;
  const TrainReport r = train_ssl_head(net, head, d.images, h);
  ASSERT_EQ(r.loss_trace.size(), 60u);
  double head_mean = 0, tail_mean = 0;
  for (int i = 0; i < 10; ++i) {
    head_mean += r.loss_trace[static_cast<std::size_t>(i)];
    tail_mean += r.loss_trace[static_cast<std::size_t>(50 + i)];
  }
  EXPECT_LT(tail_mean, head_mean);
}

TEST(RotationLoss, UniformHeadGivesLogFour) {
  Backbone net(small_spec(4), 1);
  net.freeze();
  RotationHead head(net.feature_dim(), 1);
  head.params.get("fc.weight").fill(0.0f);
  head.params.get("fc.bias").fill(0.3f);
  const Dataset d = synth_shapes({3, 4, 32, 0.04f}, 1);
  ad::Tape tape;
  EXPECT_NEAR(rotation_loss(tape, tape.constant(d.images), net, head).value()[0], std::log(4.0), 1e-6);
}

TEST(RotationLoss, RiggedNearestCentroidHeadIsNearZero) {
  Backbone net(small_spec(4), 1);
  net.freeze();
  const Dataset d = synth_shapes({1, 4, 32, 0.04f}, 2);
  // Features of the four turns of one image.
  ad::Tape tape;
  ad::Var turned = ad::resample(tape.constant(d.images), quarter_turn_plan(1, 32, 32));
  const Tensor f = net.forward(tape, turned, ad::BnMode::kEval).features.value();
  const int dim = f.dim(1);
  std::vector<double> mean(static_cast<std::size_t>(dim), 0.0);
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < dim; ++k) mean[static_cast<std::size_t>(k)] += f[static_cast<std::size_t>(r * dim + k)] / 4.0;
  // logit_r(f) = a * (<g_r, f - mean> - |g_r|^2 / 2) with g_r = f_r - mean: a scaled nearest-centroid rule.
  RotationHead head(dim, 1);
  const float a = 50.0f;
  for (int r = 0; r < 4; ++r) {
    double gm = 0.0, gg = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double g = f[static_cast<std::size_t>(r * dim + k)] - mean[static_cast<std::size_t>(k)];
      head.params.get("fc.weight")[static_cast<std::size_t>(r * dim + k)] = static_cast<float>(a * g);
      gm += g * mean[static_cast<std::size_t>(k)];
      gg += g * g;
    }
    head.params.get("fc.bias")[static_cast<std::size_t>(r)] = static_cast<float>(a * (-gm - 0.5 * gg));
  }
  ad::Tape t2;
  EXPECT_LT(rotation_loss(t2, t2.constant(d.images), net, head).value()[0], 1e-3);
}

TEST(Entropy, ClosedForms) {
  EXPECT_NEAR(entropy(Tensor({2, 7}, 0.3f)), std::log(7.0), 1e-6);
  // Gap 50: the two minority terms are about 50 * e^-50 each.
  EXPECT_LT(entropy(Tensor::from({1, 3}, {50.0f, 0.0f, 0.0f})), 1e-18);
  const std::vector<double> l{1.0, 2.0, 0.5};
  double z = 0, h = 0;
  for (double v : l) z += std::exp(v);
  for (double v : l) h -= std::exp(v) / z * std::log(std::exp(v) / z);
  EXPECT_NEAR(entropy(Tensor::from({1, 3}, {1.0f, 2.0f, 0.5f})), h, 1e-6);
}

TEST(Entropy, MarginalOverTwoAugmentations) {
  const Tensor l = Tensor::from({2, 3}, {1.0f, 0.0f, -1.0f, 0.0f, 2.0f, 0.5f});
  double p[2][3];
  for (int i = 0; i < 2; ++i) {
    double z = 0;
    for (int k = 0; k < 3; ++k) z += std::exp(l[static_cast<std::size_t>(i * 3 + k)]);
    for (int k = 0; k < 3; ++k) p[i][k] = std::exp(l[static_cast<std::size_t>(i * 3 + k)]) / z;
  }
  double h = 0;
  for (int k = 0; k < 3; ++k) {
    const double m = 0.5 * (p[0][k] + p[1][k]);
    h -= m * std::log(m);
  }
  ad::Tape tape;
  EXPECT_NEAR(marginal_entropy(tape.constant(l)).value()[0], h, 1e-6);
  // Identical copies reduce to the single-sample entropy.
  const Tensor same = Tensor::from({2, 3}, {1.0f, 0.0f, -1.0f, 1.0f, 0.0f, -1.0f});
  EXPECT_NEAR(marginal_entropy(tape.constant(same)).value()[0], entropy(same.slice_batch(0, 1)), 1e-6);
}

TEST(Accuracy, CountsAndRejectsEmpty) {
  const std::vector<int> p{0, 1, 2, 3}, y{0, 1, 0, 3};
  EXPECT_DOUBLE_EQ(accuracy(p, y), 0.75);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
}

}  // namespace
}  // namespace cvpb
