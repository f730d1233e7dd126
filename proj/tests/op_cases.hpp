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

// Random-instance generators for every differentiable op, checked against
// central differences by the unit and acceptance suites.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cvpb/augment.hpp"
#include "cvpb/models.hpp"
#include "cvpb/ops.hpp"
#include "cvpb/prompts.hpp"
#include "gradcheck.hpp"

namespace cvpb::testing {

struct OpCase {
  const char* name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
  testing::LossBuilder loss;
  // Prompt applications are linear in each single coordinate, so central
  // differences are exact up to rounding and a wider step only reduces it.
  float h = 1e-3f;
};

inline std::vector<OpCase> op_cases() {
  using ad::Padding;
  using ad::Tape;
  using ad::Var;

  auto readout = [](const Var& y) {
    // Fixed pseudo-random readout so every output element matters.
    Tensor w(y.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = std::sin(1.7 * static_cast<double>(i) + 0.3);
    return ad::weighted_sum(y, w);
  };
  std::vector<OpCase> cases;
  cases.push_back({"conv2d_zero",
                   [](auto& r) { return std::vector{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::conv2d(v[0], v[1], Padding::kZero)); }});
  cases.push_back({"conv2d_replicate",
                   [](auto& r) { return std::vector{random_tensor({1, 2, 5, 4}, r), random_tensor({2, 2, 3, 3}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::conv2d(v[0], v[1], Padding::kReplicate)); }});
  cases.push_back({"depthwise_conv2d",
                   [](auto& r) { return std::vector{random_tensor({2, 3, 5, 5}, r), random_tensor({3, 3}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) {
                     return readout(ad::depthwise_conv2d(v[0], v[1], Padding::kReplicate));
                   }});
  cases.push_back({"batchnorm2d_train",
                   [](auto& r) {
                     return std::vector{random_tensor({3, 2, 3, 3}, r), random_tensor({2}, r, 0.5f, 1.5f), random_tensor({2}, r)};
                   },
                   [=](Tape&, const std::vector<Var>& v) {
                     Tensor rm({2}, 0.0f), rv({2}, 1.0f);
                     return readout(ad::batchnorm2d(v[0], v[1], v[2], rm, rv, ad::BnMode::kTrain));
                   }});
  cases.push_back({"batchnorm2d_eval",
                   [](auto& r) {
                     return std::vector{random_tensor({2, 2, 3, 3}, r), random_tensor({2}, r, 0.5f, 1.5f), random_tensor({2}, r)};
                   },
                   [=](Tape&, const std::vector<Var>& v) {
                     Tensor rm = Tensor::from({2}, {0.1f, -0.2f}), rv = Tensor::from({2}, {0.8f, 1.3f});
                     return readout(ad::batchnorm2d(v[0], v[1], v[2], rm, rv, ad::BnMode::kEval));
                   }});
  cases.push_back({"add_sub_mul",
                   [](auto& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) {
                     return readout(ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], ad::scale(v[1], 0.5f))));
                   }});
  cases.push_back({"scale_by",
                   [](auto& r) { return std::vector{random_tensor({2, 5}, r), random_tensor({1}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::scale_by(v[0], v[1])); }});
  cases.push_back({"relu",
                   [](auto& r) { return std::vector{random_away_from_zero({4, 5}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::relu(v[0])); }});
  cases.push_back({"log",
                   [](auto& r) { return std::vector{random_tensor({3, 3}, r, 0.5f, 2.0f)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::log(v[0])); }});
  cases.push_back({"mean_sum_squares",
                   [](auto& r) { return std::vector{random_tensor({3, 3}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) {
                     return ad::add(ad::mean(v[0]), ad::scale(ad::sum_squares(v[0]), 0.3f));
                   }});
  cases.push_back({"matmul_transpose",
                   [](auto& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({5, 4}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::matmul(v[0], ad::transpose(v[1]))); }});
  cases.push_back({"linear",
                   [](auto& r) { return std::vector{random_tensor({4, 6}, r), random_tensor({3, 6}, r), random_tensor({3}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::linear(v[0], v[1], v[2])); }});
  cases.push_back({"softmax",
                   [](auto& r) { return std::vector{random_tensor({3, 5}, r, -2.0f, 2.0f)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::softmax(v[0])); }});
  cases.push_back({"log_softmax_excluding_diagonal",
                   [](auto& r) { return std::vector{random_tensor({4, 4}, r, -2.0f, 2.0f)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::log_softmax(v[0], true)); }});
  cases.push_back({"cross_entropy",
                   [](auto& r) { return std::vector{random_tensor({4, 3}, r, -2.0f, 2.0f)}; },
                   [](Tape&, const std::vector<Var>& v) {
                     const std::vector<int> labels{0, 2, 1, 2};
                     return ad::cross_entropy(v[0], labels);
                   }});
  cases.push_back({"l2_normalize_cosine",
                   [](auto& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) {
                     return ad::add(readout(ad::l2_normalize(v[0])), readout(ad::cosine_similarity(v[0], v[1])));
                   }});
  cases.push_back({"column_mean",
                   [](auto& r) { return std::vector{random_tensor({4, 3}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::column_mean(v[0])); }});
  cases.push_back({"maxpool2x2",
                   [](auto& r) {
                     // Distinct values spaced 0.01 apart keep the argmax away from ties.
                     Tensor t({2, 2, 4, 4});
                     std::vector<float> vals(t.numel());
                     for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01f * static_cast<float>(i) - 0.3f;
                     std::shuffle(vals.begin(), vals.end(), r);
                     std::copy(vals.begin(), vals.end(), t.data().begin());
                     return std::vector{t};
                   },
                   [=](Tape&, const std::vector<Var>& v) { return readout(ad::maxpool2x2(v[0])); }});
  cases.push_back({"resample",
                   [](auto& r) { return std::vector{random_tensor({2, 2, 4, 4}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) {
                     ad::ResamplePlan plan;
                     plan.in_h = plan.in_w = 4;
                     plan.out_h = plan.out_w = 3;
                     plan.source = {1, 0, 1};
                     for (int o = 0; o < 3; ++o)
                       for (int q = 0; q < 9; ++q)
                         for (int j = 0; j < 4; ++j) {
                           plan.tap.push_back((o * 7 + q * 3 + j * 5) % 16);
                           plan.weight.push_back(0.1f * static_cast<float>(j + 1));
                         }
                     return readout(ad::resample(v[0], plan));
                   }});
  cases.push_back({"contrastive_loss",
                   [](auto& r) { return std::vector{random_tensor({6, 4}, r)}; },
                   [](Tape&, const std::vector<Var>& v) { return contrastive_loss(v[0], pair_indicator(3, 2), 0.5f); }});
  cases.push_back({"cvp",
                   [](auto& r) {
                     return std::vector{random_tensor({2, 2, 5, 6}, r, 0.0f, 1.0f), random_tensor({3, 3}, r),
                                        random_tensor({1}, r, 0.5f, 3.0f)};
                   },
                   [=](Tape&, const std::vector<Var>& v) { return readout(apply_cvp(v[0], v[1], v[2])); },
                   0.1f});
  cases.push_back({"additive_vp_padding",
                   [](auto& r) { return std::vector{random_tensor({3, 2, 5, 5}, r), random_tensor({2, 5, 5}, r)}; },
                   [=](Tape&, const std::vector<Var>& v) {
                     return readout(apply_additive_vp(v[0], v[1], padding_mask(2, 5, 5, 1)));
                   },
                   0.1f});
  cases.push_back({"lvp",
                   [](auto& r) {
                     return std::vector{random_tensor({2, 2, 5, 4}, r), random_tensor({4, 5, 2}, r),
                                        random_tensor({4, 2}, r), random_tensor({4, 2, 4}, r)};
                   },
                   [=](Tape&, const std::vector<Var>& v) { return readout(lvp_apply(v[0], v[1], v[2], v[3])); },
                   0.1f});
  return cases;
}

}  // namespace cvpb::testing
