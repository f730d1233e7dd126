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

// Random views for the contrastive objective, expressed as bilinear
// resampling plans so that gradients flow back to the source pixels.

#pragma once

#include <cstdint>
#include <vector>

#include "cvpb/ops.hpp"
#include "cvpb/tensor.hpp"

namespace cvpb {

struct AugmentConfig {
  bool crop = true;  // random resized crop
  float crop_scale_min = 0.5f;
  float crop_scale_max = 1.0f;
  float crop_ratio_min = 3.0f / 4.0f;
  float crop_ratio_max = 4.0f / 3.0f;
  bool flip = true;
  bool rotate = true;
  float max_rotation_deg = 90.0f;  // angles drawn from [-max, max]

  static AugmentConfig none() { return {false, 1.0f, 1.0f, 1.0f, 1.0f, false, false, 0.0f}; }
};

/// Geometry of one sampled view.
struct ViewParams {
  float crop_x = 0.0f, crop_y = 0.0f, crop_w = 0.0f, crop_h = 0.0f;
  bool flip = false;
  float angle_deg = 0.0f;
};

/// n_views views of each of N images. View v of image i sits at row
/// v * N + i, so the positives of row a are the rows a' != a with
/// a' % N == a % N.
struct ViewPlan {
  int batch = 0;
  int n_views = 0;
  std::vector<ViewParams> views;
  ad::ResamplePlan resample;

  int total() const { return batch * n_views; }
  /// M x M 0-1 matrix of positive pairs.
  Tensor pair_indicator() const;
};

/// Draws one independent view per (view, image). Requires n_views >= 2.
ViewPlan sample_views(int batch, int height, int width, int n_views, std::uint64_t seed,
                      const AugmentConfig& cfg = {});

/// 4 exact quarter-turn rotations of every image (0, 90, 180, 270 degrees
/// counterclockwise); row r * N + i holds image i rotated by r quarter turns.
ad::ResamplePlan quarter_turn_plan(int batch, int height, int width);

struct ContrastiveBatch {
  Tensor views;
  Tensor pair_indicator;
  ViewPlan plan;
};

ContrastiveBatch augment_views(const Tensor& x, int n_views, std::uint64_t seed, const AugmentConfig& cfg = {});

/// Pair indicator for n_views views of `batch` images in view-major order.
Tensor pair_indicator(int batch, int n_views);

}  // namespace cvpb
