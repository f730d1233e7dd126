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

#include "cvpb/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cvpb/rng.hpp"

namespace cvpb {
namespace {

// Appends four bilinear taps for source position (sy, sx), clamped to the
// image so that out-of-frame samples replicate the border.
void push_taps(ad::ResamplePlan& plan, double sy, double sx) {
  const int h = plan.in_h, w = plan.in_w;
  sy = std::clamp(sy, 0.0, double(h - 1));
  sx = std::clamp(sx, 0.0, double(w - 1));
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const float fy = static_cast<float>(sy - y0), fx = static_cast<float>(sx - x0);
  plan.tap.insert(plan.tap.end(), {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1});
  plan.weight.insert(plan.weight.end(),
                     {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx});
}

ViewParams draw_view(Rng& rng, int h, int w, const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ViewParams v{0.0f, 0.0f, float(w), float(h), false, 0.0f};
  if (cfg.crop) {
    const double area = h * w * (cfg.crop_scale_min + (cfg.crop_scale_max - cfg.crop_scale_min) * u(rng));
    const double log_lo = std::log(cfg.crop_ratio_min), log_hi = std::log(cfg.crop_ratio_max);
    const double ratio = std::exp(log_lo + (log_hi - log_lo) * u(rng));
    const double cw = std::min<double>(w, std::sqrt(area * ratio));
    const double ch = std::min<double>(h, std::sqrt(area / ratio));
    v.crop_w = static_cast<float>(cw);
    v.crop_h = static_cast<float>(ch);
    v.crop_x = static_cast<float>((w - cw) * u(rng));
    v.crop_y = static_cast<float>((h - ch) * u(rng));
  }
  if (cfg.flip) v.flip = u(rng) < 0.5;
  if (cfg.rotate) v.angle_deg = static_cast<float>((2.0 * u(rng) - 1.0) * cfg.max_rotation_deg);
  return v;
}

}  // namespace

Tensor pair_indicator(int batch, int n_views) {
  const int m = batch * n_views;
  Tensor y({m, m});
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      if (a != b && a % batch == b % batch) y[static_cast<std::size_t>(a) * m + b] = 1.0f;
  return y;
}

Tensor ViewPlan::pair_indicator() const { return cvpb::pair_indicator(batch, n_views); }

ViewPlan sample_views(int batch, int height, int width, int n_views, std::uint64_t seed, const AugmentConfig& cfg) {
  if (n_views < 2) throw std::invalid_argument("augment_views: n_views must be >= 2");
  if (batch < 1) throw std::invalid_argument("augment_views: empty batch");
  ViewPlan plan;
  plan.batch = batch;
  plan.n_views = n_views;
  auto& r = plan.resample;
  r.in_h = r.out_h = height;
  r.in_w = r.out_w = width;
  const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
  for (int v = 0; v < n_views; ++v)
    for (int i = 0; i < batch; ++i) {
      Rng rng = keyed_rng({seed, 0x56494557ULL, static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(i)});
      const ViewParams p = draw_view(rng, height, width, cfg);
      plan.views.push_back(p);
      r.source.push_back(i);
      const double th = p.angle_deg * std::numbers::pi / 180.0;
      const double c = std::cos(th), s = std::sin(th);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          // Output pixel -> flip -> rotate about the center -> crop box.
          const double fx = p.flip ? width - 1 - x : x;
          const double dx = fx - cx, dy = y - cy;
          const double ry = cy + s * dx + c * dy, rx = cx + c * dx - s * dy;
          const double sy = p.crop_y + (ry + 0.5) * p.crop_h / height - 0.5;
          const double sx = p.crop_x + (rx + 0.5) * p.crop_w / width - 0.5;
          push_taps(r, sy, sx);
        }
    }
  return plan;
}

ad::ResamplePlan quarter_turn_plan(int batch, int height, int width) {
  if (height != width) throw ShapeError("quarter turns need square images");
  ad::ResamplePlan r;
  r.in_h = r.out_h = height;
  r.in_w = r.out_w = width;
  const int n = height;
  for (int turn = 0; turn < 4; ++turn)
    for (int i = 0; i < batch; ++i) {
      r.source.push_back(i);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          int sy = y, sx = x;
          switch (turn) {
            case 1: sy = x; sx = n - 1 - y; break;
            case 2: sy = n - 1 - y; sx = n - 1 - x; break;
            case 3: sy = n - 1 - x; sx = y; break;
            default: break;
          }
          const int t = sy * n + sx;
          r.tap.insert(r.tap.end(), {t, t, t, t});
          r.weight.insert(r.weight.end(), {1.0f, 0.0f, 0.0f, 0.0f});
        }
    }
  return r;
}

ContrastiveBatch augment_views(const Tensor& x, int n_views, std::uint64_t seed, const AugmentConfig& cfg) {
  require_nchw(x, "augment_views");
  ContrastiveBatch out;
  out.plan = sample_views(x.dim(0), x.dim(2), x.dim(3), n_views, seed, cfg);
  ad::Tape tape;
  out.views = ad::resample(tape.constant(x), out.plan.resample).value();
  out.pair_indicator = out.plan.pair_indicator();
  return out;
}

}  // namespace cvpb
