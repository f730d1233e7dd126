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

#include "cvpb/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cvpb/rng.hpp"

namespace cvpb {
namespace {

struct KindName {
  CorruptionKind kind;
  std::string_view name;
};

constexpr KindName kNames[] = {
    {CorruptionKind::kGaussianNoise, "gaussian_noise"},
    {CorruptionKind::kShotNoise, "shot_noise"},
    {CorruptionKind::kImpulseNoise, "impulse_noise"},
    {CorruptionKind::kDefocusBlur, "defocus_blur"},
    {CorruptionKind::kMotionBlur, "motion_blur"},
    {CorruptionKind::kZoomBlur, "zoom_blur"},
    {CorruptionKind::kFog, "fog"},
    {CorruptionKind::kBrightness, "brightness"},
    {CorruptionKind::kContrast, "contrast"},
    {CorruptionKind::kPixelate, "pixelate"},
    {CorruptionKind::kGlassBlur, "glass_blur"},
    {CorruptionKind::kSnow, "snow"},
    {CorruptionKind::kFrost, "frost"},
    {CorruptionKind::kElasticTransform, "elastic_transform"},
    {CorruptionKind::kJpegCompression, "jpeg_compression"},
};

std::size_t kind_slot(CorruptionKind kind) {
  for (std::size_t i = 0; i < kImplementedKinds.size(); ++i)
    if (kImplementedKinds[i] == kind) return i;
  throw std::invalid_argument("corruption not implemented: " + std::string(corruption_name(kind)));
}

void check_severity(int severity) {
  if (severity < 1 || severity > 5)
    throw std::invalid_argument("severity must be in 1..5, got " + std::to_string(severity));
}

std::size_t idx(int c, int h, int w, int height, int width) {
  return (static_cast<std::size_t>(c) * height + h) * width + w;
}

// Same-size 2D filtering of one CHW image with replicate padding.
void filter_image(const float* src, float* dst, int channels, int height, int width,
                  const std::vector<float>& kernel, int ksize) {
  const int r = ksize / 2;
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < ksize; ++dy) {
          const int sy = std::clamp(y + dy - r, 0, height - 1);
          for (int dx = 0; dx < ksize; ++dx) {
            const int sx = std::clamp(x + dx - r, 0, width - 1);
            acc += double(kernel[static_cast<std::size_t>(dy) * ksize + dx]) * src[idx(c, sy, sx, height, width)];
          }
        }
        dst[idx(c, y, x, height, width)] = static_cast<float>(acc);
      }
}

void normalize(std::vector<float>& k) {
  double s = 0.0;
  for (float v : k) s += v;
  for (float& v : k) v = static_cast<float>(v / s);
}

// Disk kernel, each tap weighted by the fraction of its pixel inside the disk.
std::vector<float> disk_kernel(float radius, int& ksize) {
  const int r = static_cast<int>(std::ceil(radius - 0.5f));
  ksize = 2 * r + 1;
  constexpr int kSub = 8;
  std::vector<float> k(static_cast<std::size_t>(ksize) * ksize, 0.0f);
  for (int y = 0; y < ksize; ++y)
    for (int x = 0; x < ksize; ++x) {
      int inside = 0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const float py = y - r - 0.5f + (sy + 0.5f) / kSub;
          const float px = x - r - 0.5f + (sx + 0.5f) / kSub;
          inside += px * px + py * py <= radius * radius;
        }
      k[static_cast<std::size_t>(y) * ksize + x] = static_cast<float>(inside);
    }
  normalize(k);
  return k;
}

// Line segment of the given length through the center, rasterized by dense sampling.
std::vector<float> line_kernel(float length, float angle_deg, int& ksize) {
  const int r = static_cast<int>(std::ceil(length / 2.0f));
  ksize = 2 * r + 1;
  std::vector<float> k(static_cast<std::size_t>(ksize) * ksize, 0.0f);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(theta), dy = -std::sin(theta);
  constexpr int kSamples = 256;
  for (int s = 0; s < kSamples; ++s) {
    const double t = (s + 0.5) / kSamples * length - length / 2.0;
    const int x = static_cast<int>(std::lround(t * dx)) + r;
    const int y = static_cast<int>(std::lround(t * dy)) + r;
    if (x >= 0 && x < ksize && y >= 0 && y < ksize) k[static_cast<std::size_t>(y) * ksize + x] += 1.0f;
  }
  normalize(k);
  return k;
}

float bilinear(const float* plane, int height, int width, double y, double x) {
  y = std::clamp(y, 0.0, double(height - 1));
  x = std::clamp(x, 0.0, double(width - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = plane[y0 * width + x0] * (1 - fx) + plane[y0 * width + x1] * fx;
  const double bot = plane[y1 * width + x0] * (1 - fx) + plane[y1 * width + x1] * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

// Center zoom by `factor` (>= 1), resampled bilinearly back to full size.
void zoom_plane(const float* src, float* dst, int height, int width, double factor) {
  const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      dst[y * width + x] = bilinear(src, height, width, cy + (y - cy) / factor, cx + (x - cx) / factor);
}

// Averages each block x block tile (edge tiles may be partial) and paints it back.
void pixelate_plane(const float* src, float* dst, int height, int width, int block) {
  for (int y0 = 0; y0 < height; y0 += block)
    for (int x0 = 0; x0 < width; x0 += block) {
      const int y1 = std::min(height, y0 + block), x1 = std::min(width, x0 + block);
      double acc = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) acc += src[y * width + x];
      const float mean = static_cast<float>(acc / double((y1 - y0) * (x1 - x0)));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) dst[y * width + x] = mean;
    }
}

void corrupt_image(const float* src, float* dst, int channels, int height, int width,
                   CorruptionKind kind, const SeverityParams& p, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(channels) * height * width;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  switch (kind) {
    case CorruptionKind::kGaussianNoise: {
      std::normal_distribution<float> noise(0.0f, 1.0f);
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] + p.amount * noise(rng);
      break;
    }
    case CorruptionKind::kShotNoise: {
      if (p.amount <= 0.0f) throw std::invalid_argument("shot_noise scale must be positive");
      for (std::size_t i = 0; i < n; ++i) {
        const double rate = std::max(0.0f, src[i]) * double(p.amount);
        std::poisson_distribution<long long> draw(rate > 0.0 ? rate : 1e-300);
        dst[i] = rate > 0.0 ? static_cast<float>(draw(rng) / double(p.amount)) : 0.0f;
      }
      break;
    }
    case CorruptionKind::kImpulseNoise: {
      std::uniform_real_distribution<float> u(0.0f, 1.0f);
      for (std::size_t i = 0; i < n; ++i) {
        const bool flip = u(rng) < p.amount;
        const bool salt = u(rng) < 0.5f;
        dst[i] = flip ? (salt ? 1.0f : 0.0f) : src[i];
      }
      break;
    }
    case CorruptionKind::kDefocusBlur: {
      int ks = 1;
      const auto k = disk_kernel(p.amount, ks);
      filter_image(src, dst, channels, height, width, k, ks);
      break;
    }
    case CorruptionKind::kMotionBlur: {
      int ks = 1;
      const auto k = line_kernel(p.amount, p.angle_deg, ks);
      filter_image(src, dst, channels, height, width, k, ks);
      break;
    }
    case CorruptionKind::kZoomBlur: {
      std::vector<double> acc(src, src + n);
      std::vector<float> tmp(plane);
      int count = 1;
      for (int step = 1; 1.0 + 0.01 * step <= p.amount + 1e-6; ++step, ++count)
        for (int c = 0; c < channels; ++c) {
          zoom_plane(src + c * plane, tmp.data(), height, width, 1.0 + 0.01 * step);
          for (std::size_t i = 0; i < plane; ++i) acc[c * plane + i] += tmp[i];
        }
      for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(acc[i] / count);
      break;
    }
    case CorruptionKind::kFog:
      for (std::size_t i = 0; i < n; ++i) dst[i] = (1.0f - p.amount) * src[i] + p.amount;
      break;
    case CorruptionKind::kBrightness:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] + p.amount;
      break;
    case CorruptionKind::kContrast: {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += src[i];
      mean /= double(n);
      for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>((src[i] - mean) * p.amount + mean);
      break;
    }
    case CorruptionKind::kPixelate:
    {
      const int block = static_cast<int>(std::lround(p.amount));
      if (block < 1) throw std::invalid_argument("pixelate block must be at least 1");
      for (int c = 0; c < channels; ++c) pixelate_plane(src + c * plane, dst + c * plane, height, width, block);
    }
      break;
    default:
      throw std::invalid_argument("corruption not implemented: " + std::string(corruption_name(kind)));
  }
  for (std::size_t i = 0; i < n; ++i) dst[i] = std::clamp(dst[i], 0.0f, 1.0f);
}

SeverityTable make_defaults() {
  SeverityTable t;
  auto put = [&t](CorruptionKind k, std::array<float, 5> amounts, std::array<float, 5> angles = {}) {
    for (int s = 0; s < 5; ++s) t.set(k, s + 1, {amounts[static_cast<std::size_t>(s)], angles[static_cast<std::size_t>(s)]});
  };
  put(CorruptionKind::kGaussianNoise, {0.04f, 0.06f, 0.08f, 0.09f, 0.10f});
  put(CorruptionKind::kShotNoise, {500.0f, 250.0f, 100.0f, 75.0f, 50.0f});
  put(CorruptionKind::kImpulseNoise, {0.01f, 0.02f, 0.03f, 0.05f, 0.07f});
  put(CorruptionKind::kDefocusBlur, {0.75f, 1.0f, 1.25f, 1.5f, 2.0f});
  put(CorruptionKind::kMotionBlur, {3.0f, 5.0f, 7.0f, 9.0f, 11.0f}, {0.0f, 15.0f, 30.0f, 45.0f, 60.0f});
  put(CorruptionKind::kZoomBlur, {1.06f, 1.11f, 1.16f, 1.21f, 1.26f});
  put(CorruptionKind::kFog, {0.2f, 0.3f, 0.4f, 0.5f, 0.6f});
  put(CorruptionKind::kBrightness, {0.05f, 0.1f, 0.15f, 0.2f, 0.3f});
  put(CorruptionKind::kContrast, {0.75f, 0.5f, 0.4f, 0.3f, 0.15f});
  put(CorruptionKind::kPixelate, {2.0f, 3.0f, 4.0f, 5.0f, 6.0f});
  return t;
}

}  // namespace

std::string_view corruption_name(CorruptionKind kind) {
  for (const auto& e : kNames)
    if (e.kind == kind) return e.name;
  return "unknown";
}

CorruptionKind parse_corruption(std::string_view name) {
  for (const auto& e : kNames)
    if (e.name == name) return e.kind;
  throw std::invalid_argument("unknown corruption: " + std::string(name));
}

bool is_implemented(CorruptionKind kind) {
  return std::find(kImplementedKinds.begin(), kImplementedKinds.end(), kind) != kImplementedKinds.end();
}

const SeverityTable& SeverityTable::defaults() {
  static const SeverityTable table = make_defaults();
  return table;
}

const SeverityParams& SeverityTable::at(CorruptionKind kind, int severity) const {
  check_severity(severity);
  return levels_[kind_slot(kind)][static_cast<std::size_t>(severity - 1)];
}

void SeverityTable::set(CorruptionKind kind, int severity, SeverityParams params) {
  check_severity(severity);
  levels_[kind_slot(kind)][static_cast<std::size_t>(severity - 1)] = params;
}

const std::array<SeverityParams, 5>& SeverityTable::levels(CorruptionKind kind) const {
  return levels_[kind_slot(kind)];
}

Tensor corrupt(const Tensor& images, const CorruptionSpec& spec, const SeverityTable& table) {
  require_nchw(images, "corrupt");
  const SeverityParams& p = table.at(spec.kind, spec.severity);
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  Tensor out(images.shape());
  for (int i = 0; i < n; ++i) {
    Rng rng = keyed_rng({spec.seed, static_cast<std::uint64_t>(spec.kind),
                         static_cast<std::uint64_t>(spec.severity), static_cast<std::uint64_t>(i)});
    corrupt_image(images.ptr() + i * per, out.ptr() + i * per, c, h, w, spec.kind, p, rng);
  }
  return out;
}

Tensor probe_batch(int count, int size) {
  Tensor out({count, 3, size, size});
  Rng rng = keyed_rng({0x70726f6265ULL});
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int i = 0; i < count; ++i)
    for (int c = 0; c < 3; ++c) {
      // Low-frequency mixture of a gradient and two sinusoids, kept in [0.1, 0.9].
      const float a = u(rng), b = u(rng) * 2.0f - 1.0f, d = u(rng) * 2.0f - 1.0f;
      const float f1 = 1.0f + 3.0f * u(rng), f2 = 1.0f + 3.0f * u(rng), ph = 6.28f * u(rng);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const float yy = float(y) / size, xx = float(x) / size;
          const float v = a + 0.3f * (b * xx + d * yy) + 0.15f * std::sin(6.28f * f1 * xx + ph) +
                          0.15f * std::cos(6.28f * f2 * yy);
          out.at(i, c, y, x) = std::clamp(0.1f + 0.8f * std::clamp(v, 0.0f, 1.0f), 0.0f, 1.0f);
        }
    }
  return out;
}

std::array<double, 5> severity_distortion(CorruptionKind kind, const SeverityTable& table) {
  static const Tensor probe = probe_batch();
  std::array<double, 5> out{};
  for (int s = 1; s <= 5; ++s) {
    const Tensor y = corrupt(probe, {kind, s, 0}, table);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += std::abs(double(y[i]) - probe[i]);
    out[static_cast<std::size_t>(s - 1)] = acc / double(y.numel());
  }
  return out;
}

std::string_view structure_name(StructureFamily family) {
  switch (family) {
    case StructureFamily::kConvKernel: return "conv_kernel";
    case StructureFamily::kLowRank: return "low_rank";
    case StructureFamily::kDenseRandom: return "dense_random";
  }
  return "unknown";
}

StructureFamily parse_structure(std::string_view name) {
  for (auto f : {StructureFamily::kConvKernel, StructureFamily::kLowRank, StructureFamily::kDenseRandom})
    if (structure_name(f) == name) return f;
  throw std::invalid_argument("unknown structure family: " + std::string(name));
}

Tensor synth_structured_delta(const Tensor& probe, StructureFamily family, float magnitude,
                              std::uint64_t seed, const StructureParams& params) {
  require_nchw(probe, "synth_structured_delta");
  if (!(magnitude >= 0.0f) || !std::isfinite(magnitude))
    throw std::invalid_argument("magnitude must be finite and nonnegative");
  const int n = probe.dim(0), c = probe.dim(1), h = probe.dim(2), w = probe.dim(3);
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  Tensor out(probe.shape());
  if (magnitude == 0.0f) return out;
  for (int i = 0; i < n; ++i) {
    Rng rng = keyed_rng({seed, 0x5354ULL + static_cast<std::uint64_t>(family), static_cast<std::uint64_t>(i)});
    std::normal_distribution<float> g(0.0f, 1.0f);
    float* dst = out.ptr() + i * per;
    const float* src = probe.ptr() + i * per;
    switch (family) {
      case StructureFamily::kConvKernel: {
        const int ks = params.kernel_size;
        if (ks < 1 || ks % 2 == 0) throw std::invalid_argument("kernel_size must be odd and positive");
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        std::vector<float> k(static_cast<std::size_t>(ks) * ks);
        for (float& v : k) v = u(rng);
        normalize(k);
        filter_image(src, dst, c, h, w, k, ks);
        for (std::size_t j = 0; j < per; ++j) dst[j] -= src[j];
        break;
      }
      case StructureFamily::kLowRank: {
        const int r = params.rank;
        if (r < 1 || r > std::min(h, w)) throw std::invalid_argument("rank must be in 1..min(H,W)");
        for (int ch = 0; ch < c; ++ch) {
          std::vector<float> a(static_cast<std::size_t>(h) * r), b(static_cast<std::size_t>(w) * r);
          for (float& v : a) v = g(rng);
          for (float& v : b) v = g(rng);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              double acc = 0.0;
              for (int q = 0; q < r; ++q) acc += double(a[static_cast<std::size_t>(y) * r + q]) * b[static_cast<std::size_t>(x) * r + q];
              dst[idx(ch, y, x, h, w)] = static_cast<float>(acc);
            }
        }
        break;
      }
      case StructureFamily::kDenseRandom:
        for (std::size_t j = 0; j < per; ++j) dst[j] = g(rng);
        break;
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < per; ++j) norm += double(dst[j]) * dst[j];
    norm = std::sqrt(norm);
    if (norm == 0.0) throw NumericError("structured delta degenerated to zero; probe is constant");
    for (std::size_t j = 0; j < per; ++j) dst[j] = static_cast<float>(dst[j] * (magnitude / norm));
  }
  return out;
}

}  // namespace cvpb
