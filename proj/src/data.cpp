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

#include "cvpb/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "cvpb/rng.hpp"

namespace cvpb {

Dataset Dataset::slice(int begin, int end) const {
  Dataset out;
  out.images = images.slice_batch(begin, end);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.num_classes = num_classes;
  return out;
}

Dataset Dataset::gather(std::span<const int> indices) const {
  const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  Dataset out;
  out.images = Tensor({static_cast<int>(indices.size()), c, h, w});
  out.num_classes = num_classes;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || i >= size()) throw std::out_of_range("gather index out of range");
    std::copy_n(images.ptr() + static_cast<std::size_t>(i) * per, per, out.images.ptr() + k * per);
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  const std::size_t rec = kCifarRecordBytes;
  if (bytes.size() % rec != 0) {
    const std::size_t offset = bytes.size() / rec * rec;
    throw FormatError("truncated CIFAR-10 record at byte offset " + std::to_string(offset) + " (" +
                      std::to_string(bytes.size() - offset) + " of " + std::to_string(rec) + " bytes)");
  }
  const int n = static_cast<int>(bytes.size() / rec);
  Dataset out;
  out.num_classes = 10;
  out.images = Tensor({n, 3, 32, 32});
  out.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * rec;
    const int label = bytes[base];
    if (label > 9)
      throw FormatError("label " + std::to_string(label) + " > 9 at byte offset " + std::to_string(base));
    out.labels[static_cast<std::size_t>(i)] = label;
    float* dst = out.images.ptr() + static_cast<std::size_t>(i) * (rec - 1);
    for (std::size_t j = 0; j < rec - 1; ++j) dst[j] = bytes[base + 1 + j] / 255.0f;
  }
  return out;
}

Dataset load_cifar10_file(const std::filesystem::path& file, bool strict_count) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Dataset d = parse_cifar10(bytes);
  if (strict_count && d.size() != kCifarRecordsPerBatch)
    throw FormatError(file.string() + ": expected " + std::to_string(kCifarRecordsPerBatch) + " records, found " +
                      std::to_string(d.size()));
  return d;
}

Dataset load_cifar10(const std::filesystem::path& dir, bool train) {
  std::vector<Dataset> parts;
  if (train) {
    for (int b = 1; b <= 5; ++b) parts.push_back(load_cifar10_file(dir / ("data_batch_" + std::to_string(b) + ".bin")));
  } else {
    parts.push_back(load_cifar10_file(dir / "test_batch.bin"));
  }
  return concat(parts);
}

Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) return {};
  std::vector<Tensor> images;
  Dataset out;
  out.num_classes = parts.front().num_classes;
  for (const auto& p : parts) {
    images.push_back(p.images);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.num_classes = std::max(out.num_classes, p.num_classes);
  }
  out.images = concat_batch(images);
  return out;
}

namespace {

// Signed-distance style membership of a point in canonical shape coordinates
// (unit scale, centered at the origin).
bool inside(ShapeKind kind, float x, float y) {
  const float ax = std::abs(x), ay = std::abs(y);
  switch (kind) {
    case ShapeKind::kDisk: return x * x + y * y <= 1.0f;
    case ShapeKind::kSquare: return ax <= 0.8f && ay <= 0.8f;
    case ShapeKind::kTriangle: return y <= 0.8f && y >= -0.9f + 2.0f * ax * 0.95f;
    case ShapeKind::kCross: return (ax <= 0.3f && ay <= 1.0f) || (ay <= 0.3f && ax <= 1.0f);
    case ShapeKind::kRing: {
      const float r2 = x * x + y * y;
      return r2 <= 1.0f && r2 >= 0.45f;
    }
    case ShapeKind::kDiamond: return ax + ay <= 1.0f;
    case ShapeKind::kBar: return ax <= 1.0f && ay <= 0.3f;
    case ShapeKind::kX: return std::abs(ax - ay) <= 0.3f && ax <= 0.9f;
    case ShapeKind::kCount: break;
  }
  return false;
}

}  // namespace

Dataset synth_shapes(const ShapesParams& params, std::uint64_t seed) {
  const int kinds = static_cast<int>(ShapeKind::kCount);
  if (params.num_classes < 2 || params.num_classes > kinds)
    throw std::invalid_argument("synth_shapes: num_classes must be in 2.." + std::to_string(kinds));
  if (params.count < 0 || params.image_size < 8) throw std::invalid_argument("synth_shapes: bad count or size");
  if (!(params.variability >= 0.0f && params.variability <= 1.0f))
    throw std::invalid_argument("synth_shapes: variability must be in [0, 1]");
  const int n = params.count, s = params.image_size;
  Dataset out;
  out.num_classes = params.num_classes;
  out.images = Tensor({n, 3, s, s});
  out.labels.resize(static_cast<std::size_t>(n));
  constexpr int kSub = 3;
  for (int i = 0; i < n; ++i) {
    const int label = i % params.num_classes;
    out.labels[static_cast<std::size_t>(i)] = label;
    Rng rng = keyed_rng({seed, 0x53484150ULL, static_cast<std::uint64_t>(i)});
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::normal_distribution<float> g(0.0f, 1.0f);
    const float v = params.variability;
    float bg[3], fg[3];
    for (float& b : bg) b = 0.5f + v * 0.7f * (u(rng) - 0.5f);
    // Keep a visible contrast between shape and background in at least one channel.
    for (int c = 0; c < 3; ++c) {
      const float mag = 0.25f + 0.45f * u(rng);
      const float sign = u(rng) < 0.5f ? -1.0f : 1.0f;
      const float delta = v > 0.0f ? mag * sign : 0.4f;
      fg[c] = bg[c] + delta;
      if (fg[c] < 0.0f || fg[c] > 1.0f) fg[c] = bg[c] - delta;
      fg[c] = std::clamp(fg[c], 0.0f, 1.0f);
    }
    const float scale = s * (0.275f + v * 0.15f * (u(rng) - 0.5f));
    const float cx = s * 0.5f + v * (u(rng) - 0.5f) * (s - 2.2f * scale);
    const float cy = s * 0.5f + v * (u(rng) - 0.5f) * (s - 2.2f * scale);
    const float angle = v * (u(rng) - 0.5f) * 0.6f;
    const float ca = std::cos(angle), sa = std::sin(angle);
    const auto kind = static_cast<ShapeKind>(label);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSub; ++sy)
          for (int sx = 0; sx < kSub; ++sx) {
            const float px = (x + (sx + 0.5f) / kSub - cx) / scale;
            const float py = (y + (sy + 0.5f) / kSub - cy) / scale;
            hits += inside(kind, ca * px + sa * py, -sa * px + ca * py);
          }
        const float cover = float(hits) / (kSub * kSub);
        for (int c = 0; c < 3; ++c) {
          const float v = cover * fg[c] + (1.0f - cover) * bg[c] + params.background_noise * g(rng);
          out.images.at(i, c, y, x) = std::clamp(v, 0.0f, 1.0f);
        }
      }
  }
  return out;
}

}  // namespace cvpb
