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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvpb/tensor.hpp"

namespace cvpb {

/// Labeled NCHW images in [0,1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return static_cast<int>(labels.size()); }
  /// Images [begin, end).
  Dataset slice(int begin, int end) const;
  /// Images at the given indices, in that order.
  Dataset gather(std::span<const int> indices) const;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCifarRecordBytes = 1 + 3 * 32 * 32;
inline constexpr int kCifarRecordsPerBatch = 10000;

/// Parses CIFAR-10 binary records (label byte, then 1024 R, 1024 G, 1024 B
/// bytes in row-major order). Throws FormatError with the byte offset on a
/// truncated record or a label above 9.
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);

/// Reads one batch file. With `strict_count` the file must hold exactly
/// 10000 records.
Dataset load_cifar10_file(const std::filesystem::path& file, bool strict_count = true);

/// Loads data_batch_1..5.bin (train) or test_batch.bin (test) from `dir`.
Dataset load_cifar10(const std::filesystem::path& dir, bool train);

enum class ShapeKind { kDisk, kSquare, kTriangle, kCross, kRing, kDiamond, kBar, kX, kCount };

struct ShapesParams {
  int count = 1000;
  int num_classes = 4;  // 2..8
  int image_size = 32;
  float background_noise = 0.04f;
  // Scales the random spread of position, size, rotation and colors. At 0
  // every image of a class is the same template plus noise.
  float variability = 1.0f;
};

/// Procedural shapes; label i % num_classes selects the shape kind.
/// Deterministic per seed, and image i depends only on (seed, i).
Dataset synth_shapes(const ShapesParams& params, std::uint64_t seed);

Dataset concat(std::span<const Dataset> parts);

}  // namespace cvpb
