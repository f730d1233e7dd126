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

// Deterministic image corruptions at five severities.
//
// Every corruption is a pure function of (batch, spec, table). Random draws
// come from a stream keyed by (seed, kind, severity, image index), so the
// corruption of image i does not depend on which other images share its
// batch or on the order in which batches are processed.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cvpb/tensor.hpp"

namespace cvpb {

enum class CorruptionKind {
  kGaussianNoise,
  kShotNoise,
  kImpulseNoise,
  kDefocusBlur,
  kMotionBlur,
  kZoomBlur,
  kFog,
  kBrightness,
  kContrast,
  kPixelate,
  // Reserved; synthesis is not implemented for these.
  kGlassBlur,
  kSnow,
  kFrost,
  kElasticTransform,
  kJpegCompression,
};

inline constexpr std::array<CorruptionKind, 10> kImplementedKinds = {
    CorruptionKind::kGaussianNoise, CorruptionKind::kShotNoise,  CorruptionKind::kImpulseNoise,
    CorruptionKind::kDefocusBlur,   CorruptionKind::kMotionBlur, CorruptionKind::kZoomBlur,
    CorruptionKind::kFog,           CorruptionKind::kBrightness, CorruptionKind::kContrast,
    CorruptionKind::kPixelate,
};

std::string_view corruption_name(CorruptionKind kind);
/// Throws std::invalid_argument for unknown names.
CorruptionKind parse_corruption(std::string_view name);
bool is_implemented(CorruptionKind kind);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  int severity = 1;  // 1..5
  std::uint64_t seed = 0;
};

/// Parameters of one severity level. Only the fields relevant to a kind are
/// read; `amount` is that kind's primary constant:
///   gaussian_noise  sigma              shot_noise   photon scale (rate = scale * x)
///   impulse_noise   flip probability   defocus_blur disk radius (pixels)
///   motion_blur     line length        zoom_blur    max zoom (step 0.01 from 1)
///   fog             haze weight t      brightness   additive offset
///   contrast        gain               pixelate     block side (pixels)
struct SeverityParams {
  float amount = 0.0f;
  float angle_deg = 0.0f;  // motion_blur only
};

/// Per-kind list of five severity records.
class SeverityTable {
 public:
  /// Module defaults; see corruption.cpp for the values.
  static const SeverityTable& defaults();

  const SeverityParams& at(CorruptionKind kind, int severity) const;
  void set(CorruptionKind kind, int severity, SeverityParams params);
  const std::array<SeverityParams, 5>& levels(CorruptionKind kind) const;

 private:
  std::array<std::array<SeverityParams, 5>, kImplementedKinds.size()> levels_{};
};

/// Corrupts an NCHW batch with values in [0,1]; output clipped to [0,1].
Tensor corrupt(const Tensor& images, const CorruptionSpec& spec,
               const SeverityTable& table = SeverityTable::defaults());

/// Mean |corrupt(probe) - probe| at each severity on a fixed probe batch.
std::array<double, 5> severity_distortion(CorruptionKind kind,
                                          const SeverityTable& table = SeverityTable::defaults());

/// Fixed smooth probe images used by severity_distortion.
Tensor probe_batch(int count = 16, int size = 32);

enum class StructureFamily { kConvKernel, kLowRank, kDenseRandom };

std::string_view structure_name(StructureFamily family);
StructureFamily parse_structure(std::string_view name);

struct StructureParams {
  int kernel_size = 3;  // conv_kernel family
  int rank = 3;         // low_rank family
};

/// Additive corruption with the requested structure, scaled so that each
/// image's Delta has L2 norm `magnitude` (zero magnitude gives zeros).
/// conv_kernel: Delta = conv(probe, g) - probe for a random normalized
/// nonnegative kernel g (replicate padding); low_rank: a random rank-r
/// matrix per channel; dense_random: i.i.d. Gaussian entries.
Tensor synth_structured_delta(const Tensor& probe, StructureFamily family, float magnitude,
                              std::uint64_t seed, const StructureParams& params = {});

}  // namespace cvpb
