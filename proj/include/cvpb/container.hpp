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

// Named-tensor container used for checkpoints and cached datasets.
//
// Layout (all integers little-endian):
//   "CVPB"            4 bytes magic
//   version           u16 (currently 1)
//   metadata length   u32, then that many bytes of a JSON object of strings
//   tensor count      u32
//   per tensor:       u16 name length, name bytes, u8 dtype (0 = float32),
//                     u8 rank, rank x u32 extents, u64 payload offset
//   payload length    u64, then float32 values
//   crc32             u32 over every preceding byte

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cvpb/data.hpp"
#include "cvpb/models.hpp"
#include "cvpb/tensor.hpp"

namespace cvpb {

inline constexpr std::uint16_t kContainerVersion = 1;

struct Container {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
  /// Metadata lookup; throws FormatError naming the missing key.
  const std::string& meta(const std::string& key) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
/// Throws IntegrityError on a bad magic or CRC mismatch (a truncated file
/// fails the CRC), FormatError when a CRC-valid body is malformed.
Container decode_container(std::span<const std::uint8_t> bytes);

/// Writes through a temporary file and renames it into place.
void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

// Typed wrappers. Parameter sets are stored entry by entry, buffers
// included, under their own names.

Container backbone_container(const Backbone& backbone, std::map<std::string, std::string> metadata = {});
Backbone backbone_from(const Container& c);

Container ssl_head_container(const SslHead& head, std::map<std::string, std::string> metadata = {});
SslHead ssl_head_from(const Container& c);

Container rotation_head_container(const RotationHead& head, std::map<std::string, std::string> metadata = {});
RotationHead rotation_head_from(const Container& c);

/// Images under "images", labels as float32 under "labels".
Container dataset_container(const Dataset& data, std::map<std::string, std::string> metadata = {});
Dataset dataset_from(const Container& c);

}  // namespace cvpb
