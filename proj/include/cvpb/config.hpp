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

// Experiment configuration: one JSON document, schema in docs/config.md.
// Parsing is strict (unknown keys are errors) and missing keys take the
// defaults below. Serialization is canonical, so serialize -> parse ->
// serialize reproduces the same bytes.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cvpb/adapters.hpp"
#include "cvpb/corruption.hpp"
#include "cvpb/models.hpp"

namespace cvpb {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string source = "shapes";  // "shapes" or "cifar10"
  std::string cifar_dir;          // directory holding the binary batches
  int train_count = 5000;
  int eval_count = 1000;  // images per (kind, severity) cell
  // Synthetic shapes only.
  int num_classes = 4;
  float variability = 1.0f;
  float background_noise = 0.04f;
};

struct ModelConfig {
  std::array<int, 4> widths{32, 64, 128, 128};
  TrainHyper train;  // seed is derived from the experiment seed
};

struct SslConfig {
  SslHyper hyper;  // seed is derived from the experiment seed
  float tau = 0.5f;
  int hidden = 128;
  int out = 64;
  int rotation_steps = 200;  // used only when a method adapts with rotation
};

struct GridConfig {
  std::vector<std::string> kinds;  // corruption names
  std::vector<int> severities{1, 2, 3, 4, 5};
  // Replacement severity levels per kind.
  std::map<std::string, std::array<SeverityParams, 5>> severity_overrides;

  SeverityTable table() const;
};

struct MethodSpec {
  std::string label;   // unique; becomes EvalRecord::method
  std::string method;  // parse_method syntax
  AdaptConfig adapt;   // experiment defaults plus per-method overrides
};

/// Records of the reference model carry this method label.
inline constexpr const char* kReferenceLabel = "reference";

/// A smaller backbone whose standard-model errors are the mCE reference.
struct ReferenceConfig {
  std::array<int, 4> widths{8, 16, 16, 16};
  int steps = 300;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  SslConfig ssl;
  GridConfig grid;
  AdaptConfig adapt;  // defaults shared by every method
  std::vector<MethodSpec> methods;
  std::optional<ReferenceConfig> reference;
  std::string out_dir = "cvpb-out";
  std::uint64_t seed = 0;
  int workers = 1;

  /// All implemented kinds, severities 1..5, methods standard and cvp.
  static ExperimentConfig defaults();

  /// Throws ConfigError naming the offending key.
  void validate() const;
  const MethodSpec& method(const std::string& label) const;
};

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(std::string_view text);

/// Canonical text of the settings a trained artifact depends on; artifact is
/// "backbone", "ssl", "rotation" or "reference". Stored in checkpoint
/// metadata so a cached checkpoint is reused only under the same settings.
std::string artifact_key(const ExperimentConfig& cfg, std::string_view artifact);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

}  // namespace cvpb
