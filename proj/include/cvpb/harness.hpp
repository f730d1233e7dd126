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

// Experiment orchestration: source data, trained artifacts, the corruption
// grid and the reversal study.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cvpb/adapters.hpp"
#include "cvpb/config.hpp"
#include "cvpb/corruption.hpp"
#include "cvpb/data.hpp"
#include "cvpb/metrics.hpp"

namespace cvpb {

struct SourceData {
  Dataset train;
  Dataset eval;  // clean evaluation split, eval_count images
};

/// CIFAR-10 (first train_count training and eval_count test images) or
/// synthetic shapes (train and eval drawn from disjoint seeds).
SourceData load_source(const ExperimentConfig& cfg);

struct Artifacts {
  Backbone backbone;  // frozen
  SslHead ssl_head;
  std::optional<RotationHead> rotation;
  std::optional<Backbone> reference;  // frozen
  double clean_accuracy = 0.0;        // backbone on the clean eval split
  double reference_clean_accuracy = 0.0;

  SslModel ssl(SslTask task) const;
};

/// The classifier (or, with `reference`, the mCE reference model), frozen.
/// Loaded from `cache_dir` when a checkpoint with matching settings exists,
/// otherwise trained and saved there. A loaded checkpoint whose recorded
/// clean accuracy differs from the recomputed one by more than 0.1 point
/// raises IntegrityError.
Backbone prepare_backbone(const ExperimentConfig& cfg, const SourceData& data,
                          const std::optional<std::filesystem::path>& cache_dir, bool reference,
                          double* clean_accuracy = nullptr, std::ostream* log = nullptr);

/// Contrastive head on clean training images, cached like the backbone.
SslHead prepare_ssl_head(const ExperimentConfig& cfg, const Backbone& backbone, const SourceData& data,
                         const std::optional<std::filesystem::path>& cache_dir, std::ostream* log = nullptr);

/// Trains whatever `cfg` needs. With a cache directory, checkpoints whose
/// metadata matches artifact_key() are loaded instead, and freshly trained
/// ones are saved there.
Artifacts prepare_artifacts(const ExperimentConfig& cfg, const SourceData& data,
                            const std::optional<std::filesystem::path>& cache_dir = std::nullopt,
                            std::ostream* log = nullptr);

/// Seed of the corrupted eval split; shared by all cells.
std::uint64_t corruption_seed(const ExperimentConfig& cfg);
/// Adaptation seed of one batch. Independent of the method, so methods see
/// the same augmentation draws on the same batch.
std::uint64_t batch_seed(const ExperimentConfig& cfg, CorruptionKind kind, int severity, int batch);

/// Called once per finished (kind, severity) cell with its records, under a
/// lock; the order of calls depends on scheduling.
using RecordSink = std::function<void(const std::vector<EvalRecord>&)>;

/// Every method on every (kind, severity) cell of the eval split, fanned
/// out over cfg.workers threads that each own a model workspace. The result
/// is in canonical order (kind, severity, method, batch) regardless of the
/// worker count. An IntegrityError or NumericError aborts the remaining
/// batches of that method on that cell and is recorded; the grid continues.
std::vector<EvalRecord> run_grid(const ExperimentConfig& cfg, const Artifacts& artifacts, const Dataset& eval,
                                 const RecordSink& sink = {}, std::ostream* log = nullptr);

struct ExperimentResult {
  std::vector<EvalRecord> records;
  Summary summary;
  double clean_accuracy = 0.0;
  std::filesystem::path out_dir;
};

/// Full pipeline into cfg.out_dir (or $CVPB_OUT when set): config.json,
/// checkpoints/, records.ldjson, records.csv, summary.csv, table1.md/.csv.
/// `out_dir` overrides both.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// cfg.out_dir unless the CVPB_OUT environment variable overrides it.
std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Reversal study: how closely each prompt family, adapted with the SSL loss
// on clean + Delta, returns to the clean image.

struct ReversalConfig {
  std::vector<StructureFamily> families{StructureFamily::kConvKernel, StructureFamily::kLowRank,
                                        StructureFamily::kDenseRandom};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  // Per-image L2 norm of Delta; 2.0 is a mean absolute change of about
  // 0.03 on a 3x32x32 image.
  float magnitude = 2.0f;
  std::vector<int> cvp_kernels{3};
  std::vector<int> lvp_ranks{3, 31};
  bool free_form_vp = true;  // patch VP with an unbounded norm
  AdaptConfig adapt;
};

struct ReversalRecord {
  std::string family;
  std::string prompt;  // "cvp", "lvp" or "vp"
  int rank = 0;        // kernel size for cvp, factor rank for lvp, min(H, W) for vp
  std::uint64_t seed = 0;
  double residual = 0.0;  // mean per-image ||x_adapted - x_clean||_2
  double delta_norm = 0.0;
  double loss0 = 0.0;
  double loss_final = 0.0;
};

std::vector<ReversalRecord> reversal_study(const Tensor& clean, const Backbone& backbone, const SslModel& ssl,
                                           const ReversalConfig& cfg, std::ostream* log = nullptr);

}  // namespace cvpb
