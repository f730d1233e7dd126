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

// Evaluation metrics and record aggregation.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cvpb/tensor.hpp"

namespace cvpb {

/// Fraction of mismatches. Empty or misaligned input is rejected.
double error_rate(std::span<const int> predicted, std::span<const int> labels);

/// Error rates in [0, 1] keyed by (corruption kind, severity).
class ErrorTable {
 public:
  ErrorTable() = default;
  explicit ErrorTable(std::string model) : model_(std::move(model)) {}

  void set(const std::string& kind, int severity, double rate);
  std::optional<double> get(const std::string& kind, int severity) const;
  const std::string& model() const { return model_; }
  const std::map<std::pair<std::string, int>, double>& cells() const { return cells_; }
  std::vector<std::string> kinds() const;

 private:
  std::string model_;
  std::map<std::pair<std::string, int>, double> cells_;
};

/// 100 * mean over kinds of (sum_s E_model / sum_s E_ref). The grids must
/// match; a kind whose reference errors sum to 0 is rejected.
double mce(const ErrorTable& model, const ErrorTable& reference);

struct SwdResult {
  double mean = 0.0;
  double std = 0.0;  // population spread over projections
  std::vector<double> per_projection;
};

/// Sliced p-Wasserstein distance between two equal-size sets of flattened
/// rows (first dimension indexes samples). Directions are uniform on the
/// sphere, drawn from `seed`.
SwdResult swd(const Tensor& a, const Tensor& b, int n_proj = 128, double p = 2.0, std::uint64_t seed = 0);

/// 1-D p-Wasserstein distance between two equal-size empirical samples.
double wasserstein_1d(std::vector<double> a, std::vector<double> b, double p);

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1, valid
/// region) averaged over channels and images. Accepts [C,H,W] or [N,C,H,W].
double ssim(const Tensor& x, const Tensor& y);

/// Mean over images of ||x_adapted_i - x_clean_i||_2.
double reversal_residual(const Tensor& x_clean, const Tensor& x_adapted);

struct DistanceReport {
  double swd_mean_x100 = 0.0;
  double swd_std_x100 = 0.0;
  double ssim_mean = 0.0;
  int samples = 0;
  int projections = 0;
  std::uint64_t seed = 0;
};

DistanceReport distance_report(const Tensor& reference, const Tensor& candidate, int n_proj = 128,
                               std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Records and aggregation.

struct EvalRecord {
  std::string method;
  std::string kind;
  int severity = 0;
  int batch = 0;
  double accuracy = 0.0;  // fraction correct in this batch
  int count = 0;          // images in this batch
  double loss0 = 0.0;
  double loss_final = 0.0;
  bool fallback = false;
  double wall_ms = 0.0;
  std::uint64_t seed = 0;
  std::string error;  // non-empty when the cell aborted

  bool failed() const { return !error.empty(); }
};

struct CellSummary {
  std::string method;
  std::string kind;
  int severity = 0;
  double accuracy = 0.0;  // percent, image-weighted
  int images = 0;
  int batches = 0;
  int failures = 0;
  int fallbacks = 0;
  double mean_loss0 = 0.0;
  double mean_loss_final = 0.0;
  double wall_ms = 0.0;
};

struct MethodSummary {
  std::string method;
  std::map<std::string, double> per_kind;  // percent, averaged over present severities
  std::map<int, double> per_severity;      // percent, averaged over present kinds
  double avg_accuracy = 0.0;               // mean over present cells
  double avg_error = 0.0;
  std::optional<double> diff;  // avg_error - baseline avg_error
  int cells = 0;
  bool complete = true;
};

struct Summary {
  std::vector<std::string> methods;  // first-seen order
  std::vector<std::string> kinds;
  std::vector<int> severities;
  std::vector<CellSummary> cells;
  std::map<std::string, MethodSummary> by_method;
  std::string baseline;
  bool complete = true;

  const CellSummary* cell(const std::string& method, const std::string& kind, int severity) const;
};

/// Per-cell, per-kind, per-severity and overall averages. Missing cells and
/// failed cells leave the summary incomplete; averages cover present cells.
Summary aggregate(std::span<const EvalRecord> records, const std::string& baseline = "standard");

}  // namespace cvpb
