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

// Record persistence (LDJSON, CSV) and report layouts.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvpb/harness.hpp"
#include "cvpb/metrics.hpp"

namespace cvpb {

/// One JSON object, no trailing newline. Non-finite losses become null.
std::string record_to_json(const EvalRecord& r);
EvalRecord record_from_json(std::string_view line);
std::string reversal_to_json(const ReversalRecord& r);
ReversalRecord reversal_from_json(std::string_view line);

/// Appends one line per record.
void append_ldjson(const std::filesystem::path& path, std::span<const EvalRecord> records);
void append_ldjson(const std::filesystem::path& path, std::span<const ReversalRecord> records);
/// Reads a file written by append_ldjson; blank lines are skipped. Throws
/// FormatError naming the line number of a malformed record.
std::vector<EvalRecord> read_records(const std::filesystem::path& path);
std::vector<ReversalRecord> read_reversal_records(const std::filesystem::path& path);

void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);
/// Every number of the summary except wall time, one row per cell and per
/// method; the determinism contract compares these files.
void write_summary_csv(const std::filesystem::path& path, const Summary& summary);

enum class Layout { kTable1, kTable4, kFig4, kFig5 };

std::string_view layout_name(Layout layout);
/// "table1", "table4", "fig4" or "fig5".
Layout parse_layout(std::string_view name);

struct Report {
  std::string markdown;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;  // e.g. incomplete grids
};

/// table1: corruption kinds as rows and methods as columns (accuracy in
///   percent, averaged over severities), then Avg. Acc., Avg. Error, Diff.
///   against "standard" and, when reference records are present, mCE.
/// table4: each composed method "w+p" next to its weight-only base "w"
///   ("standard" for a bare prompt) with the error gain.
/// fig4: (x, y, series) rows from labels of the form "name@param=value";
///   series "name:accuracy" (percent) and "name:loss" (mean final SSL loss).
/// Missing cells print as an em dash and add a warning. An empty record set
/// is an error and writes nothing. fig5 needs reversal records.
Report emit_report(std::span<const EvalRecord> records, Layout layout, const std::filesystem::path& dir);

/// One CSV row per (family, prompt, rank) with residual mean and
/// population std over seeds, plus a markdown table.
Report emit_fig5(std::span<const ReversalRecord> records, const std::filesystem::path& dir);

}  // namespace cvpb
