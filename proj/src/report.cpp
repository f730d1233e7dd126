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

#include "cvpb/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cvpb/config.hpp"
#include "json.hpp"

namespace cvpb {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr const char* kMissing = "\xE2\x80\x94";  // U+2014, marks a missing cell

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_or_nan(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

std::string exact(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

using Row = std::vector<std::string>;

std::string markdown(const Row& header, const std::vector<Row>& rows) {
  std::vector<std::size_t> w(header.size(), 3);
  auto widen = [&](const Row& r) {
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], display_width(r[i]));
  };
  widen(header);
  for (const auto& r : rows) widen(r);
  auto line = [&](const Row& r) {
    std::string s = "|";
    for (std::size_t i = 0; i < r.size(); ++i) {
      const std::string pad(w[i] - display_width(r[i]), ' ');
      // First column left-aligned, numbers right-aligned.
      s += " " + (i == 0 ? r[i] + pad : pad + r[i]) + " |";
    }
    return s + "\n";
  };
  std::string out = line(header) + "|";
  for (std::size_t i = 0; i < w.size(); ++i) out += i == 0 ? " " + std::string(w[i], '-') + " |" : " " + std::string(w[i] - 1, '-') + ": |";
  out += "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

std::string csv(const Row& header, const std::vector<Row>& rows) {
  std::string out;
  auto line = [&](const Row& r) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + csv_field(r[i]);
    out += "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void emit(Report& rep, const fs::path& dir, const std::string& stem, const std::string& title, const Row& header,
          const std::vector<Row>& rows, const std::string& note) {
  rep.markdown = "## " + title + "\n\n" + markdown(header, rows);
  if (!note.empty()) rep.markdown += "\n" + note + "\n";
  for (const auto& w : rep.warnings) rep.markdown += "\nWarning: " + w + "\n";
  write_text(dir / (stem + ".md"), rep.markdown);
  write_text(dir / (stem + ".csv"), csv(header, rows));
  rep.files = {dir / (stem + ".md"), dir / (stem + ".csv")};
}

std::string split_note(const Summary& s) {
  std::set<int> sizes;
  for (const auto& c : s.cells) sizes.insert(c.images);
  std::string note = "Eval images per cell: ";
  bool first = true;
  for (int n : sizes) note += (first ? "" : "/") + std::to_string(n), first = false;
  std::string sev;
  for (int v : s.severities) sev += (sev.empty() ? "" : ",") + std::to_string(v);
  return note + "; severities {" + sev + "}.";
}

std::vector<std::string> report_methods(const Summary& s) {
  std::vector<std::string> out;
  for (const auto& m : s.methods)
    if (m != kReferenceLabel) out.push_back(m);
  return out;
}

void completeness(Report& rep, const Summary& s, const std::vector<std::string>& methods) {
  const std::size_t expected = s.kinds.size() * s.severities.size();
  for (const auto& m : methods) {
    const MethodSummary& ms = s.by_method.at(m);
    int failed = 0;
    for (const auto& c : s.cells)
      if (c.method == m && c.failures) ++failed;
    if (!ms.complete) {
      rep.warnings.push_back(m + ": " + std::to_string(expected - static_cast<std::size_t>(ms.cells)) + " of " +
                             std::to_string(expected) + " cells missing, " + std::to_string(failed) +
                             " with failed batches");
    }
  }
}

ErrorTable errors_of(const Summary& s, const std::string& method) {
  ErrorTable t(method);
  for (const auto& c : s.cells)
    if (c.method == method) t.set(c.kind, c.severity, 1.0 - c.accuracy / 100.0);
  return t;
}

Report table1(const Summary& s, const fs::path& dir) {
  Report rep;
  const auto methods = report_methods(s);
  if (methods.empty()) throw std::invalid_argument("table1: only reference records");
  completeness(rep, s, methods);
  Row header{"Corruption"};
  header.insert(header.end(), methods.begin(), methods.end());
  std::vector<Row> rows;
  for (const auto& k : s.kinds) {
    Row r{k};
    for (const auto& m : methods) {
      const auto& pk = s.by_method.at(m).per_kind;
      const auto it = pk.find(k);
      r.push_back(it == pk.end() ? kMissing : fixed(it->second));
    }
    rows.push_back(r);
  }
  Row acc{"Avg. Acc."}, err{"Avg. Error"}, diff{"Diff."};
  for (const auto& m : methods) {
    const MethodSummary& ms = s.by_method.at(m);
    acc.push_back(ms.cells ? fixed(ms.avg_accuracy) : kMissing);
    err.push_back(ms.cells ? fixed(ms.avg_error) : kMissing);
    diff.push_back(ms.diff ? fixed(*ms.diff) : kMissing);
  }
  rows.push_back(acc);
  rows.push_back(err);
  rows.push_back(diff);

  std::string note = "Accuracy in percent, averaged over severities. Diff. is the change in average error against " +
                     s.baseline + ". " + split_note(s);
  if (s.by_method.count(kReferenceLabel)) {
    const ErrorTable ref = errors_of(s, kReferenceLabel);
    Row mrow{"mCE"};
    for (const auto& m : methods) {
      try {
        mrow.push_back(fixed(mce(errors_of(s, m), ref)));
      } catch (const std::invalid_argument&) {
        mrow.push_back(kMissing);
      }
    }
    rows.push_back(mrow);
    note += " mCE is relative to the reference model.";
  }
  emit(rep, dir, "table1", "Accuracy per corruption", header, rows, note);
  return rep;
}

Report table4(const Summary& s, const fs::path& dir) {
  Report rep;
  const auto methods = report_methods(s);
  completeness(rep, s, methods);
  std::vector<Row> rows;
  for (const auto& label : methods) {
    Method m;
    try {
      m = parse_method(label);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (m.prompt == PromptMethod::kNone) continue;
    const std::string base = Method{m.weight, PromptMethod::kNone}.name();
    const MethodSummary& comp = s.by_method.at(label);
    const auto b = s.by_method.find(base);
    const bool have_base = b != s.by_method.end() && b->second.cells;
    if (!have_base) rep.warnings.push_back("no records for " + base + ", the base of " + label);
    rows.push_back({base, have_base ? fixed(b->second.avg_error) : kMissing, label,
                    comp.cells ? fixed(comp.avg_error) : kMissing,
                    have_base && comp.cells ? fixed(b->second.avg_error - comp.avg_error) : kMissing});
  }
  if (rows.empty()) rep.warnings.push_back("no prompt or composed methods among the records");
  emit(rep, dir, "table4", "Prompt on top of each baseline", {"Base", "Base Error", "Composed", "Error", "Gain"}, rows,
       "Average error in percent; Gain is base error minus composed error. " + split_note(s));
  return rep;
}

Report fig4(const Summary& s, std::span<const EvalRecord> records, const fs::path& dir) {
  Report rep;
  struct Point {
    std::string name, param;
    double x;
    std::string label;
  };
  std::vector<Point> points;
  for (const auto& label : report_methods(s)) {
    const auto at = label.find('@');
    const auto eq = label.find('=', at == std::string::npos ? 0 : at);
    if (at == std::string::npos || eq == std::string::npos) continue;
    Point p{label.substr(0, at), label.substr(at + 1, eq - at - 1), 0.0, label};
    try {
      p.x = std::stod(label.substr(eq + 1));
    } catch (const std::exception&) {
      rep.warnings.push_back("cannot read the x value of " + label);
      continue;
    }
    points.push_back(p);
  }
  if (points.empty()) rep.warnings.push_back("no labels of the form name@param=value");
  std::stable_sort(points.begin(), points.end(),
                   [](const Point& a, const Point& b) { return std::tie(a.name, a.x) < std::tie(b.name, b.x); });

  std::vector<Row> rows;
  for (const auto& p : points) {
    const MethodSummary& ms = s.by_method.at(p.label);
    if (!ms.complete) rep.warnings.push_back(p.label + " is incomplete");
    double loss = 0.0;
    int n = 0;
    for (const auto& r : records)
      if (r.method == p.label && !r.failed() && std::isfinite(r.loss_final)) loss += r.loss_final, ++n;
    const std::string xs = exact(p.x);
    rows.push_back({xs, ms.cells ? exact(ms.avg_accuracy) : kMissing, p.name + ":accuracy", p.param});
    rows.push_back({xs, n ? exact(loss / n) : kMissing, p.name + ":loss", p.param});
  }
  rep.markdown = "## Sensitivity\n\n" + markdown({"x", "y", "series", "param"}, rows) + "\n" + split_note(s) + "\n";
  for (const auto& w : rep.warnings) rep.markdown += "\nWarning: " + w + "\n";
  write_text(dir / "fig4.csv", csv({"x", "y", "series", "param"}, rows));
  write_text(dir / "fig4.md", rep.markdown);
  rep.files = {dir / "fig4.md", dir / "fig4.csv"};
  return rep;
}

EvalRecord parse_record(const Json& j) {
  EvalRecord r;
  r.method = j.at("method").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.severity = j.at("severity").get<int>();
  r.batch = j.at("batch").get<int>();
  r.accuracy = j.at("accuracy").get<double>();
  r.count = j.at("count").get<int>();
  r.loss0 = number_or_nan(j.value("loss0", Json(0.0)));
  r.loss_final = number_or_nan(j.value("loss_final", Json(0.0)));
  r.fallback = j.value("fallback", false);
  r.wall_ms = j.value("wall_ms", 0.0);
  r.seed = j.value("seed", std::uint64_t{0});
  r.error = j.value("error", std::string());
  return r;
}

ReversalRecord parse_reversal(const Json& j) {
  ReversalRecord r;
  r.family = j.at("family").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.rank = j.at("rank").get<int>();
  r.seed = j.value("seed", std::uint64_t{0});
  r.residual = j.at("residual").get<double>();
  r.delta_norm = j.value("delta_norm", 0.0);
  r.loss0 = number_or_nan(j.value("loss0", Json(0.0)));
  r.loss_final = number_or_nan(j.value("loss_final", Json(0.0)));
  return r;
}

template <typename T, typename Parse>
std::vector<T> read_lines(const fs::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(no) + ": malformed record: " + e.what());
    }
  }
  return out;
}

template <typename T, typename ToJson>
void append_lines(const fs::path& path, std::span<const T> records, ToJson to_json) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  std::string buf;
  for (const auto& r : records) buf += to_json(r) + "\n";
  out << buf;
}

}  // namespace

std::string record_to_json(const EvalRecord& r) {
  Json j;
  j["method"] = r.method;
  j["kind"] = r.kind;
  j["severity"] = r.severity;
  j["batch"] = r.batch;
  j["accuracy"] = r.accuracy;
  j["count"] = r.count;
  j["loss0"] = finite_or_null(r.loss0);
  j["loss_final"] = finite_or_null(r.loss_final);
  j["fallback"] = r.fallback;
  j["wall_ms"] = r.wall_ms;
  j["seed"] = r.seed;
  if (r.failed()) j["error"] = r.error;
  return j.dump();
}

EvalRecord record_from_json(std::string_view line) {
  try {
    return parse_record(Json::parse(line));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed record: ") + e.what());
  }
}

std::string reversal_to_json(const ReversalRecord& r) {
  Json j;
  j["family"] = r.family;
  j["prompt"] = r.prompt;
  j["rank"] = r.rank;
  j["seed"] = r.seed;
  j["residual"] = r.residual;
  j["delta_norm"] = r.delta_norm;
  j["loss0"] = finite_or_null(r.loss0);
  j["loss_final"] = finite_or_null(r.loss_final);
  return j.dump();
}

ReversalRecord reversal_from_json(std::string_view line) {
  try {
    return parse_reversal(Json::parse(line));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed reversal record: ") + e.what());
  }
}

void append_ldjson(const fs::path& path, std::span<const EvalRecord> records) {
  append_lines(path, records, record_to_json);
}

void append_ldjson(const fs::path& path, std::span<const ReversalRecord> records) {
  append_lines(path, records, reversal_to_json);
}

std::vector<EvalRecord> read_records(const fs::path& path) { return read_lines<EvalRecord>(path, parse_record); }

std::vector<ReversalRecord> read_reversal_records(const fs::path& path) {
  return read_lines<ReversalRecord>(path, parse_reversal);
}

void write_records_csv(const fs::path& path, std::span<const EvalRecord> records) {
  std::string out = "method,kind,severity,batch,accuracy,count,loss0,loss_final,fallback,wall_ms,seed,error\n";
  for (const auto& r : records) {
    out += csv_field(r.method) + "," + csv_field(r.kind) + "," + std::to_string(r.severity) + "," +
           std::to_string(r.batch) + "," + exact(r.accuracy) + "," + std::to_string(r.count) + "," + exact(r.loss0) +
           "," + exact(r.loss_final) + "," + (r.fallback ? "1" : "0") + "," + fixed(r.wall_ms, 3) + "," +
           std::to_string(r.seed) + "," + csv_field(r.error) + "\n";
  }
  write_text(path, out);
}

void write_summary_csv(const fs::path& path, const Summary& s) {
  std::string out = "scope,method,kind,severity,metric,value\n";
  auto row = [&](const std::string& scope, const std::string& method, const std::string& kind,
                 const std::string& sev, const std::string& metric, double v) {
    out += scope + "," + csv_field(method) + "," + csv_field(kind) + "," + sev + "," + metric + "," + exact(v) + "\n";
  };
  for (const auto& c : s.cells) {
    const std::string sev = std::to_string(c.severity);
    row("cell", c.method, c.kind, sev, "accuracy", c.accuracy);
    row("cell", c.method, c.kind, sev, "images", c.images);
    row("cell", c.method, c.kind, sev, "failures", c.failures);
    row("cell", c.method, c.kind, sev, "fallbacks", c.fallbacks);
    row("cell", c.method, c.kind, sev, "mean_loss0", c.mean_loss0);
    row("cell", c.method, c.kind, sev, "mean_loss_final", c.mean_loss_final);
  }
  for (const auto& name : s.methods) {
    const MethodSummary& m = s.by_method.at(name);
    for (const auto& [k, v] : m.per_kind) row("kind", name, k, "", "accuracy", v);
    for (const auto& [sev, v] : m.per_severity) row("severity", name, "", std::to_string(sev), "accuracy", v);
    row("method", name, "", "", "avg_accuracy", m.avg_accuracy);
    row("method", name, "", "", "avg_error", m.avg_error);
    if (m.diff) row("method", name, "", "", "diff", *m.diff);
    row("method", name, "", "", "cells", m.cells);
  }
  write_text(path, out);
}

std::string_view layout_name(Layout layout) {
  switch (layout) {
    case Layout::kTable1: return "table1";
    case Layout::kTable4: return "table4";
    case Layout::kFig4: return "fig4";
    case Layout::kFig5: return "fig5";
  }
  return "unknown";
}

Layout parse_layout(std::string_view name) {
  for (Layout l : {Layout::kTable1, Layout::kTable4, Layout::kFig4, Layout::kFig5})
    if (layout_name(l) == name) return l;
  throw std::invalid_argument("unknown report layout: " + std::string(name) + " (table1|table4|fig4|fig5)");
}

Report emit_report(std::span<const EvalRecord> records, Layout layout, const fs::path& dir) {
  if (records.empty()) throw std::invalid_argument("emit_report: no records");
  if (layout == Layout::kFig5) throw std::invalid_argument("emit_report: fig5 is built from reversal records");
  const Summary s = aggregate(records);
  switch (layout) {
    case Layout::kTable1: return table1(s, dir);
    case Layout::kTable4: return table4(s, dir);
    case Layout::kFig4: return fig4(s, records, dir);
    case Layout::kFig5: break;
  }
  throw std::logic_error("unreachable layout");
}

Report emit_fig5(std::span<const ReversalRecord> records, const fs::path& dir) {
  if (records.empty()) throw std::invalid_argument("emit_fig5: no records");
  struct Acc {
    std::vector<double> r;
    double delta = 0.0;
  };
  std::map<std::tuple<std::string, std::string, int>, Acc> groups;
  for (const auto& r : records) {
    Acc& a = groups[{r.family, r.prompt, r.rank}];
    a.r.push_back(r.residual);
    a.delta += r.delta_norm;
  }
  std::vector<Row> rows;
  for (const auto& [key, a] : groups) {
    const auto& [family, prompt, rank] = key;
    double mean = 0.0, var = 0.0;
    for (double v : a.r) mean += v;
    mean /= a.r.size();
    for (double v : a.r) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / a.r.size());
    rows.push_back({family + "/" + prompt, std::to_string(rank), exact(mean), exact(sd), std::to_string(a.r.size()),
                    exact(a.delta / a.r.size())});
  }
  const Row header{"series", "x", "y", "y_std", "seeds", "delta_norm"};
  Report rep;
  std::vector<Row> pretty = rows;
  for (auto& r : pretty) {
    r[2] = fixed(std::stod(r[2]), 4);
    r[3] = fixed(std::stod(r[3]), 4);
    r[5] = fixed(std::stod(r[5]), 4);
  }
  rep.markdown = "## Reversal residual by prompt rank\n\n" + markdown(header, pretty) +
                 "\nx is the kernel size (cvp), factor rank (lvp) or image side (vp); y is the mean per-image "
                 "L2 distance from the prompted image to the clean image.\n";
  write_text(dir / "fig5.csv", csv(header, rows));
  write_text(dir / "fig5.md", rep.markdown);
  rep.files = {dir / "fig5.md", dir / "fig5.csv"};
  return rep;
}

}  // namespace cvpb
