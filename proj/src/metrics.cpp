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

#include "cvpb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "cvpb/rng.hpp"

namespace cvpb {

double error_rate(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size())
    throw std::invalid_argument("error_rate: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw std::invalid_argument("error_rate: empty input");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predicted[i] != labels[i];
  return double(wrong) / double(labels.size());
}

void ErrorTable::set(const std::string& kind, int severity, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("error rate outside [0, 1] for " + kind);
  cells_[{kind, severity}] = rate;
}

std::optional<double> ErrorTable::get(const std::string& kind, int severity) const {
  const auto it = cells_.find({kind, severity});
  if (it == cells_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> ErrorTable::kinds() const {
  std::vector<std::string> out;
  for (const auto& [key, rate] : cells_)
    if (out.empty() || out.back() != key.first) out.push_back(key.first);
  return out;
}

double mce(const ErrorTable& model, const ErrorTable& reference) {
  if (reference.cells().empty()) throw std::invalid_argument("mce: empty reference table");
  if (model.cells().size() != reference.cells().size()) throw std::invalid_argument("mce: grids differ in size");
  std::map<std::string, std::pair<double, double>> sums;
  for (const auto& [key, ref] : reference.cells()) {
    const auto m = model.get(key.first, key.second);
    if (!m) throw std::invalid_argument("mce: model lacks " + key.first + " severity " + std::to_string(key.second));
    sums[key.first].first += *m;
    sums[key.first].second += ref;
  }
  double total = 0.0;
  for (const auto& [kind, s] : sums) {
    if (s.second == 0.0) throw std::invalid_argument("mce: reference error is zero for " + kind);
    total += s.first / s.second;
  }
  return 100.0 * total / double(sums.size());
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b, double p) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("wasserstein_1d: samples must be equal-size");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::pow(std::abs(a[i] - b[i]), p);
  return std::pow(acc / double(a.size()), 1.0 / p);
}

SwdResult swd(const Tensor& a, const Tensor& b, int n_proj, double p, std::uint64_t seed) {
  if (a.shape() != b.shape()) throw ShapeError("swd: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (a.rank() < 1 || a.dim(0) < 1) throw ShapeError("swd: need at least one sample");
  if (n_proj < 1) throw std::invalid_argument("swd: n_proj must be >= 1");
  if (!(p >= 1.0)) throw std::invalid_argument("swd: p must be >= 1");
  const std::size_t n = static_cast<std::size_t>(a.dim(0));
  const std::size_t d = a.numel() / n;
  Rng rng = keyed_rng({seed, 0x535744ULL});
  std::normal_distribution<double> g(0.0, 1.0);
  SwdResult r;
  std::vector<double> dir(d), pa(n), pb(n);
  for (int k = 0; k < n_proj; ++k) {
    double norm = 0.0;
    for (double& v : dir) {
      v = g(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : dir) v /= norm;
    for (std::size_t i = 0; i < n; ++i) {
      double sa = 0.0, sb = 0.0;
      const float* ra = a.ptr() + i * d;
      const float* rb = b.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        sa += dir[j] * ra[j];
        sb += dir[j] * rb[j];
      }
      pa[i] = sa;
      pb[i] = sb;
    }
    r.per_projection.push_back(wasserstein_1d(pa, pb, p));
  }
  for (double v : r.per_projection) r.mean += v;
  r.mean /= double(n_proj);
  for (double v : r.per_projection) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / double(n_proj));
  return r;
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window() {
  std::vector<double> w(kSsimWindow);
  double s = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double t = i - kSsimWindow / 2;
    w[static_cast<std::size_t>(i)] = std::exp(-t * t / (2.0 * kSsimSigma * kSsimSigma));
    s += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= s;
  return w;
}

// Separable valid-region filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
  const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) s += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) s += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

double ssim_plane(const float* a, const float* b, int h, int w, const std::vector<double>& k) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> x(a, a + n), y(b, b + n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
  const auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
  }
  return total / double(mx.size());
}

}  // namespace

double ssim(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) throw ShapeError("ssim: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  if (x.rank() != 3 && x.rank() != 4) throw ShapeError("ssim expects [C,H,W] or [N,C,H,W]");
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (h < kSsimWindow || w < kSsimWindow) throw ShapeError("ssim: extents must be at least 11");
  const auto k = gaussian_window();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t planes = x.numel() / plane;
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) total += ssim_plane(x.ptr() + p * plane, y.ptr() + p * plane, h, w, k);
  return total / double(planes);
}

double reversal_residual(const Tensor& x_clean, const Tensor& x_adapted) {
  if (x_clean.shape() != x_adapted.shape())
    throw ShapeError("reversal_residual: " + to_string(x_clean.shape()) + " vs " + to_string(x_adapted.shape()));
  require_nchw(x_clean, "reversal_residual");
  const std::size_t n = static_cast<std::size_t>(x_clean.dim(0));
  const std::size_t per = x_clean.numel() / n;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      const double d = double(x_adapted[i * per + j]) - x_clean[i * per + j];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / double(n);
}

DistanceReport distance_report(const Tensor& reference, const Tensor& candidate, int n_proj, std::uint64_t seed) {
  const SwdResult s = swd(reference, candidate, n_proj, 2.0, seed);
  DistanceReport r;
  r.swd_mean_x100 = 100.0 * s.mean;
  r.swd_std_x100 = 100.0 * s.std;
  r.ssim_mean = ssim(reference, candidate);
  r.samples = reference.dim(0);
  r.projections = n_proj;
  r.seed = seed;
  return r;
}

// ---------------------------------------------------------------------------

const CellSummary* Summary::cell(const std::string& method, const std::string& kind, int severity) const {
  for (const auto& c : cells)
    if (c.method == method && c.kind == kind && c.severity == severity) return &c;
  return nullptr;
}

Summary aggregate(std::span<const EvalRecord> records, const std::string& baseline) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  Summary s;
  s.baseline = baseline;
  std::set<int> sevs;
  struct Acc {
    double correct = 0.0, loss0 = 0.0, lossf = 0.0, ms = 0.0;
    int images = 0, batches = 0, failures = 0, fallbacks = 0;
  };
  std::map<std::tuple<std::string, std::string, int>, Acc> acc;
  for (const auto& r : records) {
    if (std::find(s.methods.begin(), s.methods.end(), r.method) == s.methods.end()) s.methods.push_back(r.method);
    if (std::find(s.kinds.begin(), s.kinds.end(), r.kind) == s.kinds.end()) s.kinds.push_back(r.kind);
    sevs.insert(r.severity);
    Acc& a = acc[{r.method, r.kind, r.severity}];
    if (r.failed()) {
      ++a.failures;
      continue;
    }
    a.correct += r.accuracy * r.count;
    a.images += r.count;
    ++a.batches;
    a.fallbacks += r.fallback;
    a.loss0 += r.loss0;
    a.lossf += r.loss_final;
    a.ms += r.wall_ms;
  }
  s.severities.assign(sevs.begin(), sevs.end());

  for (const auto& method : s.methods) {
    MethodSummary m;
    m.method = method;
    std::map<std::string, std::pair<double, int>> kind_sum;
    std::map<int, std::pair<double, int>> sev_sum;
    double total = 0.0;
    for (const auto& kind : s.kinds)
      for (int sev : s.severities) {
        const auto it = acc.find({method, kind, sev});
        if (it == acc.end() || it->second.images == 0) {
          m.complete = false;
          continue;
        }
        const Acc& a = it->second;
        if (a.failures) m.complete = false;
        CellSummary c;
        c.method = method;
        c.kind = kind;
        c.severity = sev;
        c.accuracy = 100.0 * a.correct / a.images;
        c.images = a.images;
        c.batches = a.batches;
        c.failures = a.failures;
        c.fallbacks = a.fallbacks;
        c.mean_loss0 = a.loss0 / a.batches;
        c.mean_loss_final = a.lossf / a.batches;
        c.wall_ms = a.ms;
        s.cells.push_back(c);
        kind_sum[kind].first += c.accuracy;
        ++kind_sum[kind].second;
        sev_sum[sev].first += c.accuracy;
        ++sev_sum[sev].second;
        total += c.accuracy;
        ++m.cells;
      }
    for (const auto& [k, v] : kind_sum) m.per_kind[k] = v.first / v.second;
    for (const auto& [k, v] : sev_sum) m.per_severity[k] = v.first / v.second;
    if (m.cells) {
      m.avg_accuracy = total / m.cells;
      m.avg_error = 100.0 - m.avg_accuracy;
    }
    s.complete = s.complete && m.complete;
    s.by_method[method] = std::move(m);
  }
  const auto base = s.by_method.find(baseline);
  if (base != s.by_method.end() && base->second.cells)
    for (auto& [name, m] : s.by_method)
      if (name != baseline && m.cells) m.diff = m.avg_error - base->second.avg_error;
  return s;
}

}  // namespace cvpb
