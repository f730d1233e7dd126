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

#include "cvpb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "cvpb/container.hpp"
#include "cvpb/report.hpp"
#include "cvpb/rng.hpp"

namespace cvpb {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kTrainDataTag = 0x54524149;  // "TRAI"
constexpr std::uint64_t kEvalDataTag = 0x4556414c;
constexpr std::uint64_t kBackboneTag = 0x424b424e;
constexpr std::uint64_t kReferenceTag = 0x52454642;
constexpr std::uint64_t kSslTag = 0x53534c49;
constexpr std::uint64_t kRotationTag = 0x524f5449;
constexpr std::uint64_t kCorruptTag = 0x434f5252;
constexpr std::uint64_t kBatchTag = 0x42415443;
constexpr std::uint64_t kReversalTag = 0x52455653;

void say(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

std::string fixed(double v, int digits) {
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

bool needs_rotation(const ExperimentConfig& cfg) {
  return std::any_of(cfg.methods.begin(), cfg.methods.end(),
                     [](const MethodSpec& m) { return m.adapt.ssl_task == SslTask::kRotation; });
}

std::optional<Container> cached(const std::optional<fs::path>& dir, const std::string& file, const std::string& key) {
  if (!dir) return std::nullopt;
  const fs::path p = *dir / file;
  if (!fs::exists(p)) return std::nullopt;
  Container c = load_container(p);
  auto it = c.metadata.find("config_key");
  if (it == c.metadata.end() || it->second != key) return std::nullopt;
  return c;
}

void store(const std::optional<fs::path>& dir, const std::string& file, const Container& c) {
  if (dir) save_container(*dir / file, c);
}

struct Unit {
  CorruptionKind kind;
  int severity;
};

// Batch boundaries over n images; a trailing single image joins the
// previous batch because batch statistics need two.
std::vector<std::pair<int, int>> batches(int n, int bs) {
  std::vector<std::pair<int, int>> out;
  for (int b = 0; b < n; b += bs) out.emplace_back(b, std::min(n, b + bs));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

}  // namespace

SourceData load_source(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  SourceData out;
  if (d.source == "cifar10") {
    const Dataset train = load_cifar10(d.cifar_dir, true);
    const Dataset test = load_cifar10(d.cifar_dir, false);
    out.train = train.slice(0, std::min(d.train_count, train.size()));
    out.eval = test.slice(0, std::min(d.eval_count, test.size()));
    return out;
  }
  ShapesParams p;
  p.num_classes = d.num_classes;
  p.background_noise = d.background_noise;
  p.variability = d.variability;
  p.count = d.train_count;
  out.train = synth_shapes(p, derive_seed({cfg.seed, kTrainDataTag}));
  p.count = d.eval_count;
  out.eval = synth_shapes(p, derive_seed({cfg.seed, kEvalDataTag}));
  return out;
}

Backbone prepare_backbone(const ExperimentConfig& cfg, const SourceData& data, const std::optional<fs::path>& dir,
                          bool reference, double* clean_accuracy, std::ostream* log) {
  if (reference && !cfg.reference) throw std::invalid_argument("config declares no reference model");
  const std::string what = reference ? "reference" : "backbone";
  const std::string file = what + ".cvpb";
  const std::string key = artifact_key(cfg, what);
  Backbone bb;
  std::optional<double> recorded;
  bool loaded = false;
  if (auto c = cached(dir, file, key)) {
    loaded = true;
    bb = backbone_from(*c);
    // The recorded accuracy is only comparable on an eval split of the same size.
    if (std::stoi(c->meta("eval_count")) == data.eval.size()) recorded = std::stod(c->meta("clean_accuracy"));
    say(log, "loaded " + what + " from " + (*dir / file).string());
  } else {
    BackboneSpec spec;
    spec.image_size = data.train.images.dim(2);
    spec.num_classes = data.train.num_classes;
    spec.widths = reference ? cfg.reference->widths : cfg.model.widths;
    const std::uint64_t tag = reference ? kReferenceTag : kBackboneTag;
    bb = Backbone(spec, derive_seed({cfg.seed, tag}));
    TrainHyper hyper = cfg.model.train;
    if (reference) hyper.steps = cfg.reference->steps;
    hyper.seed = derive_seed({cfg.seed, tag, 1});
    say(log, "training " + what + " (" + std::to_string(hyper.steps) + " steps on " +
                 std::to_string(data.train.size()) + " images)");
    const TrainReport rep = train_backbone(bb, data.train, hyper);
    say(log, "  final train accuracy " + fixed(100.0 * rep.train_accuracy, 2) + "%");
  }
  bb.freeze();
  const Prediction p = predict(bb, data.eval.images);
  const double acc = accuracy(p.labels, data.eval.labels);
  if (clean_accuracy) *clean_accuracy = acc;
  if (recorded && std::abs(100.0 * (acc - *recorded)) > 0.1) {
    throw IntegrityError(what + " checkpoint records clean accuracy " + fixed(100.0 * *recorded, 2) +
                         "% but scores " + fixed(100.0 * acc, 2) + "%");
  }
  say(log, "  " + what + " clean accuracy " + fixed(100.0 * acc, 2) + "%");
  if (!loaded) {
    store(dir, file,
          backbone_container(bb, {{"config_key", key},
                                  {"clean_accuracy", exact(acc)},
                                  {"train_count", std::to_string(data.train.size())},
                                  {"eval_count", std::to_string(data.eval.size())}}));
  }
  return bb;
}

SslHead prepare_ssl_head(const ExperimentConfig& cfg, const Backbone& backbone, const SourceData& data,
                         const std::optional<fs::path>& cache_dir, std::ostream* log) {
  const std::string key = artifact_key(cfg, "ssl");
  if (auto c = cached(cache_dir, "ssl_head.cvpb", key)) {
    say(log, "loaded SSL head");
    return ssl_head_from(*c);
  }
  SslHead head(backbone.feature_dim(), derive_seed({cfg.seed, kSslTag}), cfg.ssl.hidden, cfg.ssl.out);
  head.tau = cfg.ssl.tau;
  SslHyper hyper = cfg.ssl.hyper;
  hyper.seed = derive_seed({cfg.seed, kSslTag, 1});
  say(log, "training SSL head (" + std::to_string(hyper.steps) + " steps)");
  const TrainReport rep = train_ssl_head(backbone, head, data.train.images, hyper);
  if (!rep.loss_trace.empty()) say(log, "  final contrastive loss " + fixed(rep.loss_trace.back(), 4));
  store(cache_dir, "ssl_head.cvpb", ssl_head_container(head, {{"config_key", key}}));
  return head;
}

SslModel Artifacts::ssl(SslTask task) const {
  SslModel m;
  m.task = task;
  m.contrastive = &ssl_head;
  m.rotation = rotation ? &*rotation : nullptr;
  return m;
}

Artifacts prepare_artifacts(const ExperimentConfig& cfg, const SourceData& data,
                            const std::optional<fs::path>& cache_dir, std::ostream* log) {
  cfg.validate();
  Artifacts a;
  a.backbone = prepare_backbone(cfg, data, cache_dir, false, &a.clean_accuracy, log);

  a.ssl_head = prepare_ssl_head(cfg, a.backbone, data, cache_dir, log);

  if (needs_rotation(cfg)) {
    const std::string key = artifact_key(cfg, "rotation");
    if (auto c = cached(cache_dir, "rotation_head.cvpb", key)) {
      a.rotation = rotation_head_from(*c);
    } else {
      a.rotation = RotationHead(a.backbone.feature_dim(), derive_seed({cfg.seed, kRotationTag}));
      SslHyper hyper = cfg.ssl.hyper;
      hyper.steps = cfg.ssl.rotation_steps;
      hyper.seed = derive_seed({cfg.seed, kRotationTag, 1});
      say(log, "training rotation head (" + std::to_string(hyper.steps) + " steps)");
      train_rotation_head(a.backbone, *a.rotation, data.train.images, hyper);
      store(cache_dir, "rotation_head.cvpb", rotation_head_container(*a.rotation, {{"config_key", key}}));
    }
  }

  if (cfg.reference) a.reference = prepare_backbone(cfg, data, cache_dir, true, &a.reference_clean_accuracy, log);
  return a;
}

std::uint64_t corruption_seed(const ExperimentConfig& cfg) { return derive_seed({cfg.seed, kCorruptTag}); }

std::uint64_t batch_seed(const ExperimentConfig& cfg, CorruptionKind kind, int severity, int batch) {
  return derive_seed({cfg.seed, kBatchTag, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(severity),
                      static_cast<std::uint64_t>(batch)});
}

std::vector<EvalRecord> run_grid(const ExperimentConfig& cfg, const Artifacts& artifacts, const Dataset& eval,
                                 const RecordSink& sink, std::ostream* log) {
  cfg.validate();
  if (eval.size() == 0) throw std::invalid_argument("run_grid: empty eval split");
  std::vector<Unit> units;
  for (const auto& k : cfg.grid.kinds)
    for (int s : cfg.grid.severities) units.push_back({parse_corruption(k), s});
  std::vector<Method> methods;
  for (const auto& m : cfg.methods) methods.push_back(parse_method(m.method));
  const SeverityTable table = cfg.grid.table();
  const std::uint64_t cseed = corruption_seed(cfg);

  std::vector<std::vector<EvalRecord>> out(units.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  std::exception_ptr error;

  // One method over every batch of a corrupted cell. `ws` is the worker's
  // model copy; it is rebuilt after an integrity failure.
  auto run_cell = [&](const Unit& u, const Tensor& xc, const std::string& label, const Method& method,
                      const AdaptConfig& adapt, const SslModel& ssl, Backbone& ws, const Backbone& pristine,
                      std::vector<EvalRecord>& recs) {
    int b = 0;
    for (const auto& [lo, hi] : batches(eval.size(), adapt.batch_size)) {
      EvalRecord r;
      r.method = label;
      r.kind = std::string(corruption_name(u.kind));
      r.severity = u.severity;
      r.batch = b;
      r.count = hi - lo;
      AdaptConfig a = adapt;
      a.seed = batch_seed(cfg, u.kind, u.severity, b);
      r.seed = a.seed;
      ++b;
      const Tensor x = xc.slice_batch(lo, hi);
      const std::span<const int> y(eval.labels.data() + lo, static_cast<std::size_t>(hi - lo));
      try {
        const AdaptOutcome o = run_method(method, x, ws, ssl, a);
        r.accuracy = accuracy(o.predictions, y);
        r.loss0 = o.initial_loss();
        r.loss_final = o.final_loss;
        r.fallback = o.fallback;
        r.wall_ms = o.wall_ms;
        recs.push_back(std::move(r));
        continue;
      } catch (const IntegrityError& e) {
        r.error = std::string("integrity: ") + e.what();
      } catch (const NumericError& e) {
        r.error = std::string("numeric: ") + e.what();
      }
      recs.push_back(std::move(r));
      ws = pristine;
      return;
    }
  };

  auto worker = [&]() {
    Backbone ws = artifacts.backbone;
    std::optional<Backbone> ref_ws = artifacts.reference;
    const Method standard{};
    while (!stop) {
      const std::size_t i = next++;
      if (i >= units.size()) break;
      try {
        const Unit& u = units[i];
        const Tensor xc = corrupt(eval.images, {u.kind, u.severity, cseed}, table);
        std::vector<EvalRecord> recs;
        for (std::size_t m = 0; m < methods.size(); ++m) {
          const MethodSpec& spec = cfg.methods[m];
          run_cell(u, xc, spec.label, methods[m], spec.adapt, artifacts.ssl(spec.adapt.ssl_task), ws,
                   artifacts.backbone, recs);
        }
        if (ref_ws) {
          run_cell(u, xc, kReferenceLabel, standard, cfg.adapt, artifacts.ssl(SslTask::kContrastive), *ref_ws,
                   *artifacts.reference, recs);
        }
        std::lock_guard<std::mutex> lock(mu);
        if (sink) sink(recs);
        if (log) {
          std::ostringstream line;
          line << corruption_name(u.kind) << " s" << u.severity << ":";
          for (const auto& spec : cfg.methods) {
            double hit = 0.0;
            int n = 0;
            for (const auto& r : recs)
              if (r.method == spec.label && !r.failed()) hit += r.accuracy * r.count, n += r.count;
            line << " " << spec.label << "=" << (n ? fixed(100.0 * hit / n, 2) : std::string("failed"));
          }
          *log << line.str() << std::endl;
        }
        out[i] = std::move(recs);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
      }
    }
  };

  const int n_workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(units.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  std::vector<EvalRecord> all;
  for (auto& recs : out) all.insert(all.end(), recs.begin(), recs.end());
  return all;
}

fs::path resolve_out_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("CVPB_OUT"); env && *env) return fs::path(env);
  return fs::path(cfg.out_dir);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log,
                                const std::optional<fs::path>& out_dir) {
  cfg.validate();
  ExperimentResult res;
  res.out_dir = out_dir ? *out_dir : resolve_out_dir(cfg);
  fs::create_directories(res.out_dir);
  save_config(res.out_dir / "config.json", cfg);

  const SourceData data = load_source(cfg);
  say(log, "data: " + std::to_string(data.train.size()) + " train, " + std::to_string(data.eval.size()) +
               " eval images per cell (" + cfg.data.source + ")");
  const Artifacts artifacts = prepare_artifacts(cfg, data, res.out_dir / "checkpoints", log);
  res.clean_accuracy = artifacts.clean_accuracy;

  const fs::path ldjson = res.out_dir / "records.ldjson";
  fs::remove(ldjson);
  res.records = run_grid(
      cfg, artifacts, data.eval, [&](const std::vector<EvalRecord>& recs) { append_ldjson(ldjson, recs); }, log);
  write_records_csv(res.out_dir / "records.csv", res.records);
  res.summary = aggregate(res.records);
  write_summary_csv(res.out_dir / "summary.csv", res.summary);
  const Report table = emit_report(res.records, Layout::kTable1, res.out_dir);
  for (const auto& w : table.warnings) say(log, "warning: " + w);
  return res;
}

std::vector<ReversalRecord> reversal_study(const Tensor& clean, const Backbone& backbone, const SslModel& ssl,
                                           const ReversalConfig& cfg, std::ostream* log) {
  require_nchw(clean, "reversal_study");
  const int full = std::min(clean.dim(2), clean.dim(3));
  for (int r : cfg.lvp_ranks)
    if (r < 1 || r > full) throw std::invalid_argument("reversal_study: LVP rank out of range");
  std::vector<ReversalRecord> out;
  for (std::uint64_t seed : cfg.seeds) {
    for (StructureFamily fam : cfg.families) {
      const Tensor delta = synth_structured_delta(clean, fam, cfg.magnitude,
                                                  derive_seed({seed, kReversalTag, static_cast<std::uint64_t>(fam)}));
      Tensor xc = clean;
      for (std::size_t i = 0; i < xc.numel(); ++i) xc[i] += delta[i];
      const double delta_norm = reversal_residual(clean, xc);
      AdaptConfig a = cfg.adapt;
      a.seed = derive_seed({seed, kReversalTag, static_cast<std::uint64_t>(fam), 1});

      auto record = [&](const char* prompt, int rank, const AdaptOutcome& o) {
        ReversalRecord r;
        r.family = std::string(structure_name(fam));
        r.prompt = prompt;
        r.rank = rank;
        r.seed = seed;
        r.residual = reversal_residual(clean, o.adapted);
        r.delta_norm = delta_norm;
        r.loss0 = o.initial_loss();
        r.loss_final = o.final_loss;
        say(log, r.family + " seed " + std::to_string(seed) + " " + prompt + "(" + std::to_string(rank) +
                     "): residual " + fixed(r.residual, 4) + " (|delta| " + fixed(delta_norm, 4) + ")");
        out.push_back(std::move(r));
      };
      for (int k : cfg.cvp_kernels) {
        AdaptConfig c = a;
        c.kernel_size = k;
        record("cvp", k, adapt_cvp(xc, backbone, ssl, c));
      }
      for (int r : cfg.lvp_ranks) {
        AdaptConfig c = a;
        c.rank = r;
        record("lvp", r, adapt_lvp(xc, backbone, ssl, c));
      }
      if (cfg.free_form_vp) {
        AdaptConfig c = a;
        c.epsilon = kUnbounded;
        record("vp", full, adapt_additive_vp(xc, backbone, ssl, c, VpVariant::kPatch));
      }
    }
  }
  return out;
}

}  // namespace cvpb
