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

#include "cvpb/cli.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cvpb/container.hpp"
#include "cvpb/harness.hpp"
#include "cvpb/report.hpp"

namespace cvpb {
namespace {

namespace fs = std::filesystem;

std::optional<std::pair<float, float>> parse_range(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) return std::nullopt;
  try {
    std::size_t a = 0, b = 0;
    const std::string lo = s.substr(0, comma), hi = s.substr(comma + 1);
    const float l = std::stof(lo, &a), h = std::stof(hi, &b);
    if (a != lo.size() || b != hi.size()) return std::nullopt;
    return std::make_pair(l, h);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Flags shared by the commands that run adapters. Unset flags leave the
// configuration alone.
struct AdaptFlags {
  std::optional<int> kernel_size, iters, batch_size, rank;
  std::optional<std::string> init, lambda_range, epsilon;

  void add(CLI::App* app) {
    app->add_option("--kernel-size", kernel_size, "CVP kernel size (odd)");
    app->add_option("--init", init, "CVP kernel initialization")->check(CLI::IsMember({"fixed", "random"}));
    app->add_option("--iters", iters, "adaptation iterations T");
    app->add_option("--batch-size", batch_size, "adaptation batch size");
    app->add_option("--lambda-range", lambda_range, "CVP lambda range lo,hi")
        ->check(CLI::Validator(
            [](std::string& s) -> std::string {
              const auto r = parse_range(s);
              if (!r) return "--lambda-range expects lo,hi, got '" + s + "'";
              if (r->first > r->second) return "--lambda-range is inverted: lo " + s.substr(0, s.find(',')) +
                                               " exceeds hi " + s.substr(s.find(',') + 1);
              return "";
            },
            "LO,HI"));
    app->add_option("--epsilon", epsilon, "VP norm bound, or 'inf'")
        ->check(CLI::Validator(
            [](std::string& s) -> std::string {
              if (s == "inf") return "";
              try {
                std::size_t used = 0;
                const float v = std::stof(s, &used);
                if (used == s.size() && v >= 0.0f) return "";
              } catch (const std::exception&) {
              }
              return "--epsilon expects a nonnegative number or 'inf', got '" + s + "'";
            },
            "EPS"));
    app->add_option("--rank", rank, "LVP rank");
  }

  void apply(AdaptConfig& a) const {
    if (kernel_size) a.kernel_size = *kernel_size;
    if (init) a.init = parse_kernel_init(*init);
    if (iters) a.iters = *iters;
    if (batch_size) a.batch_size = *batch_size;
    if (lambda_range) {
      const auto r = parse_range(*lambda_range);
      a.lambda_range = {r->first, r->second};
    }
    if (epsilon) a.epsilon = *epsilon == "inf" ? kUnbounded : std::stof(*epsilon);
    if (rank) a.rank = *rank;
  }
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;

  void add(CLI::App* app, bool with_workers) {
    app->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "experiment seed");
    if (with_workers) app->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    app->add_option("--out", out, "output directory (overrides CVPB_OUT and the config)");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg = config.empty() ? ExperimentConfig::defaults() : load_config(config);
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    return cfg;
  }

  fs::path out_dir(const ExperimentConfig& cfg) const { return out ? fs::path(*out) : resolve_out_dir(cfg); }
};

bool has_integrity_failure(const std::vector<EvalRecord>& records) {
  for (const auto& r : records)
    if (r.error.rfind("integrity", 0) == 0 || r.error.rfind("numeric", 0) == 0) return true;
  return false;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time adaptation with convolutional visual prompts", "cvpb"};
  app.require_subcommand(1);

  Common common;
  AdaptFlags flags;
  std::string method = "cvp";
  std::vector<std::string> kinds;
  std::vector<int> severities;
  std::string study = "grid";
  std::string records_path, layout;

  auto* tb = app.add_subcommand("train-backbone", "train (or load) the classifier checkpoint");
  common.add(tb, false);
  auto* ts = app.add_subcommand("train-ssl", "train (or load) the self-supervised head");
  common.add(ts, false);

  auto* cr = app.add_subcommand("corrupt", "write a corrupted copy of the eval split");
  common.add(cr, false);
  cr->add_option("--kind", kinds, "corruption kind(s)")->required();
  cr->add_option("--severity", severities, "severity level(s) 1..5")->required()->check(CLI::Range(1, 5));

  auto* ad = app.add_subcommand("adapt", "run one method (and the standard baseline) over the grid");
  common.add(ad, true);
  flags.add(ad);
  ad->add_option("--method", method, "method, e.g. cvp, vp-patch, lvp, tent, tent+cvp");
  ad->add_option("--kind", kinds, "restrict the grid to these kinds");
  ad->add_option("--severity", severities, "restrict the grid to these severities")->check(CLI::Range(1, 5));

  auto* sw = app.add_subcommand("sweep", "run every configured method over the grid");
  common.add(sw, true);
  flags.add(sw);
  sw->add_option("--study", study, "grid or reversal")->check(CLI::IsMember({"grid", "reversal"}));

  auto* rp = app.add_subcommand("report", "render a report layout from saved records");
  common.add(rp, false);
  rp->add_option("--records", records_path, "records file (default <out>/records.ldjson)");
  rp->add_option("--layout", layout, "table1, table4, fig4 or fig5")
      ->required()
      ->check(CLI::IsMember({"table1", "table4", "fig4", "fig5"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    ExperimentConfig cfg = common.load();

    if (tb->parsed() || ts->parsed()) {
      const fs::path dir = common.out_dir(cfg);
      const SourceData data = load_source(cfg);
      double acc = 0.0;
      const Backbone bb = prepare_backbone(cfg, data, dir / "checkpoints", false, &acc, &out);
      if (ts->parsed()) prepare_ssl_head(cfg, bb, data, dir / "checkpoints", &out);
      out << "checkpoints in " << (dir / "checkpoints").string() << "\n";
      return kExitOk;
    }

    if (cr->parsed()) {
      const fs::path dir = common.out_dir(cfg) / "corrupted";
      const SourceData data = load_source(cfg);
      const SeverityTable table = cfg.grid.table();
      for (const auto& k : kinds) {
        const CorruptionKind kind = parse_corruption(k);
        for (int s : severities) {
          Dataset d = data.eval;
          d.images = corrupt(data.eval.images, {kind, s, corruption_seed(cfg)}, table);
          const fs::path file = dir / (k + "-s" + std::to_string(s) + ".cvpb");
          save_container(file, dataset_container(d, {{"corruption", k}, {"severity", std::to_string(s)}}));
          out << "wrote " << file.string() << "\n";
        }
      }
      return kExitOk;
    }

    if (ad->parsed() || sw->parsed()) {
      if (ad->parsed()) {
        parse_method(method);
        MethodSpec spec{method, method, cfg.adapt};
        flags.apply(spec.adapt);
        flags.apply(cfg.adapt);
        cfg.methods.clear();
        if (method != "standard") cfg.methods.push_back({"standard", "standard", cfg.adapt});
        cfg.methods.push_back(spec);
        if (!kinds.empty()) cfg.grid.kinds = kinds;
        if (!severities.empty()) cfg.grid.severities = severities;
      } else {
        flags.apply(cfg.adapt);
        for (auto& m : cfg.methods) flags.apply(m.adapt);
      }
      cfg.validate();
      const fs::path dir = common.out_dir(cfg);

      if (sw->parsed() && study == "reversal") {
        fs::create_directories(dir);
        save_config(dir / "config.json", cfg);
        const SourceData data = load_source(cfg);
        const Artifacts art = prepare_artifacts(cfg, data, dir / "checkpoints", &out);
        ReversalConfig rc;
        rc.adapt = cfg.adapt;
        rc.seeds = {cfg.seed, cfg.seed + 1, cfg.seed + 2};
        const Tensor clean = data.eval.images.slice_batch(0, std::min(16, data.eval.size()));
        const auto recs = reversal_study(clean, art.backbone, art.ssl(cfg.adapt.ssl_task), rc, &out);
        fs::remove(dir / "reversal.ldjson");
        append_ldjson(dir / "reversal.ldjson", std::span<const ReversalRecord>(recs));
        out << emit_fig5(recs, dir).markdown;
        return kExitOk;
      }

      const ExperimentResult res = run_experiment(cfg, &out, dir);
      out << "\n" << emit_report(res.records, Layout::kTable1, dir).markdown;
      if (has_integrity_failure(res.records)) {
        err << "error: integrity failures were recorded; see " << (dir / "records.ldjson").string() << "\n";
        return kExitIntegrity;
      }
      return kExitOk;
    }

    if (rp->parsed()) {
      const fs::path dir = common.out_dir(cfg);
      const Layout l = parse_layout(layout);
      Report rep;
      if (l == Layout::kFig5) {
        const auto recs = read_reversal_records(records_path.empty() ? dir / "reversal.ldjson" : fs::path(records_path));
        rep = emit_fig5(recs, dir);
      } else {
        const auto recs = read_records(records_path.empty() ? dir / "records.ldjson" : fs::path(records_path));
        rep = emit_report(recs, l, dir);
      }
      out << rep.markdown;
      for (const auto& w : rep.warnings) err << "warning: " << w << "\n";
      return kExitOk;
    }
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const FormatError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const NumericError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cvpb
