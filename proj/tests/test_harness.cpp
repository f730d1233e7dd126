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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cvpb/cli.hpp"
#include "cvpb/config.hpp"
#include "cvpb/harness.hpp"
#include "cvpb/report.hpp"
#include "table_fixture.hpp"

namespace cvpb {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cvpb_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.data.train_count = 1000;  // train_backbone minimum
  cfg.data.eval_count = 20;
  cfg.model.widths = {4, 8, 8, 8};
  cfg.model.train.steps = 20;
  cfg.model.train.batch_size = 16;
  cfg.ssl.hyper.steps = 5;
  cfg.ssl.hyper.batch_size = 8;
  cfg.ssl.hidden = 16;
  cfg.ssl.out = 8;
  cfg.grid.kinds = {"gaussian_noise", "contrast"};
  cfg.grid.severities = {1, 3};
  cfg.adapt.iters = 2;
  for (auto& m : cfg.methods) m.adapt = cfg.adapt;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, RoundTripIsByteIdentical) {
  ExperimentConfig cfg = tiny_config();
  cfg.adapt.epsilon = kUnbounded;
  cfg.adapt.lambda_range = {0.25f, 1.75f};
  cfg.reference = ReferenceConfig{};
  MethodSpec vp{"vp-wide", "vp-patch", cfg.adapt};
  vp.adapt.epsilon = 0.1f;
  cfg.methods.push_back(vp);
  const std::string a = config_to_json(cfg);
  const std::string b = config_to_json(config_from_json(a));
  EXPECT_EQ(a, b);
  EXPECT_EQ(config_from_json(a).method("vp-wide").adapt.epsilon, 0.1f);
}

TEST(Config, DefaultsRoundTrip) {
  const std::string a = config_to_json(ExperimentConfig::defaults());
  EXPECT_EQ(config_to_json(config_from_json(a)), a);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    config_from_json(R"({"adapt": {"iterz": 3}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("iterz"), std::string::npos) << e.what();
  }
}

TEST(Config, InvertedLambdaRangeRejected) {
  EXPECT_THROW(config_from_json(R"({"adapt": {"lambda_range": [3.0, 0.5]}})"), ConfigError);
}

TEST(Config, ArtifactKeyIgnoresEvalCount) {
  ExperimentConfig a = tiny_config(), b = tiny_config();
  b.data.eval_count = 500;
  EXPECT_EQ(artifact_key(a, "backbone"), artifact_key(b, "backbone"));
  b.model.train.steps += 1;
  EXPECT_NE(artifact_key(a, "backbone"), artifact_key(b, "backbone"));
}

// ---------------------------------------------------------------------------
// Grid

class Grid : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new ExperimentConfig(tiny_config());
    data_ = new SourceData(load_source(*cfg_));
    art_ = new Artifacts(prepare_artifacts(*cfg_, *data_));
  }
  static void TearDownTestSuite() {
    delete art_;
    delete data_;
    delete cfg_;
  }
  static ExperimentConfig* cfg_;
  static SourceData* data_;
  static Artifacts* art_;
};
ExperimentConfig* Grid::cfg_ = nullptr;
SourceData* Grid::data_ = nullptr;
Artifacts* Grid::art_ = nullptr;

TEST_F(Grid, CanonicalRecordsAndPromptInvariant) {
  const auto recs = run_grid(*cfg_, *art_, data_->eval);
  // 2 kinds x 2 severities x 2 methods x 2 batches (16 + 4).
  ASSERT_EQ(recs.size(), 16u);
  int images = 0;
  for (const auto& r : recs) {
    EXPECT_FALSE(r.failed()) << r.error;
    if (r.method == "standard") {
      EXPECT_EQ(r.wall_ms, 0.0);
      images += r.count;
    } else {
      EXPECT_LE(r.loss_final, r.loss0);
    }
  }
  EXPECT_EQ(images, 4 * 20);
  EXPECT_EQ(recs.front().kind, "gaussian_noise");
  EXPECT_EQ(recs.back().kind, "contrast");
}

TEST_F(Grid, SummaryIndependentOfWorkerCount) {
  ExperimentConfig two = *cfg_;
  two.workers = 2;
  const fs::path dir = scratch("workers");
  write_summary_csv(dir / "one.csv", aggregate(run_grid(*cfg_, *art_, data_->eval)));
  write_summary_csv(dir / "two.csv", aggregate(run_grid(two, *art_, data_->eval)));
  EXPECT_EQ(slurp(dir / "one.csv"), slurp(dir / "two.csv"));
  fs::remove_all(dir);
}

TEST_F(Grid, RecordsSurviveLdjson) {
  const auto recs = run_grid(*cfg_, *art_, data_->eval);
  const fs::path dir = scratch("ldjson");
  append_ldjson(dir / "r.ldjson", std::span<const EvalRecord>(recs));
  const auto back = read_records(dir / "r.ldjson");
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].method, recs[i].method);
    EXPECT_EQ(back[i].accuracy, recs[i].accuracy);
    EXPECT_EQ(back[i].loss_final, recs[i].loss_final);
    EXPECT_EQ(back[i].seed, recs[i].seed);
  }
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Reports

TEST(Report, PublishedStandardColumn) {
  auto records = testing::published_records(testing::published_standard());
  const auto cvp = testing::published_records(testing::published_cvp_random());
  records.insert(records.end(), cvp.begin(), cvp.end());
  const fs::path dir = scratch("table1");
  const Report rep = emit_report(records, Layout::kTable1, dir);
  std::istringstream lines(rep.markdown);
  std::string line, avg_error;
  while (std::getline(lines, line))
    if (line.find("Avg. Error") != std::string::npos) avg_error = line;
  EXPECT_NE(avg_error.find("58.24"), std::string::npos) << avg_error;
  EXPECT_NE(avg_error.find("52.37"), std::string::npos) << avg_error;
  EXPECT_TRUE(rep.warnings.empty());
  EXPECT_TRUE(fs::exists(dir / "table1.md"));
  EXPECT_TRUE(fs::exists(dir / "table1.csv"));
  fs::remove_all(dir);
}

TEST(Report, EmptyRecordsWriteNothing) {
  const fs::path dir = scratch("empty");
  EXPECT_ANY_THROW(emit_report(std::vector<EvalRecord>{}, Layout::kTable1, dir));
  EXPECT_TRUE(fs::is_empty(dir));
  fs::remove_all(dir);
}

TEST(Report, MissingCellPrintsDash) {
  auto records = testing::published_records(testing::published_standard());
  auto cvp = testing::published_records(testing::published_cvp_random());
  cvp.pop_back();
  records.insert(records.end(), cvp.begin(), cvp.end());
  const fs::path dir = scratch("missing");
  const Report rep = emit_report(records, Layout::kTable1, dir);
  EXPECT_NE(rep.markdown.find("\xE2\x80\x94"), std::string::npos);
  EXPECT_FALSE(rep.warnings.empty());
  fs::remove_all(dir);
}

TEST(Report, Table4PairsComposedWithBase) {
  std::vector<EvalRecord> recs;
  for (const char* m : {"standard", "tent", "tent+cvp"}) {
    EvalRecord r;
    r.method = m;
    r.kind = "fog";
    r.severity = 1;
    r.count = 10;
    r.accuracy = std::string(m) == "tent+cvp" ? 0.8 : 0.6;
    recs.push_back(r);
  }
  const fs::path dir = scratch("table4");
  const Report rep = emit_report(recs, Layout::kTable4, dir);
  EXPECT_NE(rep.markdown.find("tent+cvp"), std::string::npos);
  EXPECT_NE(rep.markdown.find("20.00"), std::string::npos) << rep.markdown;
  fs::remove_all(dir);
}

TEST(Report, Fig5Schema) {
  std::vector<ReversalRecord> recs;
  for (std::uint64_t seed : {0, 1}) {
    recs.push_back({"conv", "lvp", 3, seed, 1.0 + static_cast<double>(seed), 2.0, 0.5, 0.4});
    recs.push_back({"conv", "lvp", 31, seed, 3.0, 2.0, 0.5, 0.4});
  }
  const fs::path dir = scratch("fig5");
  emit_fig5(recs, dir);
  std::istringstream csv(slurp(dir / "fig5.csv"));
  std::string header, row;
  std::getline(csv, header);
  EXPECT_EQ(header, "series,x,y,y_std,seeds,delta_norm");
  int rows = 0;
  while (std::getline(csv, row))
    if (!row.empty()) ++rows;
  EXPECT_EQ(rows, 2);
  EXPECT_NE(slurp(dir / "fig5.csv").find("conv/lvp,3,1.5,0.5,2"), std::string::npos) << slurp(dir / "fig5.csv");
  fs::remove_all(dir);
}

TEST(Report, LayoutNames) {
  for (const char* n : {"table1", "table4", "fig4", "fig5"}) EXPECT_EQ(layout_name(parse_layout(n)), n);
  EXPECT_ANY_THROW(parse_layout("table2"));
}

// ---------------------------------------------------------------------------
// Command line

int run(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "cvpb");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

TEST(Cli, NoArgumentsIsUsageError) {
  std::string out, err;
  EXPECT_EQ(run({}, &out, &err), kExitUsage);
  EXPECT_NE(err.find("Usage"), std::string::npos);
  EXPECT_TRUE(out.empty());
}

TEST(Cli, UnknownFlag) {
  std::string err;
  EXPECT_EQ(run({"adapt", "--frobnicate"}, nullptr, &err), kExitUsage);
  EXPECT_NE(err.find("--frobnicate"), std::string::npos);
  EXPECT_NE(err.find("Usage"), std::string::npos);
}

TEST(Cli, InvertedLambdaRangeNamesFlag) {
  std::string err;
  EXPECT_EQ(run({"adapt", "--lambda-range", "3,0.5"}, nullptr, &err), kExitUsage);
  EXPECT_NE(err.find("--lambda-range"), std::string::npos);
  EXPECT_NE(err.find("inverted"), std::string::npos);
}

TEST(Cli, HelpExitsZero) {
  std::string out;
  EXPECT_EQ(run({"--help"}, &out), kExitOk);
  EXPECT_NE(out.find("sweep"), std::string::npos);
}

TEST(Cli, BadValues) {
  EXPECT_EQ(run({"adapt", "--init", "zeros"}), kExitUsage);
  EXPECT_EQ(run({"adapt", "--epsilon", "-1"}), kExitUsage);
  EXPECT_EQ(run({"adapt", "--method", "nonsense", "--config", "/no/such/file.json"}), kExitUsage);
  EXPECT_EQ(run({"report", "--layout", "table9"}), kExitUsage);
}

TEST(Cli, CorruptedCheckpointExitsTwo) {
  const fs::path dir = scratch("cli");
  save_config(dir / "cfg.json", tiny_config());
  const std::string out = (dir / "out").string();
  ASSERT_EQ(run({"train-backbone", "--config", (dir / "cfg.json").string(), "--out", out}), kExitOk);
  fs::path ckpt;
  for (const auto& e : fs::directory_iterator(dir / "out" / "checkpoints"))
    if (e.path().extension() == ".cvpb") ckpt = e.path();
  ASSERT_FALSE(ckpt.empty());
  // Reloading an intact checkpoint succeeds.
  ASSERT_EQ(run({"train-backbone", "--config", (dir / "cfg.json").string(), "--out", out}), kExitOk);
  {
    std::fstream f(ckpt, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    f.put('\x7f');
  }
  std::string err;
  EXPECT_EQ(run({"train-backbone", "--config", (dir / "cfg.json").string(), "--out", out}, nullptr, &err),
            kExitIntegrity);
  EXPECT_NE(err.find("integrity"), std::string::npos) << err;
  fs::remove_all(dir);
}

TEST(Cli, CorruptWritesDataset) {
  const fs::path dir = scratch("corrupt");
  ExperimentConfig cfg = tiny_config();
  save_config(dir / "cfg.json", cfg);
  std::string out;
  ASSERT_EQ(run({"corrupt", "--config", (dir / "cfg.json").string(), "--out", dir.string(), "--kind", "fog",
                 "--severity", "2"},
                &out),
            kExitOk);
  EXPECT_TRUE(fs::exists(dir / "corrupted" / "fog-s2.cvpb")) << out;
  fs::remove_all(dir);
}

}  // namespace
}  // namespace cvpb
