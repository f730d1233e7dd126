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

#include "cvpb/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cvpb {
namespace {

using Json = nlohmann::ordered_json;

// Shortest decimal that reads back as the same float, stored as a double so
// the dump prints "0.05" rather than "0.05000000074505806".
Json num(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  *res.ptr = '\0';
  return Json(std::strtod(buf, nullptr));
}

std::string norm_name(NormKind n) { return n == NormKind::kLinf ? "linf" : "l2"; }

// ---------------------------------------------------------------------------
// Strict readers. Each object reader tracks the keys it consumed; finish()
// rejects the rest.

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); }

void read(const Json& j, const std::string& path, int& out) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  const auto v = j.get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) fail(path, "integer out of range");
  out = static_cast<int>(v);
}

void read(const Json& j, const std::string& path, std::uint64_t& out) {
  if (j.is_number_unsigned()) {
    out = j.get<std::uint64_t>();
  } else if (j.is_number_integer() && j.get<std::int64_t>() >= 0) {
    out = static_cast<std::uint64_t>(j.get<std::int64_t>());
  } else {
    fail(path, "expected a nonnegative integer");
  }
}

void read(const Json& j, const std::string& path, float& out) {
  if (!j.is_number()) fail(path, "expected a number");
  out = j.get<float>();
}

void read(const Json& j, const std::string& path, bool& out) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  out = j.get<bool>();
}

void read(const Json& j, const std::string& path, std::string& out) {
  if (!j.is_string()) fail(path, "expected a string");
  out = j.get<std::string>();
}

template <typename T>
void read(const Json& j, const std::string& path, std::vector<T>& out) {
  if (!j.is_array()) fail(path, "expected an array");
  out.assign(j.size(), T{});
  for (std::size_t i = 0; i < j.size(); ++i) read(j[i], path + "[" + std::to_string(i) + "]", out[i]);
}

template <typename T, std::size_t N>
void read(const Json& j, const std::string& path, std::array<T, N>& out) {
  if (!j.is_array() || j.size() != N) fail(path, "expected an array of " + std::to_string(N));
  for (std::size_t i = 0; i < N; ++i) read(j[i], path + "[" + std::to_string(i) + "]", out[i]);
}

class Obj {
 public:
  Obj(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_, "expected an object");
  }

  template <typename T>
  bool opt(const char* key, T& out) {
    const Json* v = find(key);
    if (v) read(*v, sub(key), out);
    return v != nullptr;
  }
  const Json* find(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) fail(sub(it.key()), "unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Sections.

Json augment_json(const AugmentConfig& a) {
  Json j;
  j["crop"] = a.crop;
  j["crop_scale"] = Json::array({num(a.crop_scale_min), num(a.crop_scale_max)});
  j["crop_ratio"] = Json::array({num(a.crop_ratio_min), num(a.crop_ratio_max)});
  j["flip"] = a.flip;
  j["rotate"] = a.rotate;
  j["max_rotation_deg"] = num(a.max_rotation_deg);
  return j;
}

void read_augment(const Json& j, const std::string& path, AugmentConfig& a) {
  Obj o(j, path);
  o.opt("crop", a.crop);
  std::array<float, 2> pair{};
  if (o.opt("crop_scale", pair)) a.crop_scale_min = pair[0], a.crop_scale_max = pair[1];
  if (o.opt("crop_ratio", pair)) a.crop_ratio_min = pair[0], a.crop_ratio_max = pair[1];
  o.opt("flip", a.flip);
  o.opt("rotate", a.rotate);
  o.opt("max_rotation_deg", a.max_rotation_deg);
  o.finish();
}

Json adapt_json(const AdaptConfig& c) {
  Json j;
  j["iters"] = c.iters;
  j["batch_size"] = c.batch_size;
  j["ssl_task"] = std::string(ssl_task_name(c.ssl_task));
  j["n_views"] = c.n_views;
  j["augment"] = augment_json(c.augment);
  j["fallback"] = c.fallback;
  j["kernel_size"] = c.kernel_size;
  j["init"] = std::string(kernel_init_name(c.init));
  j["lambda_range"] = Json::array({num(c.lambda_range.lo), num(c.lambda_range.hi)});
  j["kernel_step"] = num(c.kernel_step);
  j["lambda_step"] = num(c.lambda_step);
  j["epsilon"] = std::isinf(c.epsilon) ? Json(nullptr) : num(c.epsilon);
  j["vp_step"] = num(c.vp_step);
  j["norm"] = norm_name(c.norm);
  j["padding_width"] = c.padding_width;
  j["rank"] = c.rank;
  j["lvp_step"] = num(c.lvp_step);
  j["weight_iters"] = c.weight_iters;
  j["weight_lr"] = num(c.weight_lr);
  j["weight_momentum"] = num(c.weight_momentum);
  j["memo_copies"] = c.memo_copies;
  return j;
}

// Applies only the keys present, so it serves both the shared defaults and
// per-method overrides.
void read_adapt(const Json& j, const std::string& path, AdaptConfig& c) {
  Obj o(j, path);
  o.opt("iters", c.iters);
  o.opt("batch_size", c.batch_size);
  std::string s;
  try {
    if (o.opt("ssl_task", s)) c.ssl_task = parse_ssl_task(s);
  } catch (const std::invalid_argument& e) {
    fail(o.sub("ssl_task"), e.what());
  }
  o.opt("n_views", c.n_views);
  if (const Json* a = o.find("augment")) read_augment(*a, o.sub("augment"), c.augment);
  o.opt("fallback", c.fallback);
  o.opt("kernel_size", c.kernel_size);
  try {
    if (o.opt("init", s)) c.init = parse_kernel_init(s);
  } catch (const std::invalid_argument& e) {
    fail(o.sub("init"), e.what());
  }
  std::array<float, 2> range{};
  if (o.opt("lambda_range", range)) c.lambda_range = {range[0], range[1]};
  o.opt("kernel_step", c.kernel_step);
  o.opt("lambda_step", c.lambda_step);
  if (const Json* e = o.find("epsilon")) {
    if (e->is_null()) {
      c.epsilon = kUnbounded;
    } else {
      read(*e, o.sub("epsilon"), c.epsilon);
    }
  }
  o.opt("vp_step", c.vp_step);
  if (o.opt("norm", s)) {
    if (s == "linf") {
      c.norm = NormKind::kLinf;
    } else if (s == "l2") {
      c.norm = NormKind::kL2;
    } else {
      fail(o.sub("norm"), "expected \"linf\" or \"l2\", got \"" + s + "\"");
    }
  }
  o.opt("padding_width", c.padding_width);
  o.opt("rank", c.rank);
  o.opt("lvp_step", c.lvp_step);
  o.opt("weight_iters", c.weight_iters);
  o.opt("weight_lr", c.weight_lr);
  o.opt("weight_momentum", c.weight_momentum);
  o.opt("memo_copies", c.memo_copies);
  o.finish();
}

Json data_json(const DataConfig& d) {
  Json j;
  j["source"] = d.source;
  j["cifar_dir"] = d.cifar_dir;
  j["train_count"] = d.train_count;
  j["eval_count"] = d.eval_count;
  j["num_classes"] = d.num_classes;
  j["variability"] = num(d.variability);
  j["background_noise"] = num(d.background_noise);
  return j;
}

void read_data(const Json& j, DataConfig& d) {
  Obj o(j, "data");
  o.opt("source", d.source);
  o.opt("cifar_dir", d.cifar_dir);
  o.opt("train_count", d.train_count);
  o.opt("eval_count", d.eval_count);
  o.opt("num_classes", d.num_classes);
  o.opt("variability", d.variability);
  o.opt("background_noise", d.background_noise);
  o.finish();
}

Json model_json(const ModelConfig& m) {
  Json j;
  j["widths"] = m.widths;
  const TrainHyper& t = m.train;
  j["train"] = {{"steps", t.steps},       {"batch_size", t.batch_size},       {"lr", num(t.lr)},
                {"momentum", num(t.momentum)}, {"weight_decay", num(t.weight_decay)}, {"cosine", t.cosine},
                {"augment", t.augment}};
  return j;
}

void read_model(const Json& j, ModelConfig& m) {
  Obj o(j, "model");
  o.opt("widths", m.widths);
  if (const Json* t = o.find("train")) {
    Obj ot(*t, "model.train");
    ot.opt("steps", m.train.steps);
    ot.opt("batch_size", m.train.batch_size);
    ot.opt("lr", m.train.lr);
    ot.opt("momentum", m.train.momentum);
    ot.opt("weight_decay", m.train.weight_decay);
    ot.opt("cosine", m.train.cosine);
    ot.opt("augment", m.train.augment);
    ot.finish();
  }
  o.finish();
}

Json ssl_json(const SslConfig& s) {
  Json j;
  j["steps"] = s.hyper.steps;
  j["batch_size"] = s.hyper.batch_size;
  j["lr"] = num(s.hyper.lr);
  j["momentum"] = num(s.hyper.momentum);
  j["n_views"] = s.hyper.n_views;
  j["augment"] = augment_json(s.hyper.augment);
  j["tau"] = num(s.tau);
  j["hidden"] = s.hidden;
  j["out"] = s.out;
  j["rotation_steps"] = s.rotation_steps;
  return j;
}

void read_ssl(const Json& j, SslConfig& s) {
  Obj o(j, "ssl");
  o.opt("steps", s.hyper.steps);
  o.opt("batch_size", s.hyper.batch_size);
  o.opt("lr", s.hyper.lr);
  o.opt("momentum", s.hyper.momentum);
  o.opt("n_views", s.hyper.n_views);
  if (const Json* a = o.find("augment")) read_augment(*a, "ssl.augment", s.hyper.augment);
  o.opt("tau", s.tau);
  o.opt("hidden", s.hidden);
  o.opt("out", s.out);
  o.opt("rotation_steps", s.rotation_steps);
  o.finish();
}

Json grid_json(const GridConfig& g) {
  Json j;
  j["kinds"] = g.kinds;
  j["severities"] = g.severities;
  Json over = Json::object();
  for (const auto& [kind, levels] : g.severity_overrides) {
    Json amount = Json::array(), angle = Json::array();
    for (const auto& p : levels) {
      amount.push_back(num(p.amount));
      angle.push_back(num(p.angle_deg));
    }
    over[kind] = {{"amount", amount}, {"angle_deg", angle}};
  }
  j["severity_overrides"] = over;
  return j;
}

void read_grid(const Json& j, GridConfig& g) {
  Obj o(j, "grid");
  o.opt("kinds", g.kinds);
  o.opt("severities", g.severities);
  if (const Json* over = o.find("severity_overrides")) {
    if (!over->is_object()) fail("grid.severity_overrides", "expected an object");
    g.severity_overrides.clear();
    for (auto it = over->begin(); it != over->end(); ++it) {
      const std::string path = "grid.severity_overrides." + it.key();
      Obj ok(it.value(), path);
      std::array<float, 5> amount{}, angle{};
      if (!ok.opt("amount", amount)) fail(path + ".amount", "required");
      ok.opt("angle_deg", angle);
      ok.finish();
      auto& levels = g.severity_overrides[it.key()];
      for (std::size_t s = 0; s < 5; ++s) levels[s] = {amount[s], angle[s]};
    }
  }
  o.finish();
}

}  // namespace

// ---------------------------------------------------------------------------

SeverityTable GridConfig::table() const {
  SeverityTable t = SeverityTable::defaults();
  for (const auto& [kind, levels] : severity_overrides)
    for (int s = 0; s < 5; ++s) t.set(parse_corruption(kind), s + 1, levels[static_cast<std::size_t>(s)]);
  return t;
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  for (CorruptionKind k : kImplementedKinds) c.grid.kinds.emplace_back(corruption_name(k));
  c.methods.push_back({"standard", "standard", c.adapt});
  c.methods.push_back({"cvp", "cvp", c.adapt});
  return c;
}

const MethodSpec& ExperimentConfig::method(const std::string& label) const {
  for (const auto& m : methods)
    if (m.label == label) return m;
  throw ConfigError("no method labelled " + label);
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key + ": " + what);
  };
  require(data.source == "shapes" || data.source == "cifar10", "data.source", "expected \"shapes\" or \"cifar10\"");
  require(data.source != "cifar10" || !data.cifar_dir.empty(), "data.cifar_dir", "required for cifar10");
  require(data.train_count > 0, "data.train_count", "must be positive");
  require(data.eval_count > 0, "data.eval_count", "must be positive");
  require(data.num_classes >= 2 && data.num_classes <= 8, "data.num_classes", "must be in 2..8");
  require(data.variability >= 0.0f && data.variability <= 1.0f, "data.variability", "must be in [0, 1]");
  require(data.background_noise >= 0.0f, "data.background_noise", "must be nonnegative");
  for (int w : model.widths) require(w > 0, "model.widths", "must be positive");
  require(model.train.steps >= 0, "model.train.steps", "must be nonnegative");
  require(model.train.batch_size > 0, "model.train.batch_size", "must be positive");
  require(model.train.lr > 0.0f, "model.train.lr", "must be positive");
  require(ssl.hyper.steps >= 0, "ssl.steps", "must be nonnegative");
  require(ssl.hyper.batch_size >= 2, "ssl.batch_size", "must be at least 2");
  require(ssl.hyper.n_views >= 2, "ssl.n_views", "must be at least 2");
  require(ssl.tau > 0.0f, "ssl.tau", "must be positive");
  require(ssl.hidden > 0 && ssl.out > 0, "ssl.hidden", "head widths must be positive");
  require(ssl.rotation_steps >= 0, "ssl.rotation_steps", "must be nonnegative");

  require(!grid.kinds.empty(), "grid.kinds", "must not be empty");
  std::set<std::string> kinds;
  for (const auto& k : grid.kinds) {
    try {
      require(is_implemented(parse_corruption(k)), "grid.kinds", k + " is not implemented");
    } catch (const std::invalid_argument& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError(std::string("grid.kinds: ") + e.what());
    }
    require(kinds.insert(k).second, "grid.kinds", "duplicate " + k);
  }
  require(!grid.severities.empty(), "grid.severities", "must not be empty");
  std::set<int> sev;
  for (int s : grid.severities) {
    require(s >= 1 && s <= 5, "grid.severities", "must be in 1..5");
    require(sev.insert(s).second, "grid.severities", "duplicate " + std::to_string(s));
  }
  for (const auto& [k, levels] : grid.severity_overrides) {
    try {
      require(is_implemented(parse_corruption(k)), "grid.severity_overrides", k + " is not implemented");
    } catch (const std::invalid_argument& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError(std::string("grid.severity_overrides: ") + e.what());
    }
  }

  try {
    adapt.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("adapt: ") + e.what());
  }
  require(!methods.empty(), "methods", "must not be empty");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const std::string key = "methods[" + std::to_string(i) + "]";
    const MethodSpec& m = methods[i];
    require(!m.label.empty(), key + ".label", "must not be empty");
    require(labels.insert(m.label).second, key + ".label", "duplicate " + m.label);
    require(m.label != kReferenceLabel, key + ".label", "\"reference\" is reserved for the mCE reference model");
    try {
      parse_method(m.method);
      m.adapt.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  if (reference) {
    for (int w : reference->widths) require(w > 0, "reference.widths", "must be positive");
    require(reference->steps >= 0, "reference.steps", "must be nonnegative");
  }
  require(!out_dir.empty(), "out_dir", "must not be empty");
  require(workers >= 1, "workers", "must be at least 1");
}

std::string config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  j["out_dir"] = cfg.out_dir;
  j["data"] = data_json(cfg.data);
  j["model"] = model_json(cfg.model);
  j["ssl"] = ssl_json(cfg.ssl);
  j["grid"] = grid_json(cfg.grid);
  const Json shared = adapt_json(cfg.adapt);
  j["adapt"] = shared;
  Json methods = Json::array();
  for (const auto& m : cfg.methods) {
    // Only the fields that differ from the shared defaults.
    Json over = Json::object();
    const Json mine = adapt_json(m.adapt);
    for (auto it = mine.begin(); it != mine.end(); ++it)
      if (shared.at(it.key()) != it.value()) over[it.key()] = it.value();
    methods.push_back({{"label", m.label}, {"method", m.method}, {"adapt", over}});
  }
  j["methods"] = methods;
  if (cfg.reference) {
    j["reference"] = {{"widths", cfg.reference->widths}, {"steps", cfg.reference->steps}};
  } else {
    j["reference"] = nullptr;
  }
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg = ExperimentConfig::defaults();
  Obj o(j, "");
  o.opt("seed", cfg.seed);
  o.opt("workers", cfg.workers);
  o.opt("out_dir", cfg.out_dir);
  if (const Json* v = o.find("data")) read_data(*v, cfg.data);
  if (const Json* v = o.find("model")) read_model(*v, cfg.model);
  if (const Json* v = o.find("ssl")) read_ssl(*v, cfg.ssl);
  if (const Json* v = o.find("grid")) read_grid(*v, cfg.grid);
  if (const Json* v = o.find("adapt")) read_adapt(*v, "adapt", cfg.adapt);
  if (const Json* v = o.find("methods")) {
    if (!v->is_array()) fail("methods", "expected an array");
    cfg.methods.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string path = "methods[" + std::to_string(i) + "]";
      Obj om((*v)[i], path);
      MethodSpec m{"", "", cfg.adapt};
      if (!om.opt("method", m.method)) fail(path + ".method", "required");
      m.label = m.method;
      om.opt("label", m.label);
      if (const Json* a = om.find("adapt")) read_adapt(*a, path + ".adapt", m.adapt);
      om.finish();
      cfg.methods.push_back(std::move(m));
    }
  } else {
    // Default methods follow the shared adapt block.
    for (auto& m : cfg.methods) m.adapt = cfg.adapt;
  }
  if (const Json* v = o.find("reference")) {
    if (v->is_null()) {
      cfg.reference.reset();
    } else {
      ReferenceConfig r;
      Obj orf(*v, "reference");
      orf.opt("widths", r.widths);
      orf.opt("steps", r.steps);
      orf.finish();
      cfg.reference = r;
    }
  }
  o.finish();
  cfg.validate();
  return cfg;
}

std::string artifact_key(const ExperimentConfig& cfg, std::string_view artifact) {
  Json j;
  j["artifact"] = std::string(artifact);
  j["seed"] = cfg.seed;
  j["data"] = data_json(cfg.data);
  j["data"].erase("eval_count");
  if (artifact == "reference") {
    ModelConfig m = cfg.model;
    if (cfg.reference) {
      m.widths = cfg.reference->widths;
      m.train.steps = cfg.reference->steps;
    }
    j["model"] = model_json(m);
  } else {
    j["model"] = model_json(cfg.model);
  }
  if (artifact == "ssl" || artifact == "rotation") j["ssl"] = ssl_json(cfg.ssl);
  return j.dump();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << config_to_json(cfg);
}

}  // namespace cvpb
