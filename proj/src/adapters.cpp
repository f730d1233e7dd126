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

#include "cvpb/adapters.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cvpb/optim.hpp"
#include "cvpb/rng.hpp"

namespace cvpb {

std::string_view ssl_task_name(SslTask task) { return task == SslTask::kContrastive ? "contrastive" : "rotation"; }

SslTask parse_ssl_task(std::string_view name) {
  if (name == "contrastive") return SslTask::kContrastive;
  if (name == "rotation") return SslTask::kRotation;
  throw std::invalid_argument("unknown ssl task: " + std::string(name));
}

void AdaptConfig::validate() const {
  auto fail = [](const char* what) { throw std::invalid_argument(std::string("adapt config: ") + what); };
  if (iters < 0) fail("iters must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (n_views < 2) fail("n_views must be >= 2");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (!(lambda_range.lo <= lambda_range.hi)) fail("lambda_range must satisfy lo <= hi");
  if (!(epsilon >= 0.0f)) fail("epsilon must be >= 0");
  if (!(kernel_step >= 0.0f && lambda_step >= 0.0f && vp_step >= 0.0f && lvp_step >= 0.0f))
    fail("step sizes must be >= 0");
  if (padding_width < 0) fail("padding_width must be >= 0");
  if (rank < 0) fail("rank must be >= 0");
  if (weight_iters < 0) fail("weight_iters must be >= 0");
  if (!(weight_lr >= 0.0f)) fail("weight_lr must be >= 0");
  if (memo_copies < 2) fail("memo_copies must be >= 2");
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

constexpr std::uint64_t kViewKey = 0x56494557ULL;

// L_s on a fixed set of views, so losses across iterations are comparable.
class SslObjective {
 public:
  SslObjective(const SslModel& ssl, const AdaptConfig& cfg, const Shape& shape) : ssl_(ssl) {
    if (shape.size() != 4) throw ShapeError("ssl objective expects an NCHW batch, got " + to_string(shape));
    const int n = shape[0], h = shape[2], w = shape[3];
    if (ssl.task == SslTask::kContrastive) {
      if (!ssl.contrastive) throw std::invalid_argument("contrastive objective requires an SSL head");
      ViewPlan plan = sample_views(n, h, w, cfg.n_views, derive_seed({cfg.seed, kViewKey}), cfg.augment);
      indicator_ = plan.pair_indicator();
      resample_ = std::move(plan.resample);
    } else {
      if (!ssl.rotation) throw std::invalid_argument("rotation objective requires a rotation head");
      resample_ = quarter_turn_plan(n, h, w);
      labels_.resize(static_cast<std::size_t>(4 * n));
      for (int r = 0; r < 4; ++r)
        for (int i = 0; i < n; ++i) labels_[static_cast<std::size_t>(r * n + i)] = r;
    }
  }

  ad::Var views(ad::Var x) const { return ad::resample(x, resample_); }

  ad::Var loss(ad::Tape& tape, ad::Var features) const {
    if (ssl_.task == SslTask::kContrastive)
      return contrastive_loss(ssl_.contrastive->forward(tape, features), indicator_, ssl_.contrastive->tau);
    return ad::cross_entropy(ssl_.rotation->forward(tape, features), labels_);
  }

  ad::Var operator()(ad::Tape& tape, ad::Var x, const Backbone& b, ad::BnMode mode) const {
    return loss(tape, b.forward(tape, views(x), mode).features);
  }

 private:
  SslModel ssl_;
  Tensor indicator_;
  ad::ResamplePlan resample_;
  std::vector<int> labels_;
};

struct ModelView {
  const Backbone& backbone;
  ad::BnMode mode;
};

Tensor logits_of(const ModelView& m, const Tensor& x) {
  if (m.mode == ad::BnMode::kEval) return predict(m.backbone, x).logits;
  ad::Tape tape;
  return m.backbone.forward(tape, tape.constant(x), m.mode).logits.value();
}

Tensor clamp01(Tensor t) {
  for (float& v : t.data()) v = std::clamp(v, 0.0f, 1.0f);
  return t;
}

void finish(AdaptOutcome& out, const ModelView& m) {
  out.logits = logits_of(m, out.adapted);
  out.predictions = argmax_rows(out.logits);
}

// Algorithm shared by the three prompt families. loss^0 is L_s of the raw
// input; loss^t (t >= 1) is L_s under the prompt state used at step t. The
// state that produced loss^T is kept unless loss^T > loss^0 (or the loss is
// not finite), in which case the initial state is used.
template <class State>
struct PromptOps {
  std::function<ad::Var(ad::Tape&, ad::Var, const State&, std::vector<ad::Var>&)> build;
  std::function<void(State&, const std::vector<const Tensor*>&)> update;
  std::function<Tensor(const Tensor&, const State&)> render;
  std::function<std::string(const State&)> describe;
};

template <class State>
AdaptOutcome prompt_loop(const Tensor& x, const ModelView& m, const SslModel& ssl, const AdaptConfig& cfg,
                         State state, const PromptOps<State>& ops) {
  const auto t0 = Clock::now();
  const SslObjective objective(ssl, cfg, x.shape());
  AdaptOutcome out;
  {
    ad::Tape tape;
    out.loss_trace.push_back(objective(tape, tape.constant(x), m.backbone, m.mode).value()[0]);
  }
  const float loss0 = out.loss_trace.front();
  out.non_finite = !std::isfinite(loss0);
  const State initial = state;
  for (int t = 1; t <= cfg.iters && !out.non_finite; ++t) {
    ad::Tape tape;
    std::vector<ad::Var> params;
    const ad::Var xp = ops.build(tape, tape.constant(x), state, params);
    const ad::Var loss = objective(tape, xp, m.backbone, m.mode);
    const float value = loss.value()[0];
    out.loss_trace.push_back(value);
    if (!std::isfinite(value)) {
      out.non_finite = true;
      break;
    }
    if (t == cfg.iters) break;  // the state that produced loss^T is the candidate
    const auto grads = tape.backward(loss);
    std::vector<const Tensor*> g;
    for (const auto& p : params) g.push_back(&grads[p]);
    ops.update(state, g);
  }
  out.loss_trace.resize(static_cast<std::size_t>(cfg.iters) + 1, std::numeric_limits<float>::quiet_NaN());

  const State* chosen = &state;
  if (cfg.iters == 0) {
    out.final_loss = loss0;
  } else if (out.non_finite) {
    out.fallback = true;
    out.final_loss = loss0;
    chosen = &initial;
  } else if (cfg.fallback && out.loss_trace.back() > loss0) {
    out.fallback = true;
    out.final_loss = loss0;
    chosen = &initial;
  } else {
    out.final_loss = out.loss_trace.back();
  }
  out.adapted = clamp01(ops.render(x, *chosen));
  out.summary = ops.describe(*chosen);
  finish(out, m);
  out.wall_ms = ms_since(t0);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

AdaptOutcome cvp_in(const Tensor& x, const ModelView& m, const SslModel& ssl, const AdaptConfig& cfg,
                    CvpParams init) {
  PromptOps<CvpParams> ops;
  ops.build = [](ad::Tape& tape, ad::Var xv, const CvpParams& p, std::vector<ad::Var>& params) {
    params = {tape.parameter(p.kernel), tape.parameter(Tensor::scalar(p.lambda))};
    return apply_cvp(xv, params[0], params[1]);
  };
  ops.update = [&cfg](CvpParams& p, const std::vector<const Tensor*>& g) {
    sign_step(p.kernel, *g[0], cfg.kernel_step);
    Tensor lambda = Tensor::scalar(p.lambda);
    sign_step(lambda, *g[1], cfg.lambda_step);
    p.lambda = lambda[0];
    p.project();
  };
  ops.render = [](const Tensor& xv, const CvpParams& p) { return apply_cvp(xv, p); };
  ops.describe = [](const CvpParams& p) {
    double l1 = 0.0;
    for (float v : p.kernel.data()) l1 += std::abs(v);
    return "cvp k=" + std::to_string(p.k()) + " lambda=" + fmt(p.lambda) + " kernel_l1=" + fmt(l1);
  };
  return prompt_loop(x, m, ssl, cfg, std::move(init), ops);
}

AdaptOutcome vp_in(const Tensor& x, const ModelView& m, const SslModel& ssl, const AdaptConfig& cfg,
                   VpVariant variant) {
  require_nchw(x, "adapt_additive_vp");
  AdditiveVpParams init = init_additive_vp(variant, x.dim(1), x.dim(2), x.dim(3), cfg.padding_width, cfg.norm,
                                           cfg.epsilon, cfg.vp_step);
  PromptOps<AdditiveVpParams> ops;
  ops.build = [](ad::Tape& tape, ad::Var xv, const AdditiveVpParams& p, std::vector<ad::Var>& params) {
    params = {tape.parameter(p.v)};
    return apply_additive_vp(xv, params[0], p.mask);
  };
  ops.update = [](AdditiveVpParams& p, const std::vector<const Tensor*>& g) {
    sign_step(p.v, *g[0], p.step);
    p.project();
  };
  ops.render = [](const Tensor& xv, const AdditiveVpParams& p) { return apply_additive_vp(xv, p); };
  ops.describe = [variant](const AdditiveVpParams& p) {
    float linf = 0.0f;
    for (float v : p.v.data()) linf = std::max(linf, std::abs(v));
    return std::string(variant == VpVariant::kPatch ? "vp-patch" : "vp-padding") + " linf=" + fmt(linf);
  };
  return prompt_loop(x, m, ssl, cfg, std::move(init), ops);
}

AdaptOutcome lvp_in(const Tensor& x, const ModelView& m, const SslModel& ssl, const AdaptConfig& cfg) {
  PromptOps<LvpParams> ops;
  ops.build = [](ad::Tape& tape, ad::Var xv, const LvpParams& p, std::vector<ad::Var>& params) {
    if (p.rank == 0) return xv;  // empty prompt
    params = {tape.parameter(p.packed_u()), tape.parameter(p.packed_s()), tape.parameter(p.packed_vt())};
    return lvp_apply(xv, params[0], params[1], params[2]);
  };
  ops.update = [&cfg](LvpParams& p, const std::vector<const Tensor*>& g) {
    if (p.rank == 0) return;
    Tensor u = p.packed_u(), s = p.packed_s(), vt = p.packed_vt();
    sign_step(u, *g[0], cfg.lvp_step);
    sign_step(s, *g[1], cfg.lvp_step);
    sign_step(vt, *g[2], cfg.lvp_step);
    p.unpack(u, s, vt);
    p.project();
  };
  ops.render = [](const Tensor& xv, const LvpParams& p) { return lvp_apply(xv, p); };
  ops.describe = [](const LvpParams& p) {
    const Tensor d = p.delta();
    double n2 = 0.0;
    for (float v : d.data()) n2 += double(v) * v;
    return "lvp rank=" + std::to_string(p.rank) + " delta_l2=" + fmt(std::sqrt(n2));
  };
  return prompt_loop(x, m, ssl, cfg, lvp_init(x, cfg.rank), ops);
}

void require_frozen(const Backbone& b) {
  if (!b.frozen()) throw std::logic_error("prompt adaptation requires a frozen backbone");
}

// ---------------------------------------------------------------------------
// Episodes.

class Episode {
 public:
  explicit Episode(Backbone& b) : b_(b), snapshot_(b.params()), was_frozen_(b.frozen()) { b_.unfreeze(); }
  Episode(const Episode&) = delete;
  Episode& operator=(const Episode&) = delete;
  ~Episode() {
    if (closed_) return;
    try {
      b_.params().assign_from(snapshot_);
    } catch (...) {
    }
    if (was_frozen_) b_.freeze();
  }

  std::vector<std::string> changed() const {
    std::vector<std::string> names;
    const auto& live = b_.params().entries();
    const auto& snap = snapshot_.entries();
    for (std::size_t i = 0; i < live.size() && i < snap.size(); ++i)
      if (!live[i].value.bit_equal(snap[i].value)) names.push_back(live[i].name);
    return names;
  }

  void close() {
    restore_snapshot(b_.params(), snapshot_);
    if (was_frozen_) b_.freeze();
    else b_.unfreeze();
    closed_ = true;
  }

 private:
  Backbone& b_;
  ParameterSet snapshot_;
  bool was_frozen_;
  bool closed_ = false;
};

using WeightObjective = std::function<ad::Var(ad::Tape&, Backbone&, TrainScope, VarMap*)>;

// T momentum-SGD steps over `scope`; the trace holds the objective before
// each step and after the last one.
std::vector<float> weight_descent(Backbone& b, TrainScope scope, const AdaptConfig& cfg,
                                  const WeightObjective& objective) {
  SgdMomentum opt({cfg.weight_lr, cfg.weight_momentum, 0.0f});
  std::vector<float> trace;
  for (int t = 0; t <= cfg.weight_iters; ++t) {
    ad::Tape tape;
    VarMap bound;
    const ad::Var loss = objective(tape, b, scope, &bound);
    ad::check_finite(loss.value(), "weight adaptation loss");
    trace.push_back(loss.value()[0]);
    if (t == cfg.weight_iters) break;
    const auto grads = tape.backward(loss);
    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    for (auto& e : b.params().entries()) {
      if (!e.trainable || !in_scope(scope, e.name)) continue;
      ps.push_back(&e.value);
      gs.push_back(&grads[bound.at(e.name)]);
    }
    opt.step(ps, gs);
  }
  return trace;
}

WeightObjective ssl_weight_objective(const SslObjective& objective, const Tensor& x) {
  return [&objective, &x](ad::Tape& tape, Backbone& b, TrainScope scope, VarMap* bound) {
    const auto out = b.forward(tape, objective.views(tape.constant(x)), ad::BnMode::kEval, scope, bound);
    return objective.loss(tape, out.features);
  };
}

WeightObjective entropy_objective(const Tensor& x) {
  return [&x](ad::Tape& tape, Backbone& b, TrainScope scope, VarMap* bound) {
    return entropy(b.forward(tape, tape.constant(x), ad::BnMode::kBatchStats, scope, bound).logits);
  };
}

void require_batch(const Tensor& x, const char* what) {
  require_nchw(x, what);
  if (x.dim(0) < 2) throw std::invalid_argument(std::string(what) + " requires a batch of at least 2 images");
}

struct MemoResult {
  Tensor logits;  // [1, classes]
  std::vector<float> trace;
};

MemoResult memo_impl(const Tensor& image, Backbone& b, const AdaptConfig& cfg, std::uint64_t seed) {
  require_nchw(image, "memo_single");
  if (image.dim(0) != 1) throw ShapeError("memo_single expects one image, got " + to_string(image.shape()));
  const ViewPlan plan = sample_views(1, image.dim(2), image.dim(3), cfg.memo_copies, seed, cfg.augment);
  Tensor copies;
  {
    ad::Tape tape;
    copies = ad::resample(tape.constant(image), plan.resample).value();
  }
  Episode ep(b);
  MemoResult r;
  r.trace = weight_descent(b, TrainScope::kAll, cfg, [&copies](ad::Tape& tape, Backbone& bb, TrainScope s, VarMap* m) {
    return marginal_entropy(bb.forward(tape, tape.constant(copies), ad::BnMode::kEval, s, m).logits);
  });
  r.logits = predict(b, image).logits;
  ep.close();
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

AdaptOutcome adapt_cvp(const Tensor& x, const Backbone& backbone, const SslModel& ssl, const AdaptConfig& cfg,
                       std::optional<CvpParams> init) {
  cfg.validate();
  require_frozen(backbone);
  CvpParams p = init ? std::move(*init)
                     : init_cvp(cfg.init, cfg.kernel_size, cfg.lambda_range, derive_seed({cfg.seed, 0x4b45524eULL}));
  return cvp_in(x, {backbone, ad::BnMode::kEval}, ssl, cfg, std::move(p));
}

AdaptOutcome adapt_additive_vp(const Tensor& x, const Backbone& backbone, const SslModel& ssl, const AdaptConfig& cfg,
                               VpVariant variant) {
  cfg.validate();
  require_frozen(backbone);
  return vp_in(x, {backbone, ad::BnMode::kEval}, ssl, cfg, variant);
}

AdaptOutcome adapt_lvp(const Tensor& x, const Backbone& backbone, const SslModel& ssl, const AdaptConfig& cfg) {
  cfg.validate();
  require_frozen(backbone);
  return lvp_in(x, {backbone, ad::BnMode::kEval}, ssl, cfg);
}

void restore_snapshot(ParameterSet& live, const ParameterSet& snapshot) {
  try {
    live.assign_from(snapshot);
  } catch (const ShapeError& e) {
    throw IntegrityError(std::string("weight restoration failed: ") + e.what());
  }
  if (!live.bit_equal(snapshot)) throw IntegrityError("weight restoration failed: parameters differ from snapshot");
}

AdaptOutcome adapt_weights(const Tensor& x, Backbone& backbone, const SslModel& ssl, const AdaptConfig& cfg,
                           TrainScope scope) {
  cfg.validate();
  if (scope == TrainScope::kNone) throw std::invalid_argument("adapt_weights needs a non-empty scope");
  const auto t0 = Clock::now();
  const SslObjective objective(ssl, cfg, x.shape());
  AdaptOutcome out;
  Episode ep(backbone);
  out.loss_trace = weight_descent(backbone, scope, cfg, ssl_weight_objective(objective, x));
  out.adapted = x;
  finish(out, {backbone, ad::BnMode::kEval});
  out.changed = ep.changed();
  ep.close();
  out.final_loss = out.loss_trace.back();
  out.summary = std::string(scope == TrainScope::kAll ? "ft" : "pft") + " steps=" + std::to_string(cfg.weight_iters);
  out.wall_ms = ms_since(t0);
  return out;
}

Prediction bn_statistics_adapt(const Tensor& x, const Backbone& backbone) {
  require_batch(x, "bn_statistics_adapt");
  Prediction p;
  p.logits = logits_of({backbone, ad::BnMode::kBatchStats}, x);
  p.labels = argmax_rows(p.logits);
  return p;
}

AdaptOutcome tent_episodic(const Tensor& x, Backbone& backbone, const AdaptConfig& cfg) {
  cfg.validate();
  require_batch(x, "tent_episodic");
  const auto t0 = Clock::now();
  AdaptOutcome out;
  Episode ep(backbone);
  out.loss_trace = weight_descent(backbone, TrainScope::kBnAffine, cfg, entropy_objective(x));
  out.adapted = x;
  finish(out, {backbone, ad::BnMode::kBatchStats});
  out.changed = ep.changed();
  ep.close();
  out.final_loss = out.loss_trace.back();
  out.summary = "tent steps=" + std::to_string(cfg.weight_iters);
  out.wall_ms = ms_since(t0);
  return out;
}

int memo_single(const Tensor& image, Backbone& backbone, const AdaptConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return argmax_rows(memo_impl(image, backbone, cfg, seed).logits).front();
}

AdaptOutcome memo_batch(const Tensor& x, Backbone& backbone, const AdaptConfig& cfg) {
  cfg.validate();
  require_nchw(x, "memo_batch");
  const auto t0 = Clock::now();
  AdaptOutcome out;
  const int n = x.dim(0);
  out.loss_trace.assign(static_cast<std::size_t>(cfg.weight_iters) + 1, 0.0f);
  std::vector<Tensor> rows;
  const std::size_t per = x.numel() / static_cast<std::size_t>(std::max(n, 1));
  for (int i = 0; i < n; ++i) {
    Tensor image({1, x.dim(1), x.dim(2), x.dim(3)});
    std::copy_n(x.ptr() + static_cast<std::size_t>(i) * per, per, image.ptr());
    MemoResult r =
        memo_impl(image, backbone, cfg, derive_seed({cfg.seed, 0x4d454d4fULL, static_cast<std::uint64_t>(i)}));
    for (std::size_t t = 0; t < r.trace.size(); ++t) out.loss_trace[t] += r.trace[t] / float(n);
    rows.push_back(std::move(r.logits));
  }
  const int classes = rows.empty() ? 0 : rows.front().dim(1);
  out.logits = Tensor({n, classes});
  for (int i = 0; i < n; ++i)
    std::copy_n(rows[static_cast<std::size_t>(i)].ptr(), classes, out.logits.ptr() + static_cast<std::size_t>(i) * classes);
  out.predictions = argmax_rows(out.logits);
  out.adapted = x;
  out.final_loss = out.loss_trace.back();
  out.summary = "memo copies=" + std::to_string(cfg.memo_copies) + " steps=" + std::to_string(cfg.weight_iters);
  out.wall_ms = ms_since(t0);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::pair<WeightMethod, std::string_view> kWeightNames[] = {
    {WeightMethod::kBn, "bn"}, {WeightMethod::kTent, "tent"}, {WeightMethod::kFt, "ft"},
    {WeightMethod::kPft, "pft"}, {WeightMethod::kMemo, "memo"}};
constexpr std::pair<PromptMethod, std::string_view> kPromptNames[] = {{PromptMethod::kCvp, "cvp"},
                                                                      {PromptMethod::kVpPatch, "vp-patch"},
                                                                      {PromptMethod::kVpPadding, "vp-padding"},
                                                                      {PromptMethod::kLvp, "lvp"}};

template <class E, std::size_t N>
std::string_view lookup(const std::pair<E, std::string_view> (&table)[N], E e) {
  for (const auto& [k, v] : table)
    if (k == e) return v;
  return {};
}

template <class E, std::size_t N>
std::optional<E> lookup(const std::pair<E, std::string_view> (&table)[N], std::string_view s) {
  for (const auto& [k, v] : table)
    if (v == s) return k;
  return std::nullopt;
}

}  // namespace

std::string Method::name() const {
  if (weight == WeightMethod::kNone && prompt == PromptMethod::kNone) return "standard";
  if (prompt == PromptMethod::kNone) return std::string(lookup(kWeightNames, weight));
  if (weight == WeightMethod::kNone) return std::string(lookup(kPromptNames, prompt));
  return std::string(lookup(kWeightNames, weight)) + "+" + std::string(lookup(kPromptNames, prompt));
}

Method parse_method(std::string_view name) {
  if (name == "standard") return {};
  const auto bad = [&] { return std::invalid_argument("unknown method: " + std::string(name)); };
  const auto plus = name.find('+');
  if (plus == std::string_view::npos) {
    if (auto w = lookup(kWeightNames, name)) return {*w, PromptMethod::kNone};
    if (auto p = lookup(kPromptNames, name)) return {WeightMethod::kNone, *p};
    throw bad();
  }
  const auto w = lookup(kWeightNames, name.substr(0, plus));
  const auto p = lookup(kPromptNames, name.substr(plus + 1));
  if (!w || !p) throw bad();
  if (*w == WeightMethod::kMemo) throw std::invalid_argument("memo adapts single images and does not compose");
  return {*w, *p};
}

namespace {

AdaptOutcome prompt_phase(PromptMethod prompt, const Tensor& x, const ModelView& m, const SslModel& ssl,
                          const AdaptConfig& cfg) {
  switch (prompt) {
    case PromptMethod::kCvp:
      return cvp_in(x, m, ssl, cfg,
                    init_cvp(cfg.init, cfg.kernel_size, cfg.lambda_range, derive_seed({cfg.seed, 0x4b45524eULL})));
    case PromptMethod::kVpPatch: return vp_in(x, m, ssl, cfg, VpVariant::kPatch);
    case PromptMethod::kVpPadding: return vp_in(x, m, ssl, cfg, VpVariant::kPadding);
    case PromptMethod::kLvp: return lvp_in(x, m, ssl, cfg);
    case PromptMethod::kNone: break;
  }
  throw std::logic_error("no prompt method");
}

}  // namespace

AdaptOutcome run_method(const Method& method, const Tensor& x, Backbone& workspace, const SslModel& ssl,
                        const AdaptConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  if (method.weight == WeightMethod::kMemo) {
    if (method.prompt != PromptMethod::kNone) throw std::invalid_argument("memo does not compose");
    return memo_batch(x, workspace, cfg);
  }
  if (method.weight == WeightMethod::kNone && method.prompt == PromptMethod::kNone) {
    AdaptOutcome out;
    out.adapted = x;
    finish(out, {workspace, ad::BnMode::kEval});
    out.summary = "frozen";
    out.wall_ms = 0.0;
    return out;
  }

  const bool batch_stats = method.weight == WeightMethod::kBn || method.weight == WeightMethod::kTent;
  if (batch_stats) require_batch(x, "batch-statistics adaptation");
  const ModelView view{workspace, batch_stats ? ad::BnMode::kBatchStats : ad::BnMode::kEval};

  Episode ep(workspace);
  std::vector<float> weight_trace;
  std::string weight_summary;
  switch (method.weight) {
    case WeightMethod::kTent:
      weight_trace = weight_descent(workspace, TrainScope::kBnAffine, cfg, entropy_objective(x));
      weight_summary = "tent steps=" + std::to_string(cfg.weight_iters);
      break;
    case WeightMethod::kFt:
    case WeightMethod::kPft: {
      const SslObjective objective(ssl, cfg, x.shape());
      const TrainScope scope = method.weight == WeightMethod::kFt ? TrainScope::kAll : TrainScope::kBnAffine;
      weight_trace = weight_descent(workspace, scope, cfg, ssl_weight_objective(objective, x));
      weight_summary = std::string(lookup(kWeightNames, method.weight)) + " steps=" + std::to_string(cfg.weight_iters);
      break;
    }
    case WeightMethod::kBn: weight_summary = "bn batch statistics"; break;
    case WeightMethod::kNone: break;
    case WeightMethod::kMemo: break;
  }

  AdaptOutcome out;
  if (method.prompt == PromptMethod::kNone) {
    out.adapted = x;
    out.loss_trace = weight_trace;
    out.final_loss = weight_trace.empty() ? 0.0f : weight_trace.back();
    out.summary = weight_summary;
    finish(out, view);
  } else {
    workspace.freeze();
    out = prompt_phase(method.prompt, x, view, ssl, cfg);
    if (!weight_summary.empty()) out.summary = weight_summary + "; " + out.summary;
  }
  out.changed = ep.changed();
  ep.close();
  out.wall_ms = ms_since(t0);
  return out;
}

}  // namespace cvpb
