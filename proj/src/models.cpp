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

#include "cvpb/models.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "cvpb/optim.hpp"
#include "cvpb/rng.hpp"

namespace cvpb {
namespace {

std::string block_name(int b, const char* leaf) { return "block" + std::to_string(b) + "." + leaf; }

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> g(0.0f, std::sqrt(2.0f / float(fan_in)));
  for (float& v : t.data()) v = g(rng);
  return t;
}

Tensor uniform_fan_in(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const float bound = 1.0f / std::sqrt(float(fan_in));
  std::uniform_real_distribution<float> u(-bound, bound);
  for (float& v : t.data()) v = u(rng);
  return t;
}

void add_linear(ParameterSet& set, const std::string& prefix, int in, int out, Rng& rng) {
  set.add(prefix + ".weight", uniform_fan_in({out, in}, in, rng));
  set.add(prefix + ".bias", uniform_fan_in({out}, in, rng));
}

NamePredicate all_if(bool trainable) {
  return [trainable](const std::string&) { return trainable; };
}

// Trainable tensors of `set` paired with their gradients.
struct Update {
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
};

Update collect(ParameterSet& set, const VarMap& bound, const ad::Gradients& grads) {
  Update u;
  for (auto& e : set.entries()) {
    const auto it = bound.find(e.name);
    if (it == bound.end() || !it->second.requires_grad()) continue;
    u.params.push_back(&e.value);
    u.grads.push_back(&grads[it->second]);
  }
  return u;
}

void check_loss(float loss, const char* where, int step) {
  if (!std::isfinite(loss))
    throw NumericError(std::string(where) + ": loss diverged (" + std::to_string(loss) + ") at step " +
                       std::to_string(step));
}

// Random horizontal flips and integer shifts of up to 2 pixels with border replication.
Tensor jitter(const Tensor& x, Rng& rng) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(x.shape());
  std::uniform_int_distribution<int> shift(-2, 2);
  std::bernoulli_distribution flip(0.5);
  for (int i = 0; i < n; ++i) {
    const int dy = shift(rng), dx = shift(rng);
    const bool f = flip(rng);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const int sx0 = f ? w - 1 - xx : xx;
          out.at(i, ch, y, xx) = x.at(i, ch, std::clamp(y + dy, 0, h - 1), std::clamp(sx0 + dx, 0, w - 1));
        }
  }
  return out;
}

// Shuffled index stream that reshuffles after every full pass.
class Sampler {
 public:
  Sampler(int n, std::uint64_t seed) : order_(static_cast<std::size_t>(n)), rng_(keyed_rng({seed, 0x53414d50ULL})) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::vector<int> next(int count) {
    std::vector<int> out;
    while (static_cast<int>(out.size()) < count) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<int> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

Tensor gather_images(const Tensor& images, const std::vector<int>& idx) {
  const std::size_t per = images.numel() / static_cast<std::size_t>(images.dim(0));
  Tensor out({static_cast<int>(idx.size()), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(images.ptr() + static_cast<std::size_t>(idx[k]) * per, per, out.ptr() + k * per);
  return out;
}

}  // namespace

bool in_scope(TrainScope scope, const std::string& name) {
  switch (scope) {
    case TrainScope::kAll: return true;
    case TrainScope::kBnAffine:
      return name.ends_with(".bn.gamma") || name.ends_with(".bn.beta");
    case TrainScope::kNone: return false;
  }
  return false;
}

Backbone::Backbone(const BackboneSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.image_size % 4 != 0) throw std::invalid_argument("image_size must be a multiple of 4");
  if (spec.num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  Rng rng = keyed_rng({seed, 0x4241434bULL});
  int in = spec.in_channels;
  for (int b = 0; b < 4; ++b) {
    const int out = spec.widths[static_cast<std::size_t>(b)];
    params_.add(block_name(b, "conv.weight"), he_normal({out, in, 3, 3}, in * 9, rng));
    params_.add(block_name(b, "bn.gamma"), Tensor({out}, 1.0f));
    params_.add(block_name(b, "bn.beta"), Tensor({out}, 0.0f));
    params_.add(block_name(b, "bn.running_mean"), Tensor({out}, 0.0f), false);
    params_.add(block_name(b, "bn.running_var"), Tensor({out}, 1.0f), false);
    in = out;
  }
  add_linear(params_, "fc", feature_dim(), spec.num_classes, rng);
}

int Backbone::feature_dim() const {
  const int s = spec_.image_size / 4;
  return spec_.widths[3] * s * s;
}

Backbone::Outputs Backbone::forward(ad::Tape& tape, ad::Var x, ad::BnMode mode, TrainScope scope, VarMap* bound) {
  if (scope != TrainScope::kNone && frozen_) throw std::logic_error("backbone is frozen");
  return run(tape, x, mode, scope, bound, mode == ad::BnMode::kTrain ? &params_ : nullptr);
}

Backbone::Outputs Backbone::forward(ad::Tape& tape, ad::Var x, ad::BnMode mode) const {
  if (mode == ad::BnMode::kTrain) throw std::logic_error("read-only forward cannot update running statistics");
  return run(tape, x, mode, TrainScope::kNone, nullptr, nullptr);
}

Backbone::Outputs Backbone::run(ad::Tape& tape, ad::Var x, ad::BnMode mode, TrainScope scope, VarMap* bound,
                                ParameterSet* stats) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != spec_.in_channels || s[2] != spec_.image_size || s[3] != spec_.image_size)
    throw ShapeError("backbone expects [N," + std::to_string(spec_.in_channels) + "," +
                     std::to_string(spec_.image_size) + "," + std::to_string(spec_.image_size) + "], got " +
                     to_string(s));
  VarMap vars = bind_params(tape, params_, [scope](const std::string& n) { return in_scope(scope, n); });
  ad::Var h = x;
  for (int b = 0; b < 4; ++b) {
    h = ad::conv2d(h, vars.at(block_name(b, "conv.weight")), ad::Padding::kZero);
    Tensor local_mean, local_var;
    Tensor* rm = &local_mean;
    Tensor* rv = &local_var;
    if (stats) {
      rm = &stats->get(block_name(b, "bn.running_mean"));
      rv = &stats->get(block_name(b, "bn.running_var"));
    } else {
      local_mean = params_.get(block_name(b, "bn.running_mean"));
      local_var = params_.get(block_name(b, "bn.running_var"));
    }
    h = ad::batchnorm2d(h, vars.at(block_name(b, "bn.gamma")), vars.at(block_name(b, "bn.beta")), *rm, *rv, mode);
    h = ad::relu(h);
    if (b == 1 || b == 3) h = ad::maxpool2x2(h);
  }
  const int n = h.shape()[0];
  Outputs out;
  out.features = ad::reshape(h, {n, feature_dim()});
  out.logits = ad::linear(out.features, vars.at("fc.weight"), vars.at("fc.bias"));
  if (bound) *bound = std::move(vars);
  return out;
}

SslHead::SslHead(int feature_dim, std::uint64_t seed, int hidden, int out) {
  Rng rng = keyed_rng({seed, 0x53534c48ULL});
  add_linear(params, "fc1", feature_dim, hidden, rng);
  add_linear(params, "fc2", hidden, out, rng);
}

ad::Var SslHead::forward(ad::Tape& tape, ad::Var features, VarMap* bound, bool trainable) const {
  VarMap vars = bind_params(tape, params, all_if(trainable));
  ad::Var h = ad::relu(ad::linear(features, vars.at("fc1.weight"), vars.at("fc1.bias")));
  ad::Var z = ad::l2_normalize(ad::linear(h, vars.at("fc2.weight"), vars.at("fc2.bias")));
  if (bound) *bound = std::move(vars);
  return z;
}

RotationHead::RotationHead(int feature_dim, std::uint64_t seed) {
  Rng rng = keyed_rng({seed, 0x524f5448ULL});
  add_linear(params, "fc", feature_dim, 4, rng);
}

ad::Var RotationHead::forward(ad::Tape& tape, ad::Var features, VarMap* bound, bool trainable) const {
  VarMap vars = bind_params(tape, params, all_if(trainable));
  ad::Var logits = ad::linear(features, vars.at("fc.weight"), vars.at("fc.bias"));
  if (bound) *bound = std::move(vars);
  return logits;
}

ad::Var contrastive_loss(ad::Var embeddings, const Tensor& pair_indicator, float tau) {
  const Shape& s = embeddings.shape();
  if (s.size() != 2) throw ShapeError("contrastive_loss: embeddings must be [M, D]");
  const int m = s[0];
  if (pair_indicator.shape() != Shape{m, m})
    throw ShapeError("contrastive_loss: indicator must be " + std::to_string(m) + "x" + std::to_string(m));
  if (!(tau > 0.0f)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  double pairs = 0.0;
  int empty_rows = 0;
  for (int i = 0; i < m; ++i) {
    double row = 0.0;
    for (int j = 0; j < m; ++j) row += pair_indicator[static_cast<std::size_t>(i) * m + j];
    pairs += row;
    empty_rows += row == 0.0;
  }
  if (empty_rows > 0) std::clog << "contrastive_loss: " << empty_rows << " anchor(s) without positives\n";
  ad::Tape& tape = embeddings.tape();
  if (pairs == 0.0) return tape.constant(Tensor::scalar(0.0f));
  ad::Var z = ad::l2_normalize(embeddings);
  ad::Var sim = ad::scale(ad::matmul(z, ad::transpose(z)), 1.0f / tau);
  ad::Var lp = ad::log_softmax(sim, /*exclude_diagonal=*/true);
  return ad::scale(ad::weighted_sum(lp, pair_indicator), static_cast<float>(-1.0 / pairs));
}

ad::Var contrastive_objective(ad::Tape& tape, ad::Var x, const Backbone& backbone, const SslHead& head,
                              const ViewPlan& plan, ad::BnMode mode) {
  ad::Var views = ad::resample(x, plan.resample);
  const auto out = backbone.forward(tape, views, mode);
  return contrastive_loss(head.forward(tape, out.features), plan.pair_indicator(), head.tau);
}

namespace {

std::vector<int> rotation_labels(int n) {
  std::vector<int> labels(static_cast<std::size_t>(4 * n));
  for (int r = 0; r < 4; ++r)
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(r * n + i)] = r;
  return labels;
}

}  // namespace

ad::Var rotation_loss(ad::Tape& tape, ad::Var x, const Backbone& backbone, const RotationHead& head,
                      ad::BnMode mode) {
  const Shape& s = x.shape();
  const int n = s.at(0);
  ad::Var views = ad::resample(x, quarter_turn_plan(n, s.at(2), s.at(3)));
  const auto out = backbone.forward(tape, views, mode);
  const auto labels = rotation_labels(n);
  return ad::cross_entropy(head.forward(tape, out.features), labels);
}

ad::Var entropy(ad::Var logits) {
  const int n = logits.shape().at(0);
  ad::Var plogp = ad::mul(ad::softmax(logits), ad::log_softmax(logits));
  return ad::scale(ad::sum(plogp), -1.0f / float(n));
}

double entropy(const Tensor& logits) {
  ad::Tape tape;
  return entropy(tape.constant(logits)).value()[0];
}

ad::Var marginal_entropy(ad::Var logits) {
  ad::Var p = ad::column_mean(ad::softmax(logits));
  return ad::scale(ad::sum(ad::mul(p, ad::log(p))), -1.0f);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const float* row = logits.ptr() + static_cast<std::size_t>(i) * c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return double(hit) / double(labels.size());
}

Prediction predict(const Backbone& backbone, const Tensor& x, int chunk) {
  require_nchw(x, "predict");
  const int n = x.dim(0);
  std::vector<Tensor> parts;
  for (int b = 0; b < n; b += chunk) {
    ad::Tape tape;
    const auto out = backbone.forward(tape, tape.constant(x.slice_batch(b, std::min(n, b + chunk))), ad::BnMode::kEval);
    parts.push_back(out.logits.value());
  }
  Prediction p;
  if (parts.empty()) {
    p.logits = Tensor({0, backbone.spec().num_classes});
    return p;
  }
  p.logits = parts.size() == 1 ? std::move(parts.front()) : concat_batch(parts);
  p.labels = argmax_rows(p.logits);
  return p;
}

TrainReport train_backbone(Backbone& backbone, const Dataset& data, const TrainHyper& hyper) {
  if (backbone.frozen()) throw std::logic_error("train_backbone: backbone is frozen");
  if (data.num_classes < 2) throw std::invalid_argument("train_backbone: need at least 2 classes");
  if (data.size() < 1000) throw std::invalid_argument("train_backbone: need at least 1000 labeled images");
  if (hyper.batch_size < 2) throw std::invalid_argument("train_backbone: batch_size must be >= 2");
  TrainReport report;
  SgdMomentum opt({hyper.lr, hyper.momentum, hyper.weight_decay});
  Sampler sampler(data.size(), hyper.seed);
  Rng aug_rng = keyed_rng({hyper.seed, 0x4a495454ULL});
  const int last_pass = std::min(hyper.steps, (data.size() + hyper.batch_size - 1) / hyper.batch_size);
  std::size_t hit = 0, seen = 0;
  for (int step = 0; step < hyper.steps; ++step) {
    if (hyper.cosine) opt.set_lr(cosine_lr(hyper.lr, step, hyper.steps));
    const auto idx = sampler.next(hyper.batch_size);
    const Dataset batch = data.gather(idx);
    const Tensor x = hyper.augment ? jitter(batch.images, aug_rng) : batch.images;
    ad::Tape tape;
    VarMap bound;
    const auto out = backbone.forward(tape, tape.constant(x), ad::BnMode::kTrain, TrainScope::kAll, &bound);
    ad::Var loss = ad::cross_entropy(out.logits, batch.labels);
    check_loss(loss.value()[0], "train_backbone", step);
    report.loss_trace.push_back(loss.value()[0]);
    if (step >= hyper.steps - last_pass) {
      const auto pred = argmax_rows(out.logits.value());
      for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == batch.labels[i];
      seen += pred.size();
    }
    const auto grads = tape.backward(loss);
    const Update u = collect(backbone.params(), bound, grads);
    opt.step(u.params, u.grads);
  }
  report.train_accuracy = seen ? double(hit) / double(seen) : 0.0;
  return report;
}

namespace {

template <typename Head, typename LossFn>
TrainReport train_head(const Backbone& backbone, Head& head, const Tensor& images, const SslHyper& hyper,
                       const char* where, LossFn&& loss_fn) {
  if (!backbone.frozen()) throw std::logic_error(std::string(where) + ": backbone must be frozen");
  require_nchw(images, where);
  if (images.dim(0) < 2) throw std::invalid_argument(std::string(where) + ": need at least 2 images");
  TrainReport report;
  SgdMomentum opt({hyper.lr, hyper.momentum, 0.0f});
  Sampler sampler(images.dim(0), hyper.seed);
  const int bs = std::min(hyper.batch_size, images.dim(0));
  for (int step = 0; step < hyper.steps; ++step) {
    opt.set_lr(cosine_lr(hyper.lr, step, hyper.steps));
    const Tensor x = gather_images(images, sampler.next(bs));
    ad::Tape tape;
    VarMap bound;
    ad::Var loss = loss_fn(tape, x, step, bound);
    check_loss(loss.value()[0], where, step);
    report.loss_trace.push_back(loss.value()[0]);
    const auto grads = tape.backward(loss);
    const Update u = collect(head.params, bound, grads);
    opt.step(u.params, u.grads);
  }
  return report;
}

}  // namespace

TrainReport train_ssl_head(const Backbone& backbone, SslHead& head, const Tensor& images, const SslHyper& hyper) {
  return train_head(backbone, head, images, hyper, "train_ssl_head",
                    [&](ad::Tape& tape, const Tensor& x, int step, VarMap& bound) {
                      const ViewPlan plan = sample_views(x.dim(0), x.dim(2), x.dim(3), hyper.n_views,
                                                         derive_seed({hyper.seed, static_cast<std::uint64_t>(step)}),
                                                         hyper.augment);
                      ad::Var views = ad::resample(tape.constant(x), plan.resample);
                      const auto out = backbone.forward(tape, views, ad::BnMode::kEval);
                      return contrastive_loss(head.forward(tape, out.features, &bound, true), plan.pair_indicator(),
                                              head.tau);
                    });
}

TrainReport train_rotation_head(const Backbone& backbone, RotationHead& head, const Tensor& images,
                                const SslHyper& hyper) {
  return train_head(backbone, head, images, hyper, "train_rotation_head",
                    [&](ad::Tape& tape, const Tensor& x, int, VarMap& bound) {
                      const int n = x.dim(0);
                      ad::Var views = ad::resample(tape.constant(x), quarter_turn_plan(n, x.dim(2), x.dim(3)));
                      const auto out = backbone.forward(tape, views, ad::BnMode::kEval);
                      return ad::cross_entropy(head.forward(tape, out.features, &bound, true), rotation_labels(n));
                    });
}

}  // namespace cvpb
