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

#include "cvpb/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cvpb/ops.hpp"
#include "cvpb/rng.hpp"

namespace cvpb {

std::string_view kernel_init_name(KernelInit init) { return init == KernelInit::kFixed ? "fixed" : "random"; }

KernelInit parse_kernel_init(std::string_view name) {
  if (name == "fixed") return KernelInit::kFixed;
  if (name == "random") return KernelInit::kRandom;
  throw std::invalid_argument("unknown kernel init: " + std::string(name));
}

void CvpParams::project() { lambda = std::clamp(lambda, range.lo, range.hi); }

Tensor sharpness_kernel(int k) {
  if (k != 3 && k != 5) throw std::invalid_argument("sharpness kernel defined for k = 3 or 5");
  Tensor t({k, k});
  const int c = k / 2;
  auto at = [&](int y, int x) -> float& { return t[static_cast<std::size_t>(y) * k + x]; };
  at(c, c) = 5.0f;
  at(c - 1, c) = at(c + 1, c) = at(c, c - 1) = at(c, c + 1) = -1.0f;
  return t;
}

CvpParams init_cvp(KernelInit init, int k, LambdaRange range, std::uint64_t seed) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("kernel size must be odd, got " + std::to_string(k));
  if (!(range.lo <= range.hi)) throw std::invalid_argument("lambda range must satisfy lo <= hi");
  CvpParams p;
  p.range = range;
  p.lambda = 0.5f * (range.lo + range.hi);
  if (init == KernelInit::kFixed) {
    p.kernel = sharpness_kernel(k);
  } else {
    p.kernel = Tensor({k, k});
    Rng rng = keyed_rng({seed, 0x4356504bULL, static_cast<std::uint64_t>(k)});
    const float b = 1.0f / float(k * k);
    std::uniform_real_distribution<float> u(-b, b);
    for (float& v : p.kernel.data()) v = u(rng);
  }
  return p;
}

ad::Var apply_cvp(ad::Var x, ad::Var kernel, ad::Var lambda) {
  return ad::add(x, ad::scale_by(ad::depthwise_conv2d(x, kernel, ad::Padding::kReplicate), lambda));
}

Tensor apply_cvp(const Tensor& x, const CvpParams& p) {
  ad::Tape tape;
  return apply_cvp(tape.constant(x), tape.constant(p.kernel), tape.constant(Tensor::scalar(p.lambda))).value();
}

std::size_t AdditiveVpParams::trainable_count() const {
  std::size_t n = 0;
  for (float m : mask.data()) n += m != 0.0f;
  return n;
}

void AdditiveVpParams::project() {
  for (std::size_t i = 0; i < v.numel(); ++i)
    if (mask[i] == 0.0f) v[i] = 0.0f;
  if (std::isinf(epsilon)) return;
  if (norm == NormKind::kLinf) {
    for (float& x : v.data()) x = std::clamp(x, -epsilon, epsilon);
  } else {
    double n2 = 0.0;
    for (float x : v.data()) n2 += double(x) * x;
    const double n = std::sqrt(n2);
    if (n > epsilon) {
      const float s = static_cast<float>(epsilon / n);
      for (float& x : v.data()) x *= s;
    }
  }
}

Tensor padding_mask(int channels, int height, int width, int frame) {
  if (frame < 0) throw std::invalid_argument("frame width must be nonnegative");
  Tensor m({channels, height, width});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const bool edge = y < frame || x < frame || y >= height - frame || x >= width - frame;
        m[(static_cast<std::size_t>(c) * height + y) * width + x] = edge ? 1.0f : 0.0f;
      }
  return m;
}

AdditiveVpParams init_additive_vp(VpVariant variant, int channels, int height, int width, int frame, NormKind norm,
                                  float epsilon, float step) {
  if (!(epsilon >= 0.0f)) throw std::invalid_argument("epsilon must be nonnegative");
  AdditiveVpParams p;
  p.v = Tensor({channels, height, width});
  p.mask = variant == VpVariant::kPatch ? Tensor({channels, height, width}, 1.0f)
                                        : padding_mask(channels, height, width, frame);
  p.norm = norm;
  p.epsilon = epsilon;
  p.step = step;
  return p;
}

ad::Var apply_additive_vp(ad::Var x, ad::Var v, const Tensor& mask) {
  const Tensor& xv = x.value();
  require_nchw(xv, "apply_additive_vp");
  const Shape chw{xv.dim(1), xv.dim(2), xv.dim(3)};
  if (v.shape() != chw || mask.shape() != chw)
    throw ShapeError("apply_additive_vp: prompt and mask must be " + to_string(chw));
  const std::size_t per = mask.numel();
  const int n = xv.dim(0);
  Tensor out = xv;
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] += mask[j] * v.value()[j];
  return x.tape().record(std::move(out), {x, v}, [mask, n, per](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0])
      for (std::size_t j = 0; j < g.numel(); ++j) (*gi[0])[j] += g[j];
    if (gi[1])
      for (int i = 0; i < n; ++i)
        for (std::size_t j = 0; j < per; ++j) (*gi[1])[j] += mask[j] * g[i * per + j];
  });
}

Tensor apply_additive_vp(const Tensor& x, const AdditiveVpParams& p) {
  ad::Tape tape;
  return apply_additive_vp(tape.constant(x), tape.constant(p.v), p.mask).value();
}

// ---------------------------------------------------------------------------

std::size_t LvpParams::trainable_count_per_image() const {
  return static_cast<std::size_t>(c) * (static_cast<std::size_t>(h) * rank + rank + static_cast<std::size_t>(w) * rank);
}

Tensor LvpParams::packed_u() const {
  const int r = rank;
  Tensor u({n * c, h, r});
  for (int q = 0; q < n * c; ++q)
    for (int i = 0; i < h; ++i)
      for (int k = 0; k < r; ++k)
        u[(static_cast<std::size_t>(q) * h + i) * r + k] = factors[static_cast<std::size_t>(q)].u[static_cast<std::size_t>(i) * h + k];
  return u;
}

Tensor LvpParams::packed_s() const {
  Tensor s({n * c, rank});
  for (int q = 0; q < n * c; ++q)
    for (int k = 0; k < rank; ++k) s[static_cast<std::size_t>(q) * rank + k] = factors[static_cast<std::size_t>(q)].s[static_cast<std::size_t>(k)];
  return s;
}

Tensor LvpParams::packed_vt() const {
  Tensor vt({n * c, rank, w});
  for (int q = 0; q < n * c; ++q)
    for (int k = 0; k < rank; ++k)
      for (int j = 0; j < w; ++j)
        vt[(static_cast<std::size_t>(q) * rank + k) * w + j] = factors[static_cast<std::size_t>(q)].vt[static_cast<std::size_t>(k) * w + j];
  return vt;
}

void LvpParams::unpack(const Tensor& u, const Tensor& s, const Tensor& vt) {
  const int r = rank;
  if (u.shape() != Shape{n * c, h, r} || s.shape() != Shape{n * c, r} || vt.shape() != Shape{n * c, r, w})
    throw ShapeError("LvpParams::unpack: packed factor shapes do not match rank " + std::to_string(r));
  for (int q = 0; q < n * c; ++q) {
    auto& f = factors[static_cast<std::size_t>(q)];
    for (int i = 0; i < h; ++i)
      for (int k = 0; k < r; ++k) f.u[static_cast<std::size_t>(i) * h + k] = u[(static_cast<std::size_t>(q) * h + i) * r + k];
    for (int k = 0; k < r; ++k) f.s[static_cast<std::size_t>(k)] = s[static_cast<std::size_t>(q) * r + k];
    for (int k = 0; k < r; ++k)
      for (int j = 0; j < w; ++j) f.vt[static_cast<std::size_t>(k) * w + j] = vt[(static_cast<std::size_t>(q) * r + k) * w + j];
  }
}

void LvpParams::project() {
  for (auto& f : factors) {
    FactorTriple g = svd_small(reconstruct(f, rank));
    for (std::size_t k = static_cast<std::size_t>(rank); k < g.s.numel(); ++k) g.s[k] = 0.0f;
    f = std::move(g);
  }
}

Tensor LvpParams::delta() const {
  Tensor out({n, c, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int q = 0; q < n * c; ++q) {
    const Tensor m = reconstruct(factors[static_cast<std::size_t>(q)], rank);
    std::copy_n(m.ptr(), plane, out.ptr() + q * plane);
  }
  return out;
}

LvpParams lvp_init(const Tensor& x, int r) {
  require_nchw(x, "lvp_init");
  LvpParams p;
  p.n = x.dim(0);
  p.c = x.dim(1);
  p.h = x.dim(2);
  p.w = x.dim(3);
  if (r < 0 || r > std::min(p.h, p.w))
    throw std::invalid_argument("lvp rank must be in 0.." + std::to_string(std::min(p.h, p.w)) + ", got " +
                                std::to_string(r));
  p.rank = r;
  const std::size_t plane = static_cast<std::size_t>(p.h) * p.w;
  for (int q = 0; q < p.n * p.c; ++q) {
    Tensor m({p.h, p.w});
    std::copy_n(x.ptr() + q * plane, plane, m.ptr());
    p.factors.push_back(svd_small(m));
  }
  return p;
}

ad::Var lowrank_delta(ad::Var u, ad::Var s, ad::Var vt, int n, int c) {
  const Tensor &uv = u.value(), &sv = s.value(), &vv = vt.value();
  if (uv.rank() != 3 || sv.rank() != 2 || vv.rank() != 3) throw ShapeError("lowrank_delta: bad factor ranks");
  const int q_count = uv.dim(0), h = uv.dim(1), r = uv.dim(2), w = vv.dim(2);
  if (q_count != n * c || sv.dim(0) != q_count || vv.dim(0) != q_count || sv.dim(1) != r || vv.dim(1) != r)
    throw ShapeError("lowrank_delta: factor shapes disagree");
  Tensor out({n, c, h, w});
  for (int q = 0; q < q_count; ++q)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int k = 0; k < r; ++k)
          acc += double(uv[(static_cast<std::size_t>(q) * h + i) * r + k]) * sv[static_cast<std::size_t>(q) * r + k] *
                 vv[(static_cast<std::size_t>(q) * r + k) * w + j];
        out[(static_cast<std::size_t>(q) * h + i) * w + j] = static_cast<float>(acc);
      }
  return u.tape().record(std::move(out), {u, s, vt}, [=](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor &U = u.value(), &S = s.value(), &V = vt.value();
    for (int q = 0; q < q_count; ++q) {
      const float* gq = g.ptr() + static_cast<std::size_t>(q) * h * w;
      for (int k = 0; k < r; ++k) {
        const float sk = S[static_cast<std::size_t>(q) * r + k];
        const float* vk = V.ptr() + (static_cast<std::size_t>(q) * r + k) * w;
        double ds = 0.0;
        for (int i = 0; i < h; ++i) {
          const float uik = U[(static_cast<std::size_t>(q) * h + i) * r + k];
          double gv = 0.0;  // (G V^T)_{ik}
          for (int j = 0; j < w; ++j) gv += double(gq[i * w + j]) * vk[j];
          if (gi[0]) (*gi[0])[(static_cast<std::size_t>(q) * h + i) * r + k] += static_cast<float>(gv * sk);
          ds += gv * uik;
        }
        if (gi[1]) (*gi[1])[static_cast<std::size_t>(q) * r + k] += static_cast<float>(ds);
        if (gi[2])
          for (int j = 0; j < w; ++j) {
            double ug = 0.0;  // (U^T G)_{kj}
            for (int i = 0; i < h; ++i) ug += double(U[(static_cast<std::size_t>(q) * h + i) * r + k]) * gq[i * w + j];
            (*gi[2])[(static_cast<std::size_t>(q) * r + k) * w + j] += static_cast<float>(ug * sk);
          }
      }
    }
  });
}

ad::Var lvp_apply(ad::Var x, ad::Var u, ad::Var s, ad::Var vt) {
  require_nchw(x.value(), "lvp_apply");
  if (u.value().numel() == 0 || u.shape().at(2) == 0) return x;
  return ad::add(x, lowrank_delta(u, s, vt, x.shape()[0], x.shape()[1]));
}

Tensor lvp_apply(const Tensor& x, const LvpParams& p) {
  require_nchw(x, "lvp_apply");
  if (x.shape() != Shape{p.n, p.c, p.h, p.w}) throw ShapeError("lvp_apply: params built for a different batch");
  if (p.rank == 0) return x;
  ad::Tape tape;
  return lvp_apply(tape.constant(x), tape.constant(p.packed_u()), tape.constant(p.packed_s()),
                   tape.constant(p.packed_vt()))
      .value();
}

}  // namespace cvpb
