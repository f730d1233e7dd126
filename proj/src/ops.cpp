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

#include "cvpb/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace cvpb::ad {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
  }
}

void require_single(const Var& s, const char* op) {
  if (s.value().numel() != 1) {
    throw ShapeError(std::string(op) + ": expected a single-element tensor, got " +
                     to_string(s.shape()));
  }
}

int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// col[(c*k + ky)*k + kx, y*W + x] for one image.
void im2col(const float* img, int channels, int h, int w, int k, Padding pad, float* col) {
  const int p = k / 2;
  const int plane = h * w;
  for (int c = 0; c < channels; ++c) {
    const float* src = img + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - p;
          const bool row_out = sy < 0 || sy >= h;
          if (row_out && pad == Padding::kZero) {
            std::fill(row + y * w, row + (y + 1) * w, 0.0f);
            continue;
          }
          sy = clamp_index(sy, h);
          const float* srow = src + sy * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - p;
            if (sx < 0 || sx >= w) {
              row[y * w + x] = pad == Padding::kZero ? 0.0f : srow[clamp_index(sx, w)];
            } else {
              row[y * w + x] = srow[sx];
            }
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int channels, int h, int w, int k, Padding pad, float* img) {
  const int p = k / 2;
  const int plane = h * w;
  for (int c = 0; c < channels; ++c) {
    float* dst = img + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - p;
          if ((sy < 0 || sy >= h) && pad == Padding::kZero) continue;
          sy = clamp_index(sy, h);
          float* drow = dst + sy * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - p;
            if (sx < 0 || sx >= w) {
              if (pad == Padding::kReplicate) drow[clamp_index(sx, w)] += row[y * w + x];
            } else {
              drow[sx] += row[y * w + x];
            }
          }
        }
      }
    }
  }
}

void check_conv_operands(const Tensor& x, int kh, int kw, const char* op) {
  require_nchw(x, op);
  if (kh != kw || kh % 2 == 0) {
    throw ShapeError(std::string(op) + ": kernel must be square with odd extent, got " +
                     std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (x.dim(2) < kh || x.dim(3) < kw) {
    throw ShapeError(std::string(op) + ": spatial extent " + to_string(x.shape()) +
                     " smaller than kernel " + std::to_string(kh));
  }
}

}  // namespace

void check_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + where);
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (Tensor* t : gi) {
      if (!t) continue;
      for (std::size_t i = 0; i < g.numel(); ++i) (*t)[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  const Tensor* av = &a.value();
  const Tensor* bv = &b.value();
  Tensor out = *av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= (*bv)[i];
  return a.tape().record(std::move(out), {a, b},
                         [av, bv](const Tensor& g, std::span<Tensor* const> gi) {
                           if (gi[0])
                             for (std::size_t i = 0; i < g.numel(); ++i)
                               (*gi[0])[i] += g[i] * (*bv)[i];
                           if (gi[1])
                             for (std::size_t i = 0; i < g.numel(); ++i)
                               (*gi[1])[i] += g[i] * (*av)[i];
                         });
}

Var scale(Var x, float s) {
  Tensor out = x.value();
  for (float& v : out.data()) v *= s;
  return x.tape().record(std::move(out), {x}, [s](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += s * g[i];
  });
}

Var scale_by(Var x, Var s) {
  require_single(s, "scale_by");
  const Tensor* xv = &x.value();
  const float sv = s.value()[0];
  Tensor out = *xv;
  for (float& v : out.data()) v *= sv;
  return x.tape().record(std::move(out), {x, s},
                         [xv, sv](const Tensor& g, std::span<Tensor* const> gi) {
                           if (gi[0])
                             for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += sv * g[i];
                           if (gi[1]) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < g.numel(); ++i)
                               acc += static_cast<double>(g[i]) * (*xv)[i];
                             (*gi[1])[0] += static_cast<float>(acc);
                           }
                         });
}

Var relu(Var x) {
  const Tensor* xv = &x.value();
  Tensor out = *xv;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return x.tape().record(std::move(out), {x}, [xv](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i)
      if ((*xv)[i] > 0.0f) (*gi[0])[i] += g[i];
  });
}

Var log(Var x) {
  static constexpr float kFloor = 1e-30f;
  const Tensor* xv = &x.value();
  Tensor out = *xv;
  for (float& v : out.data()) v = std::log(std::max(v, kFloor));
  return x.tape().record(std::move(out), {x}, [xv](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i)
      (*gi[0])[i] += g[i] / std::max((*xv)[i], kFloor);
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  return x.tape().record(Tensor::scalar(static_cast<float>(acc)), {x},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           for (float& v : gi[0]->data()) v += g[0];
                         });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().numel());
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  return x.tape().record(Tensor::scalar(static_cast<float>(acc / n)), {x},
                         [n](const Tensor& g, std::span<Tensor* const> gi) {
                           const float d = static_cast<float>(g[0] / n);
                           for (float& v : gi[0]->data()) v += d;
                         });
}

Var sum_squares(Var x) {
  const Tensor* xv = &x.value();
  double acc = 0.0;
  for (float v : xv->data()) acc += static_cast<double>(v) * v;
  return x.tape().record(Tensor::scalar(static_cast<float>(acc)), {x},
                         [xv](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < xv->numel(); ++i)
                             (*gi[0])[i] += 2.0f * g[0] * (*xv)[i];
                         });
}

Var weighted_sum(Var x, const Tensor& w) {
  if (w.shape() != x.shape()) {
    throw ShapeError("weighted_sum: weight shape " + to_string(w.shape()) + " vs " +
                     to_string(x.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < w.numel(); ++i) acc += static_cast<double>(w[i]) * x.value()[i];
  return x.tape().record(Tensor::scalar(static_cast<float>(acc)), {x},
                         [w](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < w.numel(); ++i)
                             (*gi[0])[i] += g[0] * w[i];
                         });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
  });
}

Var matmul(Var a, Var b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const int m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner extents differ " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const Tensor* av = &a.value();
  const Tensor* bv = &b.value();
  Tensor out({m, n});
  MatMap(out.ptr(), m, n).noalias() = ConstMatMap(av->ptr(), m, k) * ConstMatMap(bv->ptr(), k, n);
  return a.tape().record(
      std::move(out), {a, b}, [av, bv, m, k, n](const Tensor& g, std::span<Tensor* const> gi) {
        ConstMatMap gm(g.ptr(), m, n);
        if (gi[0])
          MatMap(gi[0]->ptr(), m, k).noalias() += gm * ConstMatMap(bv->ptr(), k, n).transpose();
        if (gi[1])
          MatMap(gi[1]->ptr(), k, n).noalias() += ConstMatMap(av->ptr(), m, k).transpose() * gm;
      });
}

Var transpose(Var a) {
  require_matrix(a, "transpose");
  const int m = a.value().dim(0), n = a.value().dim(1);
  Tensor out({n, m});
  MatMap(out.ptr(), n, m) = ConstMatMap(a.value().ptr(), m, n).transpose();
  return a.tape().record(std::move(out), {a},
                         [m, n](const Tensor& g, std::span<Tensor* const> gi) {
                           MatMap(gi[0]->ptr(), m, n) += ConstMatMap(g.ptr(), n, m).transpose();
                         });
}

Var linear(Var x, Var w, Var b) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const int n = x.value().dim(0), in = x.value().dim(1), out_dim = w.value().dim(0);
  if (w.value().dim(1) != in || b.value().numel() != static_cast<std::size_t>(out_dim)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + ", weight " +
                     to_string(w.shape()) + ", bias " + to_string(b.shape()));
  }
  const Tensor* xv = &x.value();
  const Tensor* wv = &w.value();
  Tensor out({n, out_dim});
  MatMap om(out.ptr(), n, out_dim);
  om.noalias() = ConstMatMap(xv->ptr(), n, in) * ConstMatMap(wv->ptr(), out_dim, in).transpose();
  const float* bp = b.value().ptr();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_dim; ++j) om(i, j) += bp[j];
  return x.tape().record(
      std::move(out), {x, w, b},
      [xv, wv, n, in, out_dim](const Tensor& g, std::span<Tensor* const> gi) {
        ConstMatMap gm(g.ptr(), n, out_dim);
        if (gi[0]) MatMap(gi[0]->ptr(), n, in).noalias() += gm * ConstMatMap(wv->ptr(), out_dim, in);
        if (gi[1])
          MatMap(gi[1]->ptr(), out_dim, in).noalias() += gm.transpose() * ConstMatMap(xv->ptr(), n, in);
        if (gi[2]) {
          for (int j = 0; j < out_dim; ++j) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += gm(i, j);
            (*gi[2])[static_cast<std::size_t>(j)] += static_cast<float>(acc);
          }
        }
      });
}

Var softmax(Var logits) {
  require_matrix(logits, "softmax");
  const int n = logits.value().dim(0), c = logits.value().dim(1);
  Tensor out = logits.value();
  for (int i = 0; i < n; ++i) {
    float* row = out.ptr() + static_cast<std::size_t>(i) * c;
    const float mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (int j = 0; j < c; ++j) row[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
  }
  auto yv = std::make_shared<const Tensor>(out);
  return logits.tape().record(
      std::move(out), {logits}, [yv, n, c](const Tensor& g, std::span<Tensor* const> gi) {
        for (int i = 0; i < n; ++i) {
          const float* p = yv->ptr() + static_cast<std::size_t>(i) * c;
          const float* gr = g.ptr() + static_cast<std::size_t>(i) * c;
          double dot = 0.0;
          for (int j = 0; j < c; ++j) dot += static_cast<double>(gr[j]) * p[j];
          float* d = gi[0]->ptr() + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) d[j] += p[j] * static_cast<float>(gr[j] - dot);
        }
      });
}

Var log_softmax(Var logits, bool exclude_diagonal) {
  require_matrix(logits, "log_softmax");
  const int n = logits.value().dim(0), c = logits.value().dim(1);
  if (exclude_diagonal && n != c) {
    throw ShapeError("log_softmax: diagonal exclusion needs a square matrix, got " +
                     to_string(logits.shape()));
  }
  if (exclude_diagonal && c < 2) throw ShapeError("log_softmax: need at least 2 columns");
  Tensor out = logits.value();
  auto probs = std::make_shared<std::vector<float>>(out.numel(), 0.0f);
  for (int i = 0; i < n; ++i) {
    float* row = out.ptr() + static_cast<std::size_t>(i) * c;
    float mx = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < c; ++j)
      if (!(exclude_diagonal && j == i)) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j)
      if (!(exclude_diagonal && j == i)) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < c; ++j) {
      if (exclude_diagonal && j == i) {
        row[j] = 0.0f;
        continue;
      }
      const double lp = row[j] - lse;
      row[j] = static_cast<float>(lp);
      (*probs)[static_cast<std::size_t>(i) * c + j] = static_cast<float>(std::exp(lp));
    }
  }
  return logits.tape().record(
      std::move(out), {logits},
      [probs, n, c, exclude_diagonal](const Tensor& g, std::span<Tensor* const> gi) {
        for (int i = 0; i < n; ++i) {
          const float* gr = g.ptr() + static_cast<std::size_t>(i) * c;
          const float* p = probs->data() + static_cast<std::size_t>(i) * c;
          double gsum = 0.0;
          for (int j = 0; j < c; ++j)
            if (!(exclude_diagonal && j == i)) gsum += gr[j];
          float* d = gi[0]->ptr() + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) {
            if (exclude_diagonal && j == i) continue;
            d[j] += static_cast<float>(gr[j] - p[j] * gsum);
          }
        }
      });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy");
  const int n = logits.value().dim(0), c = logits.value().dim(1);
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * c);
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (lab[i] < 0 || lab[i] >= c) throw ShapeError("cross_entropy: label out of range");
    const float* row = logits.value().ptr() + static_cast<std::size_t>(i) * c;
    const float mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < c; ++j)
      (*probs)[static_cast<std::size_t>(i) * c + j] = static_cast<float>(std::exp(row[j] - lse));
    loss += lse - row[lab[i]];
  }
  return logits.tape().record(
      Tensor::scalar(static_cast<float>(loss / n)), {logits},
      [probs, lab, n, c](const Tensor& g, std::span<Tensor* const> gi) {
        const float s = g[0] / static_cast<float>(n);
        for (int i = 0; i < n; ++i) {
          float* d = gi[0]->ptr() + static_cast<std::size_t>(i) * c;
          const float* p = probs->data() + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) d[j] += s * (p[j] - (j == lab[i] ? 1.0f : 0.0f));
        }
      });
}

Var l2_normalize(Var x) {
  require_matrix(x, "l2_normalize");
  const int n = x.value().dim(0), d = x.value().dim(1);
  Tensor out = x.value();
  auto norms = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    float* row = out.ptr() + static_cast<std::size_t>(i) * d;
    double ss = 0.0;
    for (int j = 0; j < d; ++j) ss += static_cast<double>(row[j]) * row[j];
    const float nrm = static_cast<float>(std::sqrt(ss));
    (*norms)[static_cast<std::size_t>(i)] = nrm;
    for (int j = 0; j < d; ++j) row[j] = nrm > 0.0f ? row[j] / nrm : 0.0f;
  }
  auto yv = std::make_shared<const Tensor>(out);
  return x.tape().record(std::move(out), {x}, [yv, norms, n, d](const Tensor& g, std::span<Tensor* const> gi) {
    for (int i = 0; i < n; ++i) {
      const float nrm = (*norms)[static_cast<std::size_t>(i)];
      if (nrm <= 0.0f) continue;
      const float* yr = yv->ptr() + static_cast<std::size_t>(i) * d;
      const float* gr = g.ptr() + static_cast<std::size_t>(i) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += static_cast<double>(yr[j]) * gr[j];
      float* dr = gi[0]->ptr() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) dr[j] += static_cast<float>((gr[j] - yr[j] * dot) / nrm);
    }
  });
}

Var sum_rows(Var x) {
  require_matrix(x, "sum_rows");
  const int n = x.value().dim(0), d = x.value().dim(1);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += x.value()[static_cast<std::size_t>(i) * d + j];
    out[static_cast<std::size_t>(i)] = static_cast<float>(acc);
  }
  return x.tape().record(std::move(out), {x}, [n, d](const Tensor& g, std::span<Tensor* const> gi) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) (*gi[0])[static_cast<std::size_t>(i) * d + j] += g[static_cast<std::size_t>(i)];
  });
}

Var cosine_similarity(Var a, Var b) {
  require_same_shape(a, b, "cosine_similarity");
  return sum_rows(mul(l2_normalize(a), l2_normalize(b)));
}

Var column_mean(Var x) {
  require_matrix(x, "column_mean");
  const int n = x.value().dim(0), c = x.value().dim(1);
  Tensor out({1, c});
  for (int j = 0; j < c; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += x.value()[static_cast<std::size_t>(i) * c + j];
    out[static_cast<std::size_t>(j)] = static_cast<float>(acc / n);
  }
  return x.tape().record(std::move(out), {x}, [n, c](const Tensor& g, std::span<Tensor* const> gi) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j)
        (*gi[0])[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j)] / static_cast<float>(n);
  });
}

Var conv2d(Var x, Var kernel, Padding padding) {
  const Tensor* xv = &x.value();
  const Tensor* kv = &kernel.value();
  if (kv->rank() != 4) throw ShapeError("conv2d: kernel must be [Cout,Cin,k,k], got " + to_string(kv->shape()));
  check_conv_operands(*xv, kv->dim(2), kv->dim(3), "conv2d");
  const int n = xv->dim(0), cin = xv->dim(1), h = xv->dim(2), w = xv->dim(3);
  const int cout = kv->dim(0), k = kv->dim(2);
  if (kv->dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                     std::to_string(kv->dim(1)));
  }
  const int rows = cin * k * k, plane = h * w;
  Tensor out({n, cout, h, w});
  std::vector<float> col(static_cast<std::size_t>(rows) * plane);
  ConstMatMap wm(kv->ptr(), cout, rows);
  for (int i = 0; i < n; ++i) {
    im2col(xv->ptr() + static_cast<std::size_t>(i) * cin * plane, cin, h, w, k, padding, col.data());
    MatMap(out.ptr() + static_cast<std::size_t>(i) * cout * plane, cout, plane).noalias() =
        wm * ConstMatMap(col.data(), rows, plane);
  }
  return x.tape().record(
      std::move(out), {x, kernel},
      [xv, kv, n, cin, cout, h, w, k, padding, rows, plane](const Tensor& g,
                                                           std::span<Tensor* const> gi) {
        std::vector<float> col(static_cast<std::size_t>(rows) * plane);
        ConstMatMap wm(kv->ptr(), cout, rows);
        for (int i = 0; i < n; ++i) {
          ConstMatMap gm(g.ptr() + static_cast<std::size_t>(i) * cout * plane, cout, plane);
          if (gi[1]) {
            im2col(xv->ptr() + static_cast<std::size_t>(i) * cin * plane, cin, h, w, k, padding,
                   col.data());
            MatMap(gi[1]->ptr(), cout, rows).noalias() +=
                gm * ConstMatMap(col.data(), rows, plane).transpose();
          }
          if (gi[0]) {
            MatMap(col.data(), rows, plane).noalias() = wm.transpose() * gm;
            col2im_add(col.data(), cin, h, w, k, padding,
                       gi[0]->ptr() + static_cast<std::size_t>(i) * cin * plane);
          }
        }
      });
}

Var depthwise_conv2d(Var x, Var kernel, Padding padding) {
  const Tensor* xv = &x.value();
  const Tensor* kv = &kernel.value();
  if (kv->rank() != 2) throw ShapeError("depthwise_conv2d: kernel must be [k,k], got " + to_string(kv->shape()));
  check_conv_operands(*xv, kv->dim(0), kv->dim(1), "depthwise_conv2d");
  const int planes = xv->dim(0) * xv->dim(1), h = xv->dim(2), w = xv->dim(3);
  const int k = kv->dim(0), p = k / 2;
  // Source offset of tap (y+ky-p, x+kx-p), or -1 for a zero-padded tap.
  auto source = [=](int y, int x, int ky, int kx) -> int {
    int sy = y + ky - p, sx = x + kx - p;
    if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
      if (padding == Padding::kZero) return -1;
      sy = clamp_index(sy, h);
      sx = clamp_index(sx, w);
    }
    return sy * w + sx;
  };
  Tensor out(xv->shape());
  for (int pl = 0; pl < planes; ++pl) {
    const float* src = xv->ptr() + static_cast<std::size_t>(pl) * h * w;
    float* dst = out.ptr() + static_cast<std::size_t>(pl) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        float acc = 0.0f;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int s = source(y, xx, ky, kx);
            if (s >= 0) acc += (*kv)[static_cast<std::size_t>(ky * k + kx)] * src[s];
          }
        dst[y * w + xx] = acc;
      }
    }
  }
  return x.tape().record(
      std::move(out), {x, kernel},
      [xv, kv, planes, h, w, k, source](const Tensor& g, std::span<Tensor* const> gi) {
        std::vector<double> dk(static_cast<std::size_t>(k) * k, 0.0);
        for (int pl = 0; pl < planes; ++pl) {
          const float* src = xv->ptr() + static_cast<std::size_t>(pl) * h * w;
          const float* gp = g.ptr() + static_cast<std::size_t>(pl) * h * w;
          float* dx = gi[0] ? gi[0]->ptr() + static_cast<std::size_t>(pl) * h * w : nullptr;
          for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
              const float gv = gp[y * w + xx];
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int s = source(y, xx, ky, kx);
                  if (s < 0) continue;
                  const auto ki = static_cast<std::size_t>(ky * k + kx);
                  if (dx) dx[s] += (*kv)[ki] * gv;
                  dk[ki] += static_cast<double>(gv) * src[s];
                }
            }
          }
        }
        if (gi[1])
          for (std::size_t i = 0; i < dk.size(); ++i) (*gi[1])[i] += static_cast<float>(dk[i]);
      });
}

Var maxpool2x2(Var x) {
  const Tensor& xv = x.value();
  require_nchw(xv, "maxpool2x2");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % 2 || w % 2) throw ShapeError("maxpool2x2: odd spatial extent in " + to_string(xv.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
  for (int pl = 0; pl < n * c; ++pl) {
    const float* src = xv.ptr() + static_cast<std::size_t>(pl) * h * w;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        int best = (2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * y + dy) * w + 2 * xx + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = static_cast<std::size_t>(pl) * oh * ow + y * ow + xx;
        out[o] = src[best];
        (*argmax)[o] = static_cast<std::int32_t>(static_cast<std::size_t>(pl) * h * w + best);
      }
    }
  }
  return x.tape().record(std::move(out), {x}, [argmax](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t o = 0; o < g.numel(); ++o) (*gi[0])[static_cast<std::size_t>((*argmax)[o])] += g[o];
  });
}

Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                BnMode mode, float momentum, float eps) {
  const Tensor* xv = &x.value();
  require_nchw(*xv, "batchnorm2d");
  const int n = xv->dim(0), c = xv->dim(1), plane = xv->dim(2) * xv->dim(3);
  const auto uc = static_cast<std::size_t>(c);
  if (gamma.value().numel() != uc || beta.value().numel() != uc || running_mean.numel() != uc ||
      running_var.numel() != uc) {
    throw ShapeError("batchnorm2d: parameters do not match " + std::to_string(c) + " channels");
  }
  const bool batch_stats = mode != BnMode::kEval;
  if (batch_stats && n < 2) {
    throw ShapeError("batchnorm2d: batch statistics need at least 2 images, got 1");
  }
  const double count = static_cast<double>(n) * plane;
  auto inv_std = std::make_shared<std::vector<float>>(uc);
  auto mu = std::make_shared<std::vector<float>>(uc);
  for (int ch = 0; ch < c; ++ch) {
    double m, v;
    if (batch_stats) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = xv->ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (int j = 0; j < plane; ++j) s += p[j];
      }
      m = s / count;
      double ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = xv->ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (int j = 0; j < plane; ++j) ss += (p[j] - m) * (p[j] - m);
      }
      v = ss / count;
      if (mode == BnMode::kTrain) {
        const double unbiased = count > 1 ? ss / (count - 1) : v;
        running_mean[static_cast<std::size_t>(ch)] = static_cast<float>(
            (1.0 - momentum) * running_mean[static_cast<std::size_t>(ch)] + momentum * m);
        running_var[static_cast<std::size_t>(ch)] = static_cast<float>(
            (1.0 - momentum) * running_var[static_cast<std::size_t>(ch)] + momentum * unbiased);
      }
    } else {
      m = running_mean[static_cast<std::size_t>(ch)];
      v = running_var[static_cast<std::size_t>(ch)];
    }
    (*mu)[static_cast<std::size_t>(ch)] = static_cast<float>(m);
    (*inv_std)[static_cast<std::size_t>(ch)] = static_cast<float>(1.0 / std::sqrt(v + eps));
  }
  Tensor out(xv->shape());
  const Tensor* gv = &gamma.value();
  const float* bp = beta.value().ptr();
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      const float a = (*gv)[static_cast<std::size_t>(ch)] * (*inv_std)[static_cast<std::size_t>(ch)];
      const float m = (*mu)[static_cast<std::size_t>(ch)];
      for (int j = 0; j < plane; ++j) out[off + j] = a * (xv->ptr()[off + j] - m) + bp[ch];
    }
  }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [xv, gv, mu, inv_std, n, c, plane, batch_stats, count](const Tensor& g,
                                                              std::span<Tensor* const> gi) {
        for (int ch = 0; ch < c; ++ch) {
          const auto uch = static_cast<std::size_t>(ch);
          const float m = (*mu)[uch], is = (*inv_std)[uch];
          double sum_g = 0.0, sum_gx = 0.0;
          for (int i = 0; i < n; ++i) {
            const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
            for (int j = 0; j < plane; ++j) {
              const double xh = (xv->ptr()[off + j] - m) * is;
              sum_g += g[off + j];
              sum_gx += g[off + j] * xh;
            }
          }
          if (gi[1]) (*gi[1])[uch] += static_cast<float>(sum_gx);
          if (gi[2]) (*gi[2])[uch] += static_cast<float>(sum_g);
          if (!gi[0]) continue;
          const float scale_g = (*gv)[uch] * is;
          for (int i = 0; i < n; ++i) {
            const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
            for (int j = 0; j < plane; ++j) {
              if (batch_stats) {
                const double xh = (xv->ptr()[off + j] - m) * is;
                (*gi[0])[off + j] += static_cast<float>(
                    scale_g * (g[off + j] - sum_g / count - xh * sum_gx / count));
              } else {
                (*gi[0])[off + j] += scale_g * g[off + j];
              }
            }
          }
        }
      });
}

Var resample(Var x, const ResamplePlan& plan) {
  const Tensor& xv = x.value();
  require_nchw(xv, "resample");
  if (xv.dim(2) != plan.in_h || xv.dim(3) != plan.in_w) {
    throw ShapeError("resample: plan built for " + std::to_string(plan.in_h) + "x" +
                     std::to_string(plan.in_w) + " input, got " + to_string(xv.shape()));
  }
  const int c = xv.dim(1), in_plane = plan.in_h * plan.in_w, out_plane = plan.out_h * plan.out_w;
  const int out_n = plan.out_n();
  for (int s : plan.source)
    if (s < 0 || s >= xv.dim(0)) throw ShapeError("resample: source index out of range");
  Tensor out({out_n, c, plan.out_h, plan.out_w});
  for (int o = 0; o < out_n; ++o) {
    const int src = plan.source[static_cast<std::size_t>(o)];
    for (int ch = 0; ch < c; ++ch) {
      const float* sp = xv.ptr() + (static_cast<std::size_t>(src) * c + ch) * in_plane;
      float* dp = out.ptr() + (static_cast<std::size_t>(o) * c + ch) * out_plane;
      for (int q = 0; q < out_plane; ++q) {
        const std::size_t t = (static_cast<std::size_t>(o) * out_plane + q) * 4;
        dp[q] = plan.weight[t] * sp[plan.tap[t]] + plan.weight[t + 1] * sp[plan.tap[t + 1]] +
                plan.weight[t + 2] * sp[plan.tap[t + 2]] + plan.weight[t + 3] * sp[plan.tap[t + 3]];
      }
    }
  }
  return x.tape().record(
      std::move(out), {x},
      [plan, c, in_plane, out_plane, out_n](const Tensor& g, std::span<Tensor* const> gi) {
        for (int o = 0; o < out_n; ++o) {
          const int src = plan.source[static_cast<std::size_t>(o)];
          for (int ch = 0; ch < c; ++ch) {
            float* dp = gi[0]->ptr() + (static_cast<std::size_t>(src) * c + ch) * in_plane;
            const float* gp = g.ptr() + (static_cast<std::size_t>(o) * c + ch) * out_plane;
            for (int q = 0; q < out_plane; ++q) {
              const std::size_t t = (static_cast<std::size_t>(o) * out_plane + q) * 4;
              for (int j = 0; j < 4; ++j) dp[plan.tap[t + j]] += plan.weight[t + j] * gp[q];
            }
          }
        }
      });
}

}  // namespace cvpb::ad
