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

#include "cvpb/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace cvpb {
namespace {

// Row-major dense double matrix, just enough for the Jacobi sweeps.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

// Completes the first `filled` orthonormal columns of q to a full basis by
// Gram-Schmidt against the standard basis.
void complete_basis(Mat& q, int filled) {
  const int n = q.rows;
  int next = filled;
  for (int e = 0; e < n && next < q.cols; ++e) {
    std::vector<double> v(static_cast<std::size_t>(n), 0.0);
    v[static_cast<std::size_t>(e)] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < next; ++j) {
        double dot = 0.0;
        for (int i = 0; i < n; ++i) dot += q(i, j) * v[static_cast<std::size_t>(i)];
        for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] -= dot * q(i, j);
      }
    }
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm < 1e-8) continue;
    for (int i = 0; i < n; ++i) q(i, next) = v[static_cast<std::size_t>(i)] / nrm;
    ++next;
  }
}

// Hestenes one-sided Jacobi on a tall matrix (rows >= cols): rotates column
// pairs until mutually orthogonal. On return a holds U*diag(S) and v holds V.
void jacobi_tall(Mat& a, Mat& v) {
  const int m = a.rows, n = a.cols;
  for (int i = 0; i < n; ++i) v(i, i) = 1.0;
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (int i = 0; i < m; ++i) {
          alpha += a(i, p) * a(i, p);
          beta += a(i, q) * a(i, q);
          gamma += a(i, p) * a(i, q);
        }
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (int i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
}

}  // namespace

FactorTriple svd_small(const Tensor& matrix) {
  if (matrix.rank() != 2) throw ShapeError("svd_small: expected a matrix, got " + to_string(matrix.shape()));
  const int h = matrix.dim(0), w = matrix.dim(1);
  if (h > kMaxSvdExtent || w > kMaxSvdExtent) {
    throw ShapeError("svd_small: extents above " + std::to_string(kMaxSvdExtent) + ": " +
                     to_string(matrix.shape()));
  }
  if (!matrix.all_finite()) throw NumericError("svd_small: non-finite matrix entry");

  const bool tall = h >= w;
  const int m = tall ? h : w, n = tall ? w : h;  // work on the tall orientation
  Mat a(m, n);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double x = matrix[static_cast<std::size_t>(i) * w + j];
      if (tall) a(i, j) = x; else a(j, i) = x;
    }
  Mat v(n, n);
  jacobi_tall(a, v);

  std::vector<double> sigma(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    double ss = 0.0;
    for (int i = 0; i < m; ++i) ss += a(i, j) * a(i, j);
    sigma[static_cast<std::size_t>(j)] = std::sqrt(ss);
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return sigma[static_cast<std::size_t>(x)] > sigma[static_cast<std::size_t>(y)];
  });

  // Left factor of the tall problem: normalized nonzero columns, then completed.
  Mat left(m, m);
  Mat right(n, n);
  const double cutoff = (sigma.empty() ? 0.0 : sigma[static_cast<std::size_t>(order[0])]) * 1e-12;
  int filled = 0;
  for (int k = 0; k < n; ++k) {
    const int j = order[static_cast<std::size_t>(k)];
    for (int i = 0; i < n; ++i) right(i, k) = v(i, j);
    const double sv = sigma[static_cast<std::size_t>(j)];
    if (sv > cutoff && sv > 0.0 && filled == k) {
      for (int i = 0; i < m; ++i) left(i, k) = a(i, j) / sv;
      ++filled;
    }
  }
  complete_basis(left, filled);

  // Map back: tall M = L S R^T; wide M = (tall)^T = R S L^T.
  const Mat& uq = tall ? left : right;
  const Mat& vq = tall ? right : left;
  FactorTriple out{Tensor({h, h}), Tensor({n}), Tensor({w, w})};
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < h; ++j) out.u[static_cast<std::size_t>(i) * h + j] = static_cast<float>(uq(i, j));
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < w; ++j) out.vt[static_cast<std::size_t>(j) * w + i] = static_cast<float>(vq(i, j));
  for (int k = 0; k < n; ++k)
    out.s[static_cast<std::size_t>(k)] = static_cast<float>(sigma[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
  return out;
}

Tensor reconstruct(const FactorTriple& f, int rank) {
  const int h = f.rows(), w = f.cols();
  const int r = std::clamp(rank, 0, static_cast<int>(f.s.numel()));
  Tensor out({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int k = 0; k < r; ++k)
        acc += static_cast<double>(f.u[static_cast<std::size_t>(i) * h + k]) * f.s[static_cast<std::size_t>(k)] *
               f.vt[static_cast<std::size_t>(k) * w + j];
      out[static_cast<std::size_t>(i) * w + j] = static_cast<float>(acc);
    }
  return out;
}

double frobenius_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("frobenius_distance: shape mismatch");
  double ss = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    ss += d * d;
  }
  return std::sqrt(ss);
}

}  // namespace cvpb
