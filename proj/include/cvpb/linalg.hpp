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

#pragma once

#include "cvpb/tensor.hpp"

namespace cvpb {

/// Full singular value decomposition M = U * diag(S) * Vt of an H x W matrix.
struct FactorTriple {
  Tensor u;   // [H, H], orthonormal columns
  Tensor s;   // [min(H, W)], nonnegative, nonincreasing
  Tensor vt;  // [W, W], orthonormal rows

  int rows() const { return u.dim(0); }
  int cols() const { return vt.dim(0); }
};

inline constexpr int kMaxSvdExtent = 256;

/// One-sided Jacobi SVD, computed in double precision. Deterministic.
/// Throws NumericError on non-finite input and ShapeError beyond 256 extents.
FactorTriple svd_small(const Tensor& matrix);

/// U[:, :r] * diag(S[:r]) * Vt[:r, :]; r = 0 yields the zero matrix.
Tensor reconstruct(const FactorTriple& f, int rank);

/// Frobenius norm of a - b.
double frobenius_distance(const Tensor& a, const Tensor& b);

}  // namespace cvpb
