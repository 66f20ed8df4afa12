/* Copyright 2026 The vidattn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "vidattn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vidattn/errors.hpp"

namespace vidattn {
namespace {

void require_matrix(const Tensor& a, const char* what) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(a.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Mask Mask::causal(std::size_t n) {
  Mask m(n, n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a(i, t) * b(t, j);
      c(i, j) = acc;
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner extents differ, " + shape_string(a.shape()) +
                         " * " + shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), n = b.rows();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c(i, j) = dot(a.row(i), b.row(j));
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  auto out = c.data();
  auto rhs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rhs[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c = a;
  auto out = c.data();
  auto rhs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= rhs[i];
  return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor c = a;
  auto out = c.data();
  auto rhs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= rhs[i];
  return c;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor c = a;
  for (double& v : c.data()) v *= factor;
  return c;
}

Tensor softmax_rows(const Tensor& x, const Mask* mask) {
  require_matrix(x, "softmax_rows");
  if (mask != nullptr && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw DimensionError("softmax_rows: mask " + std::to_string(mask->rows()) + "x" +
                         std::to_string(mask->cols()) + " does not match " +
                         shape_string(x.shape()));
  }
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (mask != nullptr && !mask->keep(i, j)) continue;
      peak = std::max(peak, x(i, j));
      any = true;
    }
    if (!any) {
      throw NumericalError("softmax_rows: row " + std::to_string(i) +
                           " is fully masked (empty attention context)");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (mask != nullptr && !mask->keep(i, j)) continue;
      const double e = std::exp(x(i, j) - peak);
      y(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) /= total;
  }
  return y;
}

Tensor gaussian_init(SeededRng& rng, Shape shape, double scale_value) {
  if (!(scale_value > 0.0)) {
    throw ArgumentError("gaussian_init: scale must be > 0, got " + std::to_string(scale_value));
  }
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale_value * rng.gaussian();
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return acc;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  return worst;
}

bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace vidattn
