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

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vidattn/rng.hpp"
#include "vidattn/tensor.hpp"

namespace vidattn {

/// Boolean matrix selecting which entries take part in a row softmax.
/// `keep(i, j) == false` forces the output entry to exactly zero.
class Mask {
 public:
  Mask(std::size_t rows, std::size_t cols, bool fill = true)
      : rows_(rows), cols_(cols), keep_(rows * cols, fill ? 1 : 0) {}

  // keep(i, j) iff j <= i.
  static Mask causal(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool keep(std::size_t i, std::size_t j) const { return keep_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool keep) { keep_[i * cols_ + j] = keep ? 1 : 0; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::uint8_t> keep_;
};

// c[i][j] = sum_t a[i][t] * b[t][j]; accumulation runs over t in order.
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Row-wise softmax with max subtraction. Throws NumericalError when a row has
// no kept entry.
Tensor softmax_rows(const Tensor& x, const Mask* mask = nullptr);

// I.i.d. N(0, scale^2) entries drawn in row-major order. scale must be > 0.
Tensor gaussian_init(SeededRng& rng, Shape shape, double scale);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
double sum(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& a);

}  // namespace vidattn
