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
#include <span>

#include "vidattn/tape.hpp"
#include "vidattn/tensor.hpp"

namespace vidattn {

/// Precomputed rotary tables.
///
/// Coordinates are rotated in interleaved pairs (x[2i], x[2i+1]) by
/// angle(pos, i) = pos * base^(-2i / head_dim). Row 0 is the identity.
class RotaryTable {
 public:
  RotaryTable(std::size_t head_dim, std::size_t max_positions, double base = 10000.0);

  std::size_t head_dim() const { return head_dim_; }
  std::size_t max_positions() const { return max_positions_; }
  double base() const { return base_; }

  double angle(std::size_t pos, std::size_t pair) const;
  double cos(std::size_t pos, std::size_t pair) const { return cos_(pos, pair); }
  double sin(std::size_t pos, std::size_t pair) const { return sin_(pos, pair); }
  const Tensor& cos_table() const { return cos_; }
  const Tensor& sin_table() const { return sin_; }

  RotaryTable resized(std::size_t max_positions) const {
    return RotaryTable(head_dim_, max_positions, base_);
  }

 private:
  std::size_t head_dim_;
  std::size_t max_positions_;
  double base_;
  Tensor cos_;
  Tensor sin_;
};

// Rotates row r of x (n x head_dim) by positions[r]. Rows at position 0 are
// copied unchanged. Throws DimensionError / RangeError.
Tensor apply_rotary(const RotaryTable& table, const Tensor& x,
                    std::span<const std::size_t> positions);

// Inverse rotation; the adjoint of apply_rotary.
Tensor apply_rotary_inverse(const RotaryTable& table, const Tensor& x,
                            std::span<const std::size_t> positions);

// <R_m q, R_n k> for single-row q and k.
double relative_similarity(const RotaryTable& table, const Tensor& q, const Tensor& k,
                           std::size_t m, std::size_t n);

namespace ad {
// Positions are constants; the op is linear in x.
Var apply_rotary(const RotaryTable& table, Var x, std::span<const std::size_t> positions);
}  // namespace ad

}  // namespace vidattn
