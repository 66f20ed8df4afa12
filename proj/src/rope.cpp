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

#include "vidattn/rope.hpp"

#include <cmath>
#include <vector>

#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"

namespace vidattn {
namespace {

void check_input(const RotaryTable& table, const Tensor& x,
                 std::span<const std::size_t> positions) {
  if (x.rank() != 2 || x.cols() != table.head_dim()) {
    throw DimensionError("rotary: input " + shape_string(x.shape()) + " needs " +
                         std::to_string(table.head_dim()) + " columns");
  }
  if (positions.size() != x.rows()) {
    throw DimensionError("rotary: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(x.rows()) + " rows");
  }
  for (std::size_t pos : positions) {
    if (pos >= table.max_positions()) {
      throw RangeError("rotary: position " + std::to_string(pos) + " outside table of " +
                       std::to_string(table.max_positions()));
    }
  }
}

Tensor rotate(const RotaryTable& table, const Tensor& x, std::span<const std::size_t> positions,
              double direction) {
  check_input(table, x, positions);
  Tensor out = x;
  const std::size_t pairs = table.head_dim() / 2;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::size_t pos = positions[r];
    if (pos == 0) continue;
    for (std::size_t i = 0; i < pairs; ++i) {
      const double c = table.cos(pos, i);
      const double s = direction * table.sin(pos, i);
      const double a = x(r, 2 * i);
      const double b = x(r, 2 * i + 1);
      out(r, 2 * i) = a * c - b * s;
      out(r, 2 * i + 1) = a * s + b * c;
    }
  }
  return out;
}

}  // namespace

RotaryTable::RotaryTable(std::size_t head_dim, std::size_t max_positions, double base)
    : head_dim_(head_dim), max_positions_(max_positions), base_(base) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw DimensionError("rotary: head_dim must be even and positive, got " +
                         std::to_string(head_dim));
  }
  if (max_positions == 0) throw ArgumentError("rotary: max_positions must be >= 1");
  if (!(base > 0.0)) throw ArgumentError("rotary: base must be > 0");
  const std::size_t pairs = head_dim / 2;
  cos_ = Tensor({max_positions, pairs});
  sin_ = Tensor({max_positions, pairs});
  for (std::size_t pos = 0; pos < max_positions; ++pos) {
    for (std::size_t i = 0; i < pairs; ++i) {
      const double theta = angle(pos, i);
      cos_(pos, i) = std::cos(theta);
      sin_(pos, i) = std::sin(theta);
    }
  }
}

double RotaryTable::angle(std::size_t pos, std::size_t pair) const {
  const double exponent = -2.0 * static_cast<double>(pair) / static_cast<double>(head_dim_);
  return static_cast<double>(pos) * std::pow(base_, exponent);
}

Tensor apply_rotary(const RotaryTable& table, const Tensor& x,
                    std::span<const std::size_t> positions) {
  return rotate(table, x, positions, 1.0);
}

Tensor apply_rotary_inverse(const RotaryTable& table, const Tensor& x,
                            std::span<const std::size_t> positions) {
  return rotate(table, x, positions, -1.0);
}

double relative_similarity(const RotaryTable& table, const Tensor& q, const Tensor& k,
                           std::size_t m, std::size_t n) {
  const std::size_t pm[] = {m};
  const std::size_t pn[] = {n};
  const Tensor rq = apply_rotary(table, q, pm);
  const Tensor rk = apply_rotary(table, k, pn);
  return dot(rq.row(0), rk.row(0));
}

namespace ad {

Var apply_rotary(const RotaryTable& table, Var x, std::span<const std::size_t> positions) {
  Tensor out = vidattn::apply_rotary(table, x.value(), positions);
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  return x.tape().record(std::move(out), {x}, [&table, pos](const Tensor& g) {
    return std::vector<Tensor>{apply_rotary_inverse(table, g, pos)};
  });
}

}  // namespace ad
}  // namespace vidattn
