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
#include <vector>

#include "vidattn/numerics.hpp"
#include "vidattn/tape.hpp"

// Differentiable counterparts of the numerics kernels. Each op evaluates its
// forward with the plain Tensor kernel, so a non-recording tape gives results
// bit-identical to calling the kernels directly.
namespace vidattn::ad {

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);

// x: n x m, gain: 1 x m. Every row is multiplied elementwise by gain.
Var mul_rows(Var x, Var gain);

// x * sigmoid(x), elementwise.
Var silu(Var x);

Var softmax_rows(Var x, const Mask& mask);
Var softmax_rows(Var x);

// Root-mean-square normalization of each row, then elementwise gain (1 x m).
Var rms_norm(Var x, Var gain, double eps);

Var slice_cols(Var x, std::size_t begin, std::size_t width);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);

// out.row(r) = table.row(ids[r]).
Var gather_rows(Var table, std::span<const std::size_t> ids);

// Column j taken from `when_true` if flags[j], else from `when_false`.
Var select_columns(Var when_true, Var when_false, const std::vector<bool>& flags);

Var sum(Var x);
Var sum_squares(Var x);

// -log softmax(logits[row, 0..classes))[label]. Columns >= classes are ignored.
Var cross_entropy(Var logits, std::size_t row, std::size_t label, std::size_t classes);

}  // namespace vidattn::ad
