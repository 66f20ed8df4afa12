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

#include "vidattn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vidattn/errors.hpp"

namespace vidattn::ad {
namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ArgumentError("operands live on different tapes");
  return a.tape();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  Tensor out = vidattn::matmul(a.value(), b.value());
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{vidattn::matmul_nt(g, b.value()),
                               vidattn::matmul(vidattn::transpose(a.value()), g)};
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  Tensor out = vidattn::matmul_nt(a.value(), b.value());
  return tape.record(std::move(out), {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{vidattn::matmul(g, b.value()),
                               vidattn::matmul(vidattn::transpose(g), a.value())};
  });
}

Var transpose(Var a) {
  return a.tape().record(vidattn::transpose(a.value()), {a}, [](const Tensor& g) {
    return std::vector<Tensor>{vidattn::transpose(g)};
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  return tape.record(vidattn::add(a.value(), b.value()), {a, b},
                     [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  return tape.record(vidattn::sub(a.value(), b.value()), {a, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g, vidattn::scale(g, -1.0)};
  });
}

Var hadamard(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  return tape.record(vidattn::hadamard(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{vidattn::hadamard(g, b.value()),
                               vidattn::hadamard(g, a.value())};
  });
}

Var scale(Var a, double factor) {
  return a.tape().record(vidattn::scale(a.value(), factor), {a}, [factor](const Tensor& g) {
    return std::vector<Tensor>{vidattn::scale(g, factor)};
  });
}

Var mul_rows(Var x, Var gain) {
  Tape& tape = same_tape(x, gain);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  if (gv.rank() != 2 || gv.rows() != 1 || gv.cols() != xv.cols()) {
    throw DimensionError("mul_rows: gain " + shape_string(gv.shape()) + " does not fit " +
                         shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= gv(0, j);
  }
  return tape.record(std::move(out), {x, gain}, [x, gain](const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& gv = gain.value();
    Tensor dx = g;
    Tensor dgain({1, gv.cols()});
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        dx(i, j) *= gv(0, j);
        dgain(0, j) += g(i, j) * xv(i, j);
      }
    }
    return std::vector<Tensor>{std::move(dx), std::move(dgain)};
  });
}

Var silu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v * sigmoid(v);
  return x.tape().record(std::move(out), {x}, [x](const Tensor& g) {
    Tensor dx = g;
    auto xs = x.value().data();
    auto d = dx.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double s = sigmoid(xs[i]);
      d[i] *= s * (1.0 + xs[i] * (1.0 - s));
    }
    return std::vector<Tensor>{std::move(dx)};
  });
}

namespace {

Var softmax_impl(Var x, const Mask* mask) {
  Tensor y = vidattn::softmax_rows(x.value(), mask);
  Tensor saved = x.tape().recording() ? y : Tensor();
  // Fused Jacobian-vector form: dx = y * (g - <g, y>_row).
  return x.tape().record(std::move(y), {x}, [saved = std::move(saved)](const Tensor& g) {
    Tensor dx(g.shape());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double inner = vidattn::dot(g.row(i), saved.row(i));
      for (std::size_t j = 0; j < g.cols(); ++j) dx(i, j) = saved(i, j) * (g(i, j) - inner);
    }
    return std::vector<Tensor>{std::move(dx)};
  });
}

}  // namespace

Var softmax_rows(Var x, const Mask& mask) { return softmax_impl(x, &mask); }
Var softmax_rows(Var x) { return softmax_impl(x, nullptr); }

Var rms_norm(Var x, Var gain, double eps) {
  Tape& tape = same_tape(x, gain);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  if (xv.rank() != 2 || gv.rank() != 2 || gv.rows() != 1 || gv.cols() != xv.cols()) {
    throw DimensionError("rms_norm: gain " + shape_string(gv.shape()) + " does not fit " +
                         shape_string(xv.shape()));
  }
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor normalized({n, m});
  std::vector<double> inv_rms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mean_sq = vidattn::dot(xv.row(i), xv.row(i)) / static_cast<double>(m);
    inv_rms[i] = 1.0 / std::sqrt(mean_sq + eps);
    for (std::size_t j = 0; j < m; ++j) normalized(i, j) = xv(i, j) * inv_rms[i];
  }
  Tensor out = normalized;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out(i, j) *= gv(0, j);
  }
  if (!tape.recording()) return tape.record(std::move(out), {x, gain}, nullptr);
  return tape.record(
      std::move(out), {x, gain},
      [gain, normalized = std::move(normalized), inv_rms = std::move(inv_rms)](const Tensor& g) {
        const Tensor& gv = gain.value();
        const std::size_t n = g.rows(), m = g.cols();
        Tensor dx({n, m});
        Tensor dgain({1, m});
        std::vector<double> du(m);
        for (std::size_t i = 0; i < n; ++i) {
          double proj = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            du[j] = g(i, j) * gv(0, j);
            dgain(0, j) += g(i, j) * normalized(i, j);
            proj += du[j] * normalized(i, j);
          }
          proj /= static_cast<double>(m);
          for (std::size_t j = 0; j < m; ++j) {
            dx(i, j) = inv_rms[i] * (du[j] - normalized(i, j) * proj);
          }
        }
        return std::vector<Tensor>{std::move(dx), std::move(dgain)};
      });
}

Var slice_cols(Var x, std::size_t begin, std::size_t width) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || begin + width > xv.cols() || width == 0) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" +
                         std::to_string(width) + ") outside " + shape_string(xv.shape()));
  }
  Tensor out({xv.rows(), width});
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    for (std::size_t j = 0; j < width; ++j) out(i, j) = xv(i, begin + j);
  }
  Shape full = xv.shape();
  return x.tape().record(std::move(out), {x}, [full, begin, width](const Tensor& g) {
    Tensor dx(full);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < width; ++j) dx(i, begin + j) = g(i, j);
    }
    return std::vector<Tensor>{std::move(dx)};
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no parts");
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().rows() != rows) {
      throw DimensionError("concat_cols: row count mismatch");
    }
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offset + j) = pv(i, j);
    }
    offset += pv.cols();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parents, [widths, rows](const Tensor& g) {
    std::vector<Tensor> grads;
    std::size_t offset = 0;
    for (std::size_t w : widths) {
      Tensor d({rows, w});
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < w; ++j) d(i, j) = g(i, offset + j);
      }
      offset += w;
      grads.push_back(std::move(d));
    }
    return grads;
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || begin + count > xv.rows() || count == 0) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" +
                         std::to_string(count) + ") outside " + shape_string(xv.shape()));
  }
  const std::size_t cols = xv.cols();
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                           xv.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
  Shape full = xv.shape();
  return x.tape().record(Tensor({count, cols}, std::move(data)), {x},
                         [full, begin](const Tensor& g) {
                           Tensor dx(full);
                           std::copy(g.data().begin(), g.data().end(),
                                     dx.data().begin() +
                                         static_cast<std::ptrdiff_t>(begin * full[1]));
                           return std::vector<Tensor>{std::move(dx)};
                         });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no parts");
  const std::size_t cols = parts[0].value().cols();
  std::vector<std::size_t> heights;
  std::vector<double> data;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().cols() != cols) {
      throw DimensionError("concat_rows: column count mismatch, " +
                           shape_string(p.value().shape()) + " vs width " +
                           std::to_string(cols));
    }
    heights.push_back(p.value().rows());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  const std::size_t rows = data.size() / cols;
  std::vector<Var> parents(parts.begin(), parts.end());
  return parts[0].tape().record(Tensor({rows, cols}, std::move(data)), parents,
                                [heights, cols](const Tensor& g) {
                                  std::vector<Tensor> grads;
                                  std::size_t offset = 0;
                                  for (std::size_t h : heights) {
                                    auto first = g.data().begin() +
                                                 static_cast<std::ptrdiff_t>(offset * cols);
                                    grads.emplace_back(
                                        Shape{h, cols},
                                        std::vector<double>(
                                            first, first + static_cast<std::ptrdiff_t>(h * cols)));
                                    offset += h;
                                  }
                                  return grads;
                                });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  if (ids.empty()) throw ArgumentError("gather_rows: no ids");
  Tensor out({ids.size(), tv.cols()});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) {
      throw RangeError("gather_rows: id " + std::to_string(ids[r]) + " >= " +
                       std::to_string(tv.rows()));
    }
    std::copy(tv.row(ids[r]).begin(), tv.row(ids[r]).end(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  Shape full = tv.shape();
  return table.tape().record(std::move(out), {table}, [idx, full](const Tensor& g) {
    Tensor dt(full);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < full[1]; ++j) dt(idx[r], j) += g(r, j);
    }
    return std::vector<Tensor>{std::move(dt)};
  });
}

Var select_columns(Var when_true, Var when_false, const std::vector<bool>& flags) {
  Tape& tape = same_tape(when_true, when_false);
  const Tensor& a = when_true.value();
  const Tensor& b = when_false.value();
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw DimensionError("select_columns: shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  if (flags.size() != a.cols()) {
    throw DimensionError("select_columns: " + std::to_string(flags.size()) + " flags for " +
                         std::to_string(a.cols()) + " columns");
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = flags[j] ? a(i, j) : b(i, j);
  }
  return tape.record(std::move(out), {when_true, when_false}, [flags](const Tensor& g) {
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) (flags[j] ? ga : gb)(i, j) = g(i, j);
    }
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  });
}

Var sum(Var x) {
  Shape full = x.value().shape();
  return x.tape().record(Tensor::scalar(vidattn::sum(x.value())), {x}, [full](const Tensor& g) {
    return std::vector<Tensor>{Tensor(full, g.item())};
  });
}

Var sum_squares(Var x) {
  const Tensor& xv = x.value();
  return x.tape().record(Tensor::scalar(vidattn::dot(xv.data(), xv.data())), {x},
                         [x](const Tensor& g) {
                           return std::vector<Tensor>{vidattn::scale(x.value(), 2.0 * g.item())};
                         });
}

Var cross_entropy(Var logits, std::size_t row, std::size_t label, std::size_t classes) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || row >= z.rows()) throw RangeError("cross_entropy: row out of range");
  if (classes == 0 || classes > z.cols()) {
    throw DimensionError("cross_entropy: " + std::to_string(classes) + " classes for " +
                         std::to_string(z.cols()) + " logits");
  }
  if (label >= classes) throw RangeError("cross_entropy: label out of range");
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes; ++c) peak = std::max(peak, z(row, c));
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) total += std::exp(z(row, c) - peak);
  const double loss = peak + std::log(total) - z(row, label);
  Shape full = z.shape();
  return logits.tape().record(
      Tensor::scalar(loss), {logits}, [logits, row, label, classes, full](const Tensor& g) {
        const Tensor& z = logits.value();
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes; ++c) peak = std::max(peak, z(row, c));
        double total = 0.0;
        for (std::size_t c = 0; c < classes; ++c) total += std::exp(z(row, c) - peak);
        Tensor dz(full);
        for (std::size_t c = 0; c < classes; ++c) {
          dz(row, c) = g.item() * (std::exp(z(row, c) - peak) / total - (c == label ? 1.0 : 0.0));
        }
        return std::vector<Tensor>{std::move(dz)};
      });
}

}  // namespace vidattn::ad
