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

#include "vidattn/reference.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vidattn::reference {
namespace {

using Vec = std::vector<double>;

// y = x W for a single row x.
Vec row_times(std::span<const double> x, const Tensor& w) {
  Vec y(w.cols(), 0.0);
  for (std::size_t j = 0; j < w.cols(); ++j) {
    for (std::size_t t = 0; t < w.rows(); ++t) y[j] += x[t] * w(t, j);
  }
  return y;
}

double inner(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec head_slice(const Vec& v, std::size_t head, std::size_t head_dim) {
  return Vec(v.begin() + static_cast<std::ptrdiff_t>(head * head_dim),
             v.begin() + static_cast<std::ptrdiff_t>((head + 1) * head_dim));
}

struct Projections {
  std::vector<Vec> q, k, v;
};

Projections project(const AttentionParams& p, const Tensor& x) {
  Projections out;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out.q.push_back(row_times(x.row(i), p.wq));
    out.k.push_back(row_times(x.row(i), p.wk));
    out.v.push_back(row_times(x.row(i), p.wv));
  }
  return out;
}

// Which rotation each side of the (query j, key i) product receives.
// A negative position means "unrotated".
std::pair<long, long> rotation_positions(PositionalStrategy s, const ModalityMask& mask,
                                         std::span<const std::size_t> pos, std::size_t j,
                                         std::size_t i) {
  const long pj = static_cast<long>(pos[j]);
  const long pi = static_cast<long>(pos[i]);
  const bool key_visual = mask.is_visual(i);
  switch (s) {
    case PositionalStrategy::NoPos: return {-1, -1};
    case PositionalStrategy::RopeAll: return {pj, pi};
    case PositionalStrategy::Edvt: return key_visual ? std::pair{-1L, -1L} : std::pair{pj, pi};
    case PositionalStrategy::FixVpe:
      return {mask.is_visual(j) ? 0L : pj, key_visual ? 0L : pi};
    case PositionalStrategy::RopeQueryEdvtKey: return {pj, key_visual ? -1L : pi};
  }
  return {-1, -1};
}

double logit(const Projections& pr, const AttentionParams& p, const ModalityMask& mask,
             std::span<const std::size_t> pos, PositionalStrategy s, std::size_t h,
             std::size_t j, std::size_t i, double base) {
  Vec a = head_slice(pr.q[j], h, p.head_dim);
  Vec b = head_slice(pr.k[i], h, p.head_dim);
  const auto [rq, rk] = rotation_positions(s, mask, pos, j, i);
  if (rq >= 0) a = rotate(a, static_cast<std::size_t>(rq), base);
  if (rk >= 0) b = rotate(b, static_cast<std::size_t>(rk), base);
  return inner(a, b) / std::sqrt(static_cast<double>(p.head_dim));
}

Vec rms(std::span<const double> x, const Tensor& gain, double eps) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const double r = 1.0 / std::sqrt(ms + eps);
  Vec y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] * r * gain(0, j);
  return y;
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

// Single-head attention of queries over keys/values, no mask.
std::vector<Vec> plain_attention(const std::vector<Vec>& q, const std::vector<Vec>& k,
                                 const std::vector<Vec>& v) {
  std::vector<Vec> out;
  const double d = static_cast<double>(q.front().size());
  for (const Vec& qi : q) {
    Vec acc(v.front().size(), 0.0);
    Vec s;
    for (const Vec& ki : k) s.push_back(inner(qi, ki) / std::sqrt(d));
    const double top = *std::max_element(s.begin(), s.end());
    double total = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
      const double w = std::exp(s[i] - top);
      total += w;
      for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += w * v[i][c];
    }
    for (double& c : acc) c /= total;
    out.push_back(std::move(acc));
  }
  return out;
}

}  // namespace

std::vector<double> rotate(std::span<const double> x, std::size_t pos, double base) {
  const std::size_t d = x.size();
  Vec y(x.begin(), x.end());
  for (std::size_t i = 0; 2 * i + 1 < d; ++i) {
    const double theta =
        static_cast<double>(pos) / std::pow(base, 2.0 * static_cast<double>(i) / static_cast<double>(d));
    y[2 * i] = x[2 * i] * std::cos(theta) - x[2 * i + 1] * std::sin(theta);
    y[2 * i + 1] = x[2 * i] * std::sin(theta) + x[2 * i + 1] * std::cos(theta);
  }
  return y;
}

double attention_logit(const AttentionParams& params, const Tensor& x, const ModalityMask& mask,
                       std::span<const std::size_t> positions, PositionalStrategy strategy,
                       std::size_t head, std::size_t query, std::size_t key, double base) {
  const Projections pr = project(params, x);
  return logit(pr, params, mask, positions, strategy, head, query, key, base);
}

Tensor attention(const AttentionParams& params, const Tensor& x, const ModalityMask& mask,
                 std::span<const std::size_t> positions, PositionalStrategy strategy,
                 double base) {
  const Projections pr = project(params, x);
  const std::size_t n = x.rows();
  const std::size_t dim = params.model_dim();
  Tensor joined({n, dim});
  for (std::size_t h = 0; h < params.heads; ++h) {
    for (std::size_t j = 0; j < n; ++j) {
      Vec numer(params.head_dim, 0.0);
      Vec s;
      for (std::size_t i = 0; i <= j; ++i) {
        s.push_back(logit(pr, params, mask, positions, strategy, h, j, i, base));
      }
      const double top = *std::max_element(s.begin(), s.end());
      double denom = 0.0;
      for (std::size_t i = 0; i <= j; ++i) {
        const double sim = std::exp(s[i] - top);
        const Vec vi = head_slice(pr.v[i], h, params.head_dim);
        for (std::size_t c = 0; c < params.head_dim; ++c) numer[c] += sim * vi[c];
        denom += sim;
      }
      for (std::size_t c = 0; c < params.head_dim; ++c) {
        joined(j, h * params.head_dim + c) = numer[c] / denom;
      }
    }
  }
  Tensor out({n, dim});
  for (std::size_t j = 0; j < n; ++j) {
    const Vec y = row_times(joined.row(j), params.wo);
    for (std::size_t c = 0; c < dim; ++c) out(j, c) = y[c];
  }
  return out;
}

Tensor projector_frame(const ProjectorParams& params, const Tensor& frame, const Tensor& queries) {
  std::vector<Vec> x;
  for (std::size_t r = 0; r < queries.rows(); ++r) x.emplace_back(queries.row(r).begin(), queries.row(r).end());
  for (const ProjectorBlock& b : params.blocks) {
    std::vector<Vec> q, k, v;
    for (const Vec& xi : x) {
      q.push_back(row_times(xi, b.self_wq));
      k.push_back(row_times(xi, b.self_wk));
      v.push_back(row_times(xi, b.self_wv));
    }
    std::vector<Vec> self = plain_attention(q, k, v);
    for (std::size_t r = 0; r < x.size(); ++r) {
      const Vec o = row_times(self[r], b.self_wo);
      for (std::size_t c = 0; c < o.size(); ++c) x[r][c] += o[c];
    }
    q.clear();
    k.clear();
    v.clear();
    for (const Vec& xi : x) q.push_back(row_times(xi, b.cross_wq));
    for (std::size_t r = 0; r < frame.rows(); ++r) {
      k.push_back(row_times(frame.row(r), b.cross_wk));
      v.push_back(row_times(frame.row(r), b.cross_wv));
    }
    std::vector<Vec> cross = plain_attention(q, k, v);
    for (std::size_t r = 0; r < x.size(); ++r) {
      const Vec o = row_times(cross[r], b.cross_wo);
      for (std::size_t c = 0; c < o.size(); ++c) x[r][c] += o[c];
    }
    for (Vec& xi : x) {
      Vec hidden = row_times(xi, b.ffn_in);
      for (double& hv : hidden) hv = silu(hv);
      const Vec o = row_times(hidden, b.ffn_out);
      for (std::size_t c = 0; c < o.size(); ++c) xi[c] += o[c];
    }
  }
  Tensor out({x.size(), x.front().size()});
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t c = 0; c < x[r].size(); ++c) out(r, c) = x[r][c];
  }
  return out;
}

Tensor decoder(const DecoderParams& params, const MixedSequence& seq, PositionalStrategy strategy) {
  const std::size_t n = seq.size();
  const std::size_t dim = params.config.model_dim();
  const double eps = params.config.norm_eps;
  Tensor h({n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& slot = seq.slot(i);
    const auto src = slot.visual ? slot.vector.row(0) : params.embedding.row(slot.token);
    for (std::size_t c = 0; c < dim; ++c) h(i, c) = src[c];
  }
  const ModalityMask mask = seq.modality_mask();
  const std::vector<std::size_t> positions = seq.positions();
  for (const DecoderLayer& layer : params.layers) {
    Tensor normed({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
      const Vec r = rms(h.row(i), layer.attn_norm, eps);
      for (std::size_t c = 0; c < dim; ++c) normed(i, c) = r[c];
    }
    const Tensor attended =
        attention(layer.attn, normed, mask, positions, strategy, params.config.rope_base);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < dim; ++c) h(i, c) += attended(i, c);
    }
    for (std::size_t i = 0; i < n; ++i) {
      Vec hidden = row_times(rms(h.row(i), layer.ffn_norm, eps), layer.ffn_in);
      for (double& hv : hidden) hv = silu(hv);
      const Vec o = row_times(hidden, layer.ffn_out);
      for (std::size_t c = 0; c < dim; ++c) h(i, c) += o[c];
    }
  }
  const std::size_t vocab = params.config.vocab;
  Tensor logits({n, vocab});
  for (std::size_t i = 0; i < n; ++i) {
    const Vec f = rms(h.row(i), params.final_norm, eps);
    for (std::size_t t = 0; t < vocab; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        s += f[c] * (params.config.tie_head ? params.embedding(t, c) : params.head(c, t));
      }
      logits(i, t) = s;
    }
  }
  return logits;
}

}  // namespace vidattn::reference
