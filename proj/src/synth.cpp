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

#include "vidattn/synth.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "vidattn/autodiff.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"

namespace vidattn {
namespace {

bool well_separated(const Tensor& prototypes, double min_distance) {
  for (std::size_t a = 0; a < prototypes.rows(); ++a) {
    for (std::size_t b = a + 1; b < prototypes.rows(); ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < prototypes.cols(); ++j) {
        const double d = prototypes(a, j) - prototypes(b, j);
        sq += d * d;
      }
      if (!(std::sqrt(sq) > min_distance)) return false;
    }
  }
  return true;
}

}  // namespace

void TaskConfig::validate() const {
  if (classes == 0 || feat_dim == 0 || frame_len == 0 || frames == 0 || distractor_vocab == 0) {
    throw DimensionError("task: classes, feat_dim, frame_len, frames and distractor_vocab must be >= 1");
  }
  if (!(noise >= 0.0)) throw ArgumentError("task: noise must be >= 0");
}

TaskSpec TaskSpec::make(const TaskConfig& config, SeededRng& rng) {
  config.validate();
  TaskSpec spec;
  spec.config = config;
  constexpr int kMaxDraws = 1000;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    spec.prototypes = gaussian_init(rng, {config.classes, config.feat_dim}, 1.0);
    if (well_separated(spec.prototypes, 4.0 * config.noise)) return spec;
  }
  throw ArgumentError("task: could not draw prototypes separated by 4 * noise");
}

Episode sample_episode(const TaskSpec& spec, SeededRng& rng, std::size_t distractor_len) {
  const TaskConfig& c = spec.config;
  Episode ep{rng.seed(), 0, VideoFeatures(Tensor({c.frames, c.frame_len, c.feat_dim})), {}};
  ep.label = rng.uniform_index(c.classes);
  Tensor& o = ep.video.tensor();
  for (std::size_t t = 0; t < c.frames; ++t) {
    for (std::size_t i = 0; i < c.frame_len; ++i) {
      for (std::size_t j = 0; j < c.feat_dim; ++j) {
        o(t, i, j) = spec.prototypes(ep.label, j) + c.noise * rng.gaussian();
      }
    }
  }
  ep.prompt_ids.reserve(distractor_len + 1);
  for (std::size_t d = 0; d < distractor_len; ++d) {
    ep.prompt_ids.push_back(spec.distractor_begin() + rng.uniform_index(c.distractor_vocab));
  }
  ep.prompt_ids.push_back(spec.query_id());
  return ep;
}

Episode sample_episode(const TaskSpec& spec, std::uint64_t seed, std::size_t distractor_len) {
  SeededRng rng(seed);
  return sample_episode(spec, rng, distractor_len);
}

double episode_loss(const DecoderParams& decoder, const ProjectorParams& projector,
                    const TaskSpec& spec, const Episode& episode, ChainingMode mode,
                    PositionalStrategy strategy) {
  ad::Tape tape(false);
  return ad::episode_loss(tape, decoder, projector, spec, episode, mode, strategy).value().item();
}

std::vector<double> episode_answer_logits(const DecoderParams& decoder,
                                          const ProjectorParams& projector, const TaskSpec& spec,
                                          const Episode& episode, ChainingMode mode,
                                          PositionalStrategy strategy) {
  ad::Tape tape(false);
  const ad::Var visual = ad::project_video_rows(projector, episode.video, mode, tape);
  const ad::Var inputs = ad::embed_prefixed(decoder, tape, visual, episode.prompt_ids);
  const std::size_t n = inputs.value().rows();
  const std::size_t m = visual.value().rows();
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  const Tensor& logits = ad::decoder_forward(decoder, inputs, ModalityMask::visual_prefix(m, n),
                                             positions, strategy)
                             .value();
  const auto last = logits.row(n - 1);
  return {last.begin(), last.begin() + static_cast<std::ptrdiff_t>(spec.config.classes)};
}

void write_episodes(std::ostream& out, const std::vector<Episode>& episodes) {
  out << "vidattn-episodes 1\n";
  for (const Episode& ep : episodes) {
    out << "seed=" << ep.seed << " class=" << ep.label << " distractors=";
    for (std::size_t i = 0; i + 1 < ep.prompt_ids.size(); ++i) {
      if (i != 0) out << ',';
      out << ep.prompt_ids[i];
    }
    out << '\n';
  }
}

std::vector<EpisodeRecord> read_episodes(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "vidattn-episodes 1") {
    throw ArgumentError("episodes: missing 'vidattn-episodes 1' header");
  }
  std::vector<EpisodeRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string seed_field, class_field, distractor_field;
    fields >> seed_field >> class_field >> distractor_field;
    if (seed_field.rfind("seed=", 0) != 0 || class_field.rfind("class=", 0) != 0 ||
        distractor_field.rfind("distractors=", 0) != 0) {
      throw ArgumentError("episodes: malformed record '" + line + "'");
    }
    EpisodeRecord rec;
    try {
      rec.seed = std::stoull(seed_field.substr(5));
      rec.label = std::stoul(class_field.substr(6));
      std::istringstream ids(distractor_field.substr(12));
      std::string id;
      while (std::getline(ids, id, ',')) rec.distractors.push_back(std::stoul(id));
    } catch (const std::logic_error&) {
      throw ArgumentError("episodes: malformed record '" + line + "'");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

namespace ad {

Var episode_loss(Tape& tape, const DecoderParams& decoder, const ProjectorParams& projector,
                 const TaskSpec& spec, const Episode& episode, ChainingMode mode,
                 PositionalStrategy strategy) {
  const Var visual = project_video_rows(projector, episode.video, mode, tape);
  const Var inputs = embed_prefixed(decoder, tape, visual, episode.prompt_ids);
  const std::size_t n = inputs.value().rows();
  const std::size_t m = visual.value().rows();
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  const Var logits =
      decoder_forward(decoder, inputs, ModalityMask::visual_prefix(m, n), positions, strategy);
  return cross_entropy(logits, n - 1, episode.label, spec.config.classes);
}

}  // namespace ad
}  // namespace vidattn
