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
#include <iosfwd>
#include <vector>

#include "vidattn/attention.hpp"
#include "vidattn/model.hpp"
#include "vidattn/projector.hpp"
#include "vidattn/rng.hpp"
#include "vidattn/tape.hpp"

namespace vidattn {

struct TaskConfig {
  std::size_t classes = 8;
  std::size_t feat_dim = 16;
  std::size_t frame_len = 4;  // feature vectors per frame
  std::size_t frames = 4;
  double noise = 0.1;
  std::size_t distractor_vocab = 16;

  void validate() const;
};

/// Synthetic visual-retrieval task. Vocabulary layout: answers 0..C-1,
/// distractors C..C+V_d-1, then the query id, then the stop id.
struct TaskSpec {
  TaskConfig config;
  Tensor prototypes;  // C x feat_dim, pairwise distance > 4 * noise

  std::size_t distractor_begin() const { return config.classes; }
  std::size_t query_id() const { return config.classes + config.distractor_vocab; }
  std::size_t stop_id() const { return query_id() + 1; }
  std::size_t vocab_size() const { return stop_id() + 1; }

  // Prototypes are drawn N(0, 1) and redrawn until well separated.
  static TaskSpec make(const TaskConfig& config, SeededRng& rng);
};

struct Episode {
  std::uint64_t seed = 0;
  std::size_t label = 0;
  VideoFeatures video;
  std::vector<std::size_t> prompt_ids;  // distractors, then the query id
};

// Draw order: class, then frames (row-major noise), then distractor ids.
Episode sample_episode(const TaskSpec& spec, SeededRng& rng, std::size_t distractor_len);
// Uses SeededRng(seed) and records the seed on the episode.
Episode sample_episode(const TaskSpec& spec, std::uint64_t seed, std::size_t distractor_len);

// Cross-entropy of the final position's answer logits (ids 0..C-1) against
// the label, for the visual-prefix sequence built from the projected video.
double episode_loss(const DecoderParams& decoder, const ProjectorParams& projector,
                    const TaskSpec& spec, const Episode& episode, ChainingMode mode,
                    PositionalStrategy strategy);

// Answer logits at the final position (length C).
std::vector<double> episode_answer_logits(const DecoderParams& decoder,
                                          const ProjectorParams& projector, const TaskSpec& spec,
                                          const Episode& episode, ChainingMode mode,
                                          PositionalStrategy strategy);

struct EpisodeRecord {
  std::uint64_t seed = 0;
  std::size_t label = 0;
  std::vector<std::size_t> distractors;
};

// Line format, after a "vidattn-episodes 1" header:
//   seed=<u64> class=<c> distractors=<id,id,...>
// The distractor list may be empty. Frames are not stored; they regenerate
// from the seed with sample_episode.
void write_episodes(std::ostream& out, const std::vector<Episode>& episodes);
std::vector<EpisodeRecord> read_episodes(std::istream& in);

namespace ad {
Var episode_loss(Tape& tape, const DecoderParams& decoder, const ProjectorParams& projector,
                 const TaskSpec& spec, const Episode& episode, ChainingMode mode,
                 PositionalStrategy strategy);
}  // namespace ad

}  // namespace vidattn
