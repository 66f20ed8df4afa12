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
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidattn/attention.hpp"
#include "vidattn/grad.hpp"
#include "vidattn/model.hpp"
#include "vidattn/projector.hpp"
#include "vidattn/synth.hpp"

namespace vidattn::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a subcommand needs. Parsed from "key = value" lines; '#' starts
/// a comment. Every key has a default; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  TaskConfig task;
  DecoderConfig decoder;
  ProjectorConfig projector;
  ChainingMode mode = ChainingMode::Independent;
  std::vector<PositionalStrategy> strategies = {PositionalStrategy::Edvt};
  std::vector<std::size_t> distractor_lengths = {0, 8, 32, 64};
  std::set<ParamGroup> frozen = {ParamGroup::Decoder, ParamGroup::Embeddings, ParamGroup::Head};
  OptimizerConfig optimizer{OptimizerKind::Adam, 1e-2};
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::size_t log_every = 50;
  std::size_t eval_episodes = 16;  // per distractor length
  std::size_t workers = 1;
  std::size_t merge_visual = 4;
  std::size_t dump_frames = 64;
  std::size_t dump_distractors = 8;
  std::size_t gradcheck_coords = 200;
  std::size_t gradcheck_distractors = 3;
  double gradcheck_h = 1e-5;
  double gradcheck_tol = 1e-6;
  std::string out_dir = "vidattn_out";

  // Applies one key; throws ConfigError naming the key on failure.
  void set(const std::string& key, const std::string& value);
  // Cross-field checks and derived extents (vocab, projector dims).
  void finalize();

  // Effective configuration in the file format, keys in a fixed order.
  std::string to_text() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

std::vector<std::string> split_list(const std::string& text, char sep = ',');
std::vector<std::size_t> parse_size_list(const std::string& text);
std::vector<PositionalStrategy> parse_strategy_list(const std::string& text);

}  // namespace vidattn::harness
