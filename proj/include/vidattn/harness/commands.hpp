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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vidattn/harness/config.hpp"

namespace vidattn::harness {

enum ExitCode : int {
  kExitPass = 0,
  kExitCheckFailure = 1,
  kExitUsage = 2,
  kExitDivergence = 3,
};

struct CommandResult {
  int exit_code = kExitPass;
  std::string report;
};

/// Task, decoder and projector drawn from independent streams of config.seed.
struct Setup {
  TaskSpec spec;
  DecoderParams decoder;
  ProjectorParams projector;
};
Setup build_setup(const RunConfig& config);

// ---- check ----------------------------------------------------------------

struct CheckResult {
  std::string module;
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  bool lower_bound = false;  // pass iff measured > bound (else measured <= bound)
  bool passed = false;
};

std::vector<CheckResult> run_invariant_suite(const RunConfig& config);
CommandResult cmd_check(const RunConfig& config);

// ---- gradcheck ------------------------------------------------------------

struct GradcheckCase {
  PositionalStrategy strategy;
  ChainingMode mode;
  GradCheckReport report;
  bool freeze_respected = false;
};

std::vector<GradcheckCase> run_gradcheck(const RunConfig& config,
                                         std::span<const PositionalStrategy> strategies,
                                         std::span<const ChainingMode> modes);
CommandResult cmd_gradcheck(const RunConfig& config,
                            std::span<const PositionalStrategy> strategies,
                            std::span<const ChainingMode> modes);

// ---- attn-dump ------------------------------------------------------------

// Writes attn_<strategy>.csv (layer,head,query,key_group,weight), one PGM per
// layer/head, and config.txt into out_dir. Throws ArgumentError when
// merge_groups does not divide the visual token count.
CommandResult cmd_attn_dump(const RunConfig& config, std::size_t merge_groups,
                            const std::filesystem::path& out_dir,
                            std::span<const PositionalStrategy> strategies);

// ---- sweep ----------------------------------------------------------------

struct SweepRow {
  PositionalStrategy strategy;
  std::size_t distractors = 0;
  std::size_t head = 0;
  double visual_mass = 0.0;
  double max_dev = 0.0;  // vs the first length, same strategy and head
  std::vector<double> logits;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> failures;
  std::string csv;
};

SweepResult run_sweep(const RunConfig& config, std::span<const std::size_t> lengths,
                      std::span<const PositionalStrategy> strategies);
CommandResult cmd_sweep(const RunConfig& config, std::span<const std::size_t> lengths,
                        std::span<const PositionalStrategy> strategies,
                        const std::optional<std::filesystem::path>& out_file);

// ---- train-toy ------------------------------------------------------------

struct TrainLogEntry {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean over the steps since the previous entry
  double eval_loss = 0.0;
};

struct TrainResult {
  PositionalStrategy strategy = PositionalStrategy::Edvt;
  std::vector<TrainLogEntry> log;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  std::vector<double> accuracy_by_length;  // aligned with config.distractor_lengths
  std::vector<double> loss_by_length;
  bool diverged = false;
};

TrainResult train_toy(const RunConfig& config, PositionalStrategy strategy);
CommandResult cmd_train_toy(const RunConfig& config, const std::filesystem::path& out_dir);

std::string format_number(double value);

}  // namespace vidattn::harness
