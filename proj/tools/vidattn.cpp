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

// Command-line front end: vidattn [--config F] [--seed N] [--set k=v]... <command>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/harness/commands.hpp"

namespace {

using namespace vidattn;
using namespace vidattn::harness;

std::vector<ChainingMode> parse_modes(const std::string& text) {
  if (text == "all") return {ChainingMode::Independent, ChainingMode::Sequential};
  std::vector<ChainingMode> out;
  for (const std::string& item : split_list(text)) {
    const auto m = parse_mode(item);
    if (!m) throw ConfigError("unknown mode '" + item + "' (expected independent, sequential or all)");
    out.push_back(*m);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Modality-aware rotary attention toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--set", overrides, "override one config key (key=value), repeatable");

  auto* check = app.add_subcommand("check", "run every invariant check");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full pipeline");
  std::string gc_strategies = "all", gc_modes = "all";
  gradcheck->add_option("--strategy", gc_strategies, "strategy list or 'all'");
  gradcheck->add_option("--mode", gc_modes, "chaining modes or 'all'");

  auto* dump = app.add_subcommand("attn-dump", "write grouped attention weights and images");
  std::optional<std::size_t> merge_visual;
  std::string dump_out = "attn_dump", dump_strategies = "edvt,rope";
  dump->add_option("--merge-visual", merge_visual, "number of contiguous visual key groups");
  dump->add_option("--out", dump_out, "output directory");
  dump->add_option("--strategy", dump_strategies, "strategy list or 'all'");

  auto* sweep = app.add_subcommand("sweep", "visual-key logits against distractor length");
  std::optional<std::string> lengths, sweep_strategies, sweep_out;
  sweep->add_option("--lengths", lengths, "comma-separated distractor lengths");
  sweep->add_option("--strategy", sweep_strategies, "strategy list or 'all' (default all)");
  sweep->add_option("--out", sweep_out, "CSV path (default: stdout)");

  auto* train = app.add_subcommand("train-toy", "train on the synthetic recall task");
  std::optional<std::string> train_strategies, train_mode, freeze, train_out;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  train->add_option("--strategy", train_strategies, "strategy list or 'all'");
  train->add_option("--mode", train_mode, "independent or sequential");
  train->add_option("--freeze", freeze, "frozen groups (decoder,embeddings,head,projector) or 'none'");
  train->add_option("--steps", steps, "optimizer steps");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--out", train_out, "output directory (default: config out_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitUsage;
  }

  RunConfig config;
  try {
    if (!config_path.empty()) config = load_config(config_path);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) config.seed = *seed;
    if (*train) {
      if (train_strategies) config.set("strategy", *train_strategies);
      if (train_mode) config.set("mode", *train_mode);
      if (freeze) config.set("freeze", *freeze);
      if (steps) config.steps = *steps;
      if (lr) config.optimizer.lr = *lr;
      if (train_out) config.out_dir = *train_out;
    }
    if (*dump && merge_visual) config.merge_visual = *merge_visual;
    config.finalize();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  }

  CommandResult result;
  try {
    if (*check) {
      result = cmd_check(config);
    } else if (*gradcheck) {
      const auto strategies = parse_strategy_list(gc_strategies);
      const auto modes = parse_modes(gc_modes);
      result = cmd_gradcheck(config, strategies, modes);
    } else if (*dump) {
      result = cmd_attn_dump(config, config.merge_visual, dump_out, parse_strategy_list(dump_strategies));
    } else if (*sweep) {
      const auto ls = lengths ? parse_size_list(*lengths) : config.distractor_lengths;
      const auto ss = parse_strategy_list(sweep_strategies.value_or("all"));
      std::optional<std::filesystem::path> out;
      if (sweep_out) out = *sweep_out;
      result = cmd_sweep(config, ls, ss, out);
    } else if (*train) {
      result = cmd_train_toy(config, config.out_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "argument error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitDivergence;
  }
  std::cout << result.report;
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return vidattn::harness::kExitCheckFailure;
  }
}
