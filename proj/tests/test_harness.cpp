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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "vidattn/errors.hpp"
#include "vidattn/harness/commands.hpp"

namespace vidattn::harness {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("vidattn_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig small_training_config() {
  RunConfig c;
  c.steps = 20;
  c.log_every = 5;
  c.eval_episodes = 3;
  c.batch = 2;
  c.finalize();
  return c;
}

TEST(Config, ParsesKeysAndComments) {
  const RunConfig c = parse_config_text(
      "# toy run\nseed = 7\nstrategy = edvt, rope\nmode = sequential\nfreeze = none\n"
      "distractor_lengths = 0,4\nlr = 0.5  # inline\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.strategies, (std::vector<PositionalStrategy>{PositionalStrategy::Edvt, PositionalStrategy::RopeAll}));
  EXPECT_EQ(c.mode, ChainingMode::Sequential);
  EXPECT_TRUE(c.frozen.empty());
  EXPECT_EQ(c.distractor_lengths, (std::vector<std::size_t>{0, 4}));
  EXPECT_EQ(c.optimizer.lr, 0.5);
}

TEST(Config, UnknownKeyRejected) {
  try {
    parse_config_text("colour = blue\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
}

TEST(Config, OddHeadDimNamesField) {
  RunConfig c;
  c.set("head_dim", "5");
  try {
    c.finalize();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("head_dim"), std::string::npos);
  }
}

TEST(Config, RejectsMalformedValues) {
  RunConfig c;
  EXPECT_THROW(c.set("steps", "many"), ConfigError);
  EXPECT_THROW(c.set("mode", "parallel"), ConfigError);
  EXPECT_THROW(c.set("freeze", "decoder,bias"), ConfigError);
  EXPECT_THROW(c.set("strategy", "alibi"), ConfigError);
  RunConfig unsorted;
  unsorted.set("distractor_lengths", "8,0");
  EXPECT_THROW(unsorted.finalize(), ConfigError);
}

TEST(Config, TextRoundTrip) {
  RunConfig c;
  c.set("strategy", "all");
  c.set("noise", "0.25");
  c.set("freeze", "decoder,head");
  c.finalize();
  RunConfig back = parse_config_text(c.to_text());
  back.finalize();
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.strategies.size(), 5u);
}

TEST(Config, DerivedExtents) {
  RunConfig c;
  c.set("classes", "5");
  c.set("feat_dim", "7");
  c.finalize();
  EXPECT_EQ(c.decoder.vocab, 5u + 16u + 2u);
  EXPECT_EQ(c.projector.feat_dim, 7u);
  EXPECT_EQ(c.projector.model_dim, c.decoder.model_dim());
}

TEST(Check, DefaultConfigPasses) {
  RunConfig c;
  c.finalize();
  const CommandResult r = cmd_check(c);
  EXPECT_EQ(r.exit_code, kExitPass) << r.report;
  const auto results = run_invariant_suite(c);
  EXPECT_GE(results.size(), 30u);
  for (const CheckResult& check : results) {
    EXPECT_TRUE(check.passed) << check.module << '.' << check.name;
    EXPECT_NE(r.report.find(check.module + "." + check.name), std::string::npos);
  }
}

TEST(Gradcheck, SequentialEdvtPassesAndRespectsFreeze) {
  RunConfig c;
  c.gradcheck_coords = 40;
  c.finalize();
  const PositionalStrategy strategies[] = {PositionalStrategy::Edvt};
  const ChainingMode modes[] = {ChainingMode::Sequential};
  const auto cases = run_gradcheck(c, strategies, modes);
  ASSERT_EQ(cases.size(), 1u);
  EXPECT_EQ(cases[0].report.groups.size(), 4u);  // frozen groups are still checked
  EXPECT_LE(cases[0].report.max_rel_error(), 1e-6);
  EXPECT_TRUE(cases[0].freeze_respected);
}

// Parses attn_<s>.csv into (layer, head, query) -> key_group -> weight.
std::map<std::tuple<int, int, int>, std::map<std::string, double>> read_dump(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "layer,head,query,key_group,weight");
  std::map<std::tuple<int, int, int>, std::map<std::string, double>> out;
  while (std::getline(in, line)) {
    std::stringstream fields(line);
    std::string l, h, q, g, w;
    std::getline(fields, l, ',');
    std::getline(fields, h, ',');
    std::getline(fields, q, ',');
    std::getline(fields, g, ',');
    std::getline(fields, w, ',');
    out[{std::stoi(l), std::stoi(h), std::stoi(q)}][g] = std::stod(w);
  }
  return out;
}

TEST(AttnDump, GroupsVisualKeysAndConservesMass) {
  RunConfig c;
  c.finalize();
  const fs::path dir = scratch_dir("dump");
  const PositionalStrategy strategies[] = {PositionalStrategy::Edvt, PositionalStrategy::NoPos};
  const CommandResult r = cmd_attn_dump(c, 4, dir, strategies);
  EXPECT_EQ(r.exit_code, kExitPass) << r.report;
  const auto edvt = read_dump(dir / "attn_edvt.csv");
  const auto nopos = read_dump(dir / "attn_nopos.csv");
  // 64 frames x 2 query tokens = 128 visual tokens, 8 distractors + query.
  ASSERT_EQ(edvt.size(), 2u * 2u * (128u + 9u));
  for (const auto& [key, groups] : edvt) {
    double mass = 0.0;
    for (const auto& [name, w] : groups) mass += w;
    EXPECT_NEAR(mass, 1.0, 1e-9);
  }
  // Query 40 sees keys 0..40: all of group v0 (0..31) and part of v1.
  const auto& q40 = edvt.at({0, 0, 40});
  EXPECT_EQ(q40.size(), 2u);
  EXPECT_EQ(edvt.at({0, 0, 136}).size(), 4u + 9u);
  // Layer 0 visual queries see only visual keys, so no rotated logit is
  // reachable and Edvt matches NoPos there.
  for (int h = 0; h < 2; ++h) {
    for (int q = 0; q < 128; ++q) EXPECT_EQ(edvt.at({0, h, q}), nopos.at({0, h, q}));
  }
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 2; ++h) {
      const std::string pgm = slurp(dir / ("attn_edvt_l" + std::to_string(l) + "_h" + std::to_string(h) + ".pgm"));
      const std::string header = "P5\n13 137\n255\n";
      ASSERT_EQ(pgm.substr(0, header.size()), header);
      EXPECT_EQ(pgm.size(), header.size() + 13u * 137u);
    }
  }
  EXPECT_EQ(slurp(dir / "config.txt"), c.to_text());
  fs::remove_all(dir);
}

TEST(AttnDump, NonDivisibleGroupingRejected) {
  RunConfig c;
  c.finalize();
  const PositionalStrategy strategies[] = {PositionalStrategy::Edvt};
  EXPECT_THROW(cmd_attn_dump(c, 5, scratch_dir("dump_bad"), strategies), ArgumentError);
}

TEST(AttnDump, EdvtAndRopeAllShareTextKeyLogitsInFirstLayer) {
  RunConfig c;
  c.finalize();
  const harness::Setup s = build_setup(c);
  const Episode ep = sample_episode(s.spec, std::uint64_t{5}, 6);
  const MixedSequence seq = assemble(project_video(s.projector, ep.video, c.mode), ep.prompt_ids);
  const ModalityMask mask = seq.modality_mask();
  const AttentionTrace e = decoder_forward_traced(s.decoder, seq, PositionalStrategy::Edvt).layers[0];
  const AttentionTrace r = decoder_forward_traced(s.decoder, seq, PositionalStrategy::RopeAll).layers[0];
  bool visual_differs = false;
  for (std::size_t h = 0; h < e.heads(); ++h) {
    for (std::size_t j = 0; j < seq.size(); ++j) {
      for (std::size_t i = 0; i <= j; ++i) {
        if (!mask.is_visual(i)) {
          EXPECT_EQ(e.logits(h, j, i), r.logits(h, j, i));
        } else if (i != j && e.logits(h, j, i) != r.logits(h, j, i)) {
          visual_differs = true;
        }
      }
    }
  }
  EXPECT_TRUE(visual_differs);
}

TEST(Sweep, EdvtRowsFixedRopeRowsMove) {
  RunConfig c;
  c.finalize();
  const std::size_t lengths[] = {0, 8, 32, 64};
  const SweepResult r = run_sweep(c, lengths, kAllStrategies);
  EXPECT_TRUE(r.failures.empty());
  double rope_dev = 0.0;
  for (const SweepRow& row : r.rows) {
    if (row.strategy == PositionalStrategy::Edvt || row.strategy == PositionalStrategy::NoPos) {
      EXPECT_LE(row.max_dev, 1e-15);
    }
    if (row.strategy == PositionalStrategy::RopeAll && row.distractors == 64) rope_dev = std::max(rope_dev, row.max_dev);
  }
  EXPECT_GT(rope_dev, 1e-6);
  EXPECT_EQ(r.rows.size(), 5u * 4u * 2u);
  // Rerun is byte-identical.
  EXPECT_EQ(run_sweep(c, lengths, kAllStrategies).csv, r.csv);
}

TEST(Sweep, EdvtVisualMassShrinksWithDistractors) {
  RunConfig c;
  c.finalize();
  const std::size_t lengths[] = {0, 1, 2, 4, 16, 64};
  const PositionalStrategy strategies[] = {PositionalStrategy::Edvt};
  const SweepResult r = run_sweep(c, lengths, strategies);
  for (std::size_t i = 2; i < r.rows.size(); ++i) EXPECT_LT(r.rows[i].visual_mass, r.rows[i - 2].visual_mass);
}

TEST(Sweep, RejectsUnsortedLengths) {
  RunConfig c;
  c.finalize();
  const std::size_t lengths[] = {8, 0};
  const PositionalStrategy strategies[] = {PositionalStrategy::Edvt};
  EXPECT_THROW(run_sweep(c, lengths, strategies), ArgumentError);
}

TEST(TrainToy, ZeroLearningRateKeepsLossConstant) {
  RunConfig c = small_training_config();
  c.optimizer.lr = 0.0;
  const TrainResult r = train_toy(c, PositionalStrategy::Edvt);
  ASSERT_EQ(r.log.size(), 5u);
  for (const TrainLogEntry& e : r.log) EXPECT_NEAR(e.eval_loss, r.initial_eval_loss, 1e-12);
}

TEST(TrainToy, DeterministicAndWorkerCountInvariant) {
  RunConfig c = small_training_config();
  const TrainResult a = train_toy(c, PositionalStrategy::Edvt);
  c.workers = 2;
  const TrainResult b = train_toy(c, PositionalStrategy::Edvt);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].eval_loss, b.log[i].eval_loss);
    if (i > 0) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
  }
  EXPECT_LT(a.final_eval_loss, a.initial_eval_loss);
}

TEST(TrainToy, OnlyTrainableGroupsMove) {
  // With everything frozen, nothing trains even at a large learning rate.
  RunConfig c = small_training_config();
  c.set("freeze", "projector,decoder,embeddings,head");
  c.optimizer.lr = 1.0;
  const TrainResult r = train_toy(c, PositionalStrategy::Edvt);
  EXPECT_EQ(r.final_eval_loss, r.initial_eval_loss);
}

TEST(TrainToy, PerStrategyFilesAndReport) {
  RunConfig c = small_training_config();
  c.set("strategy", "edvt,rope");
  const fs::path dir = scratch_dir("train");
  const CommandResult r = cmd_train_toy(c, dir);
  EXPECT_EQ(r.exit_code, kExitPass) << r.report;
  EXPECT_TRUE(fs::exists(dir / "metrics_edvt_independent.csv"));
  EXPECT_TRUE(fs::exists(dir / "metrics_rope_independent.csv"));
  const std::string report = slurp(dir / "report_independent.csv");
  EXPECT_EQ(report.substr(0, report.find('\n')),
            "strategy,mode,initial_eval_loss,final_eval_loss,ratio,acc_d0,acc_d8,acc_d32,acc_d64,"
            "loss_d0,loss_d8,loss_d32,loss_d64");
  fs::remove_all(dir);
}

TEST(TrainToy, DivergenceReported) {
  RunConfig c = small_training_config();
  c.optimizer.kind = OptimizerKind::Sgd;
  c.optimizer.lr = 1e300;
  const fs::path dir = scratch_dir("diverge");
  EXPECT_EQ(cmd_train_toy(c, dir).exit_code, kExitDivergence);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace vidattn::harness
