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

#include "vidattn/harness/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"

namespace vidattn::harness {
namespace {

std::string full_precision(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

// Calls fn(i) for i in [0, n) on up to `workers` threads. Each index writes
// only its own slot, so the merged result does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

ParamRegistry full_registry(Setup& setup) {
  ParamRegistry registry;
  registry.add_all(projector_parameters(setup.projector));
  registry.add_all(decoder_parameters(setup.decoder));
  return registry;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << text;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ArgumentError("cannot create directory " + dir.string() + ": " + ec.message());
}

struct EpisodeGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

EpisodeGradient episode_gradient(const Setup& setup, const ParamRegistry& registry,
                                 const Episode& ep, ChainingMode mode,
                                 PositionalStrategy strategy) {
  ad::Tape tape;
  const ad::Var loss =
      ad::episode_loss(tape, setup.decoder, setup.projector, setup.spec, ep, mode, strategy);
  return {loss.value().item(), gather_gradients(registry, tape.backward(loss))};
}

double mean_loss(const Setup& setup, const std::vector<Episode>& episodes, ChainingMode mode,
                 PositionalStrategy strategy, std::size_t workers) {
  std::vector<double> losses(episodes.size());
  parallel_for(episodes.size(), workers, [&](std::size_t i) {
    losses[i] = episode_loss(setup.decoder, setup.projector, setup.spec, episodes[i], mode, strategy);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(episodes.size());
}

}  // namespace

std::string format_number(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

// ---------------------------------------------------------------- gradcheck

std::vector<GradcheckCase> run_gradcheck(const RunConfig& config,
                                         std::span<const PositionalStrategy> strategies,
                                         std::span<const ChainingMode> modes) {
  std::vector<GradcheckCase> cases;
  for (PositionalStrategy strategy : strategies) {
    for (ChainingMode mode : modes) {
      Setup setup = build_setup(config);
      ParamRegistry registry = full_registry(setup);
      std::vector<Episode> episodes;
      for (std::uint64_t i = 0; i < 2; ++i) {
        episodes.push_back(sample_episode(setup.spec, derive_seed(config.seed, 200 + i),
                                          config.gradcheck_distractors));
      }
      std::vector<Tensor> analytic;
      for (const auto& e : registry.entries()) analytic.emplace_back(e.tensor->shape());
      for (const Episode& ep : episodes) {
        const EpisodeGradient g = episode_gradient(setup, registry, ep, mode, strategy);
        for (std::size_t p = 0; p < analytic.size(); ++p) {
          analytic[p] = add(analytic[p], scale(g.grads[p], 1.0 / static_cast<double>(episodes.size())));
        }
      }
      auto loss = [&] { return mean_loss(setup, episodes, mode, strategy, 1); };
      GradCheckOptions options;
      options.h = config.gradcheck_h;
      options.coords_per_group = config.gradcheck_coords;
      options.seed = derive_seed(config.seed, 300);
      GradcheckCase result{strategy, mode, fd_gradcheck(loss, registry, analytic, options), false};

      // Follow-up step: frozen groups must come out bit-identical.
      for (ParamGroup g : config.frozen) registry.set_frozen(g, true);
      std::vector<Tensor> before;
      for (const auto& e : registry.entries()) before.push_back(*e.tensor);
      Optimizer optimizer(OptimizerConfig{OptimizerKind::Sgd, 1e-2}, registry);
      optimizer.step(registry, analytic);
      bool respected = true;
      for (std::size_t p = 0; p < before.size(); ++p) {
        const auto& e = registry.entries()[p];
        if (registry.is_frozen(e.group) && !e.tensor->identical(before[p])) respected = false;
      }
      result.freeze_respected = respected;
      cases.push_back(std::move(result));
    }
  }
  return cases;
}

CommandResult cmd_gradcheck(const RunConfig& config,
                            std::span<const PositionalStrategy> strategies,
                            std::span<const ChainingMode> modes) {
  const auto cases = run_gradcheck(config, strategies, modes);
  std::ostringstream report;
  bool ok = true;
  for (const GradcheckCase& c : cases) {
    const std::string label = std::string(strategy_name(c.strategy)) + "/" + std::string(mode_name(c.mode));
    for (const GroupCheck& g : c.report.groups) {
      const bool pass = g.max_rel_error <= config.gradcheck_tol;
      ok = ok && pass;
      report << (pass ? "[PASS] " : "[FAIL] ") << label << ' ' << group_name(g.group)
             << " checked=" << g.checked << " max_rel=" << format_number(g.max_rel_error)
             << " worst=" << g.worst_param << '[' << g.worst_index << "]\n";
    }
    ok = ok && c.freeze_respected;
    report << (c.freeze_respected ? "[PASS] " : "[FAIL] ") << label << " frozen groups unchanged by step\n";
  }
  return {ok ? kExitPass : kExitCheckFailure, report.str()};
}

// ---------------------------------------------------------------- attn-dump

CommandResult cmd_attn_dump(const RunConfig& config, std::size_t merge_groups,
                            const std::filesystem::path& out_dir,
                            std::span<const PositionalStrategy> strategies) {
  const Setup setup = build_setup(config);
  TaskSpec spec = setup.spec;
  spec.config.frames = config.dump_frames;
  const Episode ep = sample_episode(spec, derive_seed(config.seed, 102), config.dump_distractors);
  const Tensor visual = project_video(setup.projector, ep.video, config.mode);
  const std::size_t m = visual.dim(0) * visual.dim(1);
  if (merge_groups == 0 || m % merge_groups != 0) {
    throw ArgumentError("attn-dump: " + std::to_string(merge_groups) + " groups do not divide " +
                        std::to_string(m) + " visual tokens");
  }
  const std::size_t per_group = m / merge_groups;
  const MixedSequence seq = assemble(visual, ep.prompt_ids);
  const std::size_t n = seq.size();
  const std::size_t columns = merge_groups + (n - m);

  ensure_dir(out_dir);
  write_file(out_dir / "config.txt", config.to_text());
  std::ostringstream report;
  double worst_mass = 0.0;
  for (PositionalStrategy strategy : strategies) {
    const std::string name(strategy_name(strategy));
    const DecoderOutput out = decoder_forward_traced(setup.decoder, seq, strategy);
    std::ostringstream csv;
    csv << "layer,head,query,key_group,weight\n";
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      const Tensor& w = out.layers[l].weights;
      for (std::size_t h = 0; h < w.dim(0); ++h) {
        std::string pixels(n * columns, '\0');
        for (std::size_t j = 0; j < n; ++j) {
          std::vector<double> grouped(columns, 0.0);
          for (std::size_t i = 0; i <= j; ++i) {
            const std::size_t col = i < m ? i / per_group : merge_groups + (i - m);
            grouped[col] += w(h, j, i);
          }
          double mass = 0.0;
          for (std::size_t c = 0; c < columns; ++c) {
            mass += grouped[c];
            const bool reachable = c < merge_groups ? c * per_group <= j : m + (c - merge_groups) <= j;
            if (reachable) {
              csv << l << ',' << h << ',' << j << ','
                  << (c < merge_groups ? "v" + std::to_string(c) : "t" + std::to_string(c - merge_groups))
                  << ',' << full_precision(grouped[c]) << '\n';
            }
            const double shade = std::clamp(grouped[c], 0.0, 1.0) * 255.0;
            pixels[j * columns + c] = static_cast<char>(static_cast<unsigned char>(std::lround(shade)));
          }
          worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
        }
        std::ostringstream pgm;
        pgm << "P5\n" << columns << ' ' << n << "\n255\n" << pixels;
        write_file(out_dir / ("attn_" + name + "_l" + std::to_string(l) + "_h" + std::to_string(h) + ".pgm"),
                   pgm.str());
      }
    }
    write_file(out_dir / ("attn_" + name + ".csv"), csv.str());
    report << "wrote attn_" << name << ".csv (" << out.layers.size() << " layers, " << m
           << " visual tokens in " << merge_groups << " groups, " << n - m << " text tokens)\n";
  }
  const bool ok = worst_mass <= 1e-9;
  report << (ok ? "[PASS] " : "[FAIL] ") << "grouped mass per query max_dev=" << format_number(worst_mass)
         << '\n';
  return {ok ? kExitPass : kExitCheckFailure, report.str()};
}

// -------------------------------------------------------------------- sweep

SweepResult run_sweep(const RunConfig& config, std::span<const std::size_t> lengths,
                      std::span<const PositionalStrategy> strategies) {
  if (lengths.empty()) throw ArgumentError("sweep: no distractor lengths");
  if (!std::is_sorted(lengths.begin(), lengths.end())) {
    throw ArgumentError("sweep: distractor lengths must be sorted");
  }
  const Setup setup = build_setup(config);
  const Episode ep = sample_episode(setup.spec, derive_seed(config.seed, 100), 0);
  const Tensor visual = project_video(setup.projector, ep.video, config.mode);
  const std::size_t m = visual.dim(0) * visual.dim(1);
  SeededRng distractor_rng(derive_seed(config.seed, 101));
  std::vector<std::size_t> pool(lengths.back());
  for (auto& id : pool) {
    id = setup.spec.distractor_begin() + distractor_rng.uniform_index(setup.spec.config.distractor_vocab);
  }

  SweepResult result;
  for (PositionalStrategy strategy : strategies) {
    const std::string name(strategy_name(strategy));
    std::vector<std::vector<double>> first_rows;
    std::vector<double> previous_mass;
    for (std::size_t li = 0; li < lengths.size(); ++li) {
      const std::size_t d = lengths[li];
      std::vector<std::size_t> prompt(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(d));
      prompt.push_back(setup.spec.query_id());
      const MixedSequence seq = assemble(visual, prompt);
      const ModalityMask mask = seq.modality_mask();
      const DecoderOutput out = decoder_forward_traced(setup.decoder, seq, strategy);
      const AttentionTrace& trace = out.layers.front();
      const std::size_t q = seq.size() - 1;
      std::vector<double> masses;
      for (std::size_t h = 0; h < trace.heads(); ++h) {
        SweepRow row{strategy, d, h, 0.0, 0.0, visual_logit_row(trace, q, mask, h)};
        for (std::size_t i = 0; i < m; ++i) row.visual_mass += trace.weights(h, q, i);
        if (li == 0) first_rows.push_back(row.logits);
        for (std::size_t i = 0; i < m; ++i) {
          row.max_dev = std::max(row.max_dev, std::abs(row.logits[i] - first_rows[h][i]));
        }
        masses.push_back(row.visual_mass);
        result.rows.push_back(std::move(row));
      }
      const std::size_t heads = trace.heads();
      const bool invariant_logits =
          strategy == PositionalStrategy::Edvt || strategy == PositionalStrategy::NoPos;
      for (std::size_t h = 0; h < heads; ++h) {
        const SweepRow& row = result.rows[result.rows.size() - heads + h];
        if (strategy == PositionalStrategy::Edvt && row.max_dev > 1e-15) {
          result.failures.push_back(name + " D=" + std::to_string(d) + " head " + std::to_string(h) +
                                    ": visual logits moved by " + format_number(row.max_dev));
        }
        if (invariant_logits && li > 0 && d > lengths[li - 1] && !(masses[h] < previous_mass[h])) {
          result.failures.push_back(name + " D=" + std::to_string(d) + " head " + std::to_string(h) +
                                    ": visual mass did not decrease");
        }
      }
      previous_mass = masses;
    }
    if (strategy == PositionalStrategy::RopeAll && lengths.back() > lengths.front()) {
      double dev = 0.0;
      for (std::size_t h = 0; h < first_rows.size(); ++h) {
        dev = std::max(dev, result.rows[result.rows.size() - first_rows.size() + h].max_dev);
      }
      if (!(dev > 1e-6)) {
        result.failures.push_back(name + ": visual logits insensitive to distractors (" +
                                  format_number(dev) + ")");
      }
    }
  }

  std::ostringstream csv;
  csv << "strategy,distractors,head,visual_mass,max_dev_vs_first";
  for (std::size_t i = 0; i < m; ++i) csv << ",logit_" << i;
  csv << '\n';
  for (const SweepRow& row : result.rows) {
    csv << strategy_name(row.strategy) << ',' << row.distractors << ',' << row.head << ','
        << full_precision(row.visual_mass) << ',' << full_precision(row.max_dev);
    for (double v : row.logits) csv << ',' << full_precision(v);
    csv << '\n';
  }
  result.csv = csv.str();
  return result;
}

CommandResult cmd_sweep(const RunConfig& config, std::span<const std::size_t> lengths,
                        std::span<const PositionalStrategy> strategies,
                        const std::optional<std::filesystem::path>& out_file) {
  const SweepResult result = run_sweep(config, lengths, strategies);
  std::ostringstream report;
  if (out_file) {
    if (out_file->has_parent_path()) ensure_dir(out_file->parent_path());
    write_file(*out_file, result.csv);
    write_file(out_file->parent_path() / "config.txt", config.to_text());
  } else {
    report << result.csv;
  }
  for (const std::string& f : result.failures) report << "[FAIL] " << f << '\n';
  if (result.failures.empty()) report << "[PASS] sweep assertions\n";
  return {result.failures.empty() ? kExitPass : kExitCheckFailure, report.str()};
}

// ---------------------------------------------------------------- train-toy

TrainResult train_toy(const RunConfig& config, PositionalStrategy strategy) {
  Setup setup = build_setup(config);
  ParamRegistry registry = full_registry(setup);
  for (ParamGroup g : config.frozen) registry.set_frozen(g, true);
  Optimizer optimizer(config.optimizer, registry);
  const auto& lengths = config.distractor_lengths;
  if (lengths.empty()) throw ArgumentError("train-toy: no distractor lengths");

  // Held-out set, grouped by length.
  const std::uint64_t eval_seed = derive_seed(config.seed, 500);
  std::vector<Episode> eval_set;
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    for (std::size_t e = 0; e < config.eval_episodes; ++e) {
      eval_set.push_back(sample_episode(setup.spec, derive_seed(eval_seed, li * config.eval_episodes + e),
                                        lengths[li]));
    }
  }
  auto evaluate = [&] { return mean_loss(setup, eval_set, config.mode, strategy, config.workers); };

  TrainResult result;
  result.strategy = strategy;
  result.initial_eval_loss = evaluate();
  result.log.push_back({0, NAN, result.initial_eval_loss});
  const std::uint64_t data_seed = derive_seed(config.seed, 400);
  double window_loss = 0.0;
  std::size_t window_steps = 0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    SeededRng step_rng(derive_seed(data_seed, step));
    std::vector<Episode> batch;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const std::size_t d = lengths[step_rng.uniform_index(lengths.size())];
      batch.push_back(sample_episode(setup.spec, step_rng.next_u64(), d));
    }
    std::vector<EpisodeGradient> grads(batch.size());
    parallel_for(batch.size(), config.workers, [&](std::size_t i) {
      grads[i] = episode_gradient(setup, registry, batch[i], config.mode, strategy);
    });
    std::vector<Tensor> mean = grads.front().grads;
    double loss = grads.front().loss;
    for (std::size_t i = 1; i < grads.size(); ++i) {
      for (std::size_t p = 0; p < mean.size(); ++p) mean[p] = add(mean[p], grads[i].grads[p]);
      loss += grads[i].loss;
    }
    const double inv = 1.0 / static_cast<double>(grads.size());
    for (Tensor& t : mean) t = scale(t, inv);
    loss *= inv;
    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.log.push_back({step, loss, NAN});
      break;
    }
    optimizer.step(registry, mean);
    window_loss += loss;
    ++window_steps;
    if (step % config.log_every == 0 || step == config.steps) {
      const double eval = evaluate();
      result.log.push_back({step, window_loss / static_cast<double>(window_steps), eval});
      window_loss = 0.0;
      window_steps = 0;
      if (!std::isfinite(eval)) {
        result.diverged = true;
        break;
      }
    }
  }
  result.final_eval_loss = result.log.back().eval_loss;

  std::vector<int> correct(eval_set.size());
  std::vector<double> losses(eval_set.size());
  parallel_for(eval_set.size(), config.workers, [&](std::size_t i) {
    const auto logits = episode_answer_logits(setup.decoder, setup.projector, setup.spec, eval_set[i],
                                              config.mode, strategy);
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    correct[i] = static_cast<std::size_t>(best) == eval_set[i].label ? 1 : 0;
    losses[i] = episode_loss(setup.decoder, setup.projector, setup.spec, eval_set[i], config.mode, strategy);
  });
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    double acc = 0.0, loss = 0.0;
    for (std::size_t e = 0; e < config.eval_episodes; ++e) {
      acc += correct[li * config.eval_episodes + e];
      loss += losses[li * config.eval_episodes + e];
    }
    result.accuracy_by_length.push_back(acc / static_cast<double>(config.eval_episodes));
    result.loss_by_length.push_back(loss / static_cast<double>(config.eval_episodes));
  }
  return result;
}

CommandResult cmd_train_toy(const RunConfig& config, const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  write_file(out_dir / "config.txt", config.to_text());
  const std::string mode(mode_name(config.mode));
  std::ostringstream summary;
  summary << "strategy,mode,initial_eval_loss,final_eval_loss,ratio";
  for (std::size_t d : config.distractor_lengths) summary << ",acc_d" << d;
  for (std::size_t d : config.distractor_lengths) summary << ",loss_d" << d;
  summary << '\n';
  std::ostringstream report;
  bool diverged = false;
  for (PositionalStrategy strategy : config.strategies) {
    const TrainResult r = train_toy(config, strategy);
    const std::string name(strategy_name(strategy));
    std::ostringstream metrics;
    metrics << "step,train_loss,eval_loss\n";
    for (const TrainLogEntry& e : r.log) {
      metrics << e.step << ',' << full_precision(e.train_loss) << ',' << full_precision(e.eval_loss) << '\n';
    }
    write_file(out_dir / ("metrics_" + name + "_" + mode + ".csv"), metrics.str());
    const double ratio = r.final_eval_loss / r.initial_eval_loss;
    summary << name << ',' << mode << ',' << full_precision(r.initial_eval_loss) << ','
            << full_precision(r.final_eval_loss) << ',' << full_precision(ratio);
    for (double a : r.accuracy_by_length) summary << ',' << full_precision(a);
    for (double l : r.loss_by_length) summary << ',' << full_precision(l);
    summary << '\n';
    report << name << '/' << mode << ": eval loss " << format_number(r.initial_eval_loss) << " -> "
           << format_number(r.final_eval_loss) << " (ratio " << format_number(ratio) << ")";
    for (std::size_t li = 0; li < r.accuracy_by_length.size(); ++li) {
      report << " acc@" << config.distractor_lengths[li] << '=' << format_number(r.accuracy_by_length[li]);
    }
    report << (r.diverged ? " DIVERGED\n" : "\n");
    diverged = diverged || r.diverged;
  }
  write_file(out_dir / ("report_" + mode + ".csv"), summary.str());
  return {diverged ? kExitDivergence : kExitPass, report.str()};
}

}  // namespace vidattn::harness
