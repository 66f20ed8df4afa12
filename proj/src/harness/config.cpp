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

#include "vidattn/harness/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace vidattn::harness {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t to_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" +
                      value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <class T, class F>
std::string join(const std::vector<T>& items, F format) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i != 0) out += ',';
    out += format(items[i]);
  }
  return out;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(text)) out.push_back(to_size("list", item));
  return out;
}

std::vector<PositionalStrategy> parse_strategy_list(const std::string& text) {
  std::vector<PositionalStrategy> out;
  for (const std::string& item : split_list(text)) {
    if (item == "all") {
      out.assign(kAllStrategies.begin(), kAllStrategies.end());
      continue;
    }
    const auto s = parse_strategy(item);
    if (!s) {
      throw ConfigError("unknown strategy '" + item +
                        "' (expected nopos, rope, edvt, fixvpe, rope-edvt or all)");
    }
    out.push_back(*s);
  }
  if (out.empty()) throw ConfigError("strategy list is empty");
  return out;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "seed") seed = to_size(key, value);
  else if (key == "classes") task.classes = to_size(key, value);
  else if (key == "feat_dim") task.feat_dim = to_size(key, value);
  else if (key == "frame_len") task.frame_len = to_size(key, value);
  else if (key == "frames") task.frames = to_size(key, value);
  else if (key == "noise") task.noise = to_double(key, value);
  else if (key == "distractor_vocab") task.distractor_vocab = to_size(key, value);
  else if (key == "distractor_lengths") distractor_lengths = parse_size_list(value);
  else if (key == "heads") decoder.heads = to_size(key, value);
  else if (key == "head_dim") decoder.head_dim = to_size(key, value);
  else if (key == "layers") decoder.layers = to_size(key, value);
  else if (key == "ffn_dim") decoder.ffn_dim = to_size(key, value);
  else if (key == "max_positions") decoder.max_positions = to_size(key, value);
  else if (key == "rope_base") decoder.rope_base = to_double(key, value);
  else if (key == "tie_head") decoder.tie_head = to_bool(key, value);
  else if (key == "decoder_init_scale") decoder.init_scale = to_double(key, value);
  else if (key == "embed_scale") decoder.embed_scale = to_double(key, value);
  else if (key == "head_scale") decoder.head_scale = to_double(key, value);
  else if (key == "query_tokens") projector.query_tokens = to_size(key, value);
  else if (key == "proj_dim") projector.proj_dim = to_size(key, value);
  else if (key == "proj_ffn_dim") projector.ffn_dim = to_size(key, value);
  else if (key == "proj_blocks") projector.blocks = to_size(key, value);
  else if (key == "proj_init_scale") projector.init_scale = to_double(key, value);
  else if (key == "strategy") strategies = parse_strategy_list(value);
  else if (key == "mode") {
    const auto m = parse_mode(value);
    if (!m) throw ConfigError("config key 'mode': expected independent or sequential, got '" + value + "'");
    mode = *m;
  } else if (key == "freeze") {
    frozen.clear();
    if (value != "none") {
      for (const std::string& item : split_list(value)) {
        const auto g = parse_group(item);
        if (!g) throw ConfigError("config key 'freeze': unknown group '" + item + "'");
        frozen.insert(*g);
      }
    }
  } else if (key == "optimizer") {
    if (value == "adam") optimizer.kind = OptimizerKind::Adam;
    else if (value == "sgd") optimizer.kind = OptimizerKind::Sgd;
    else throw ConfigError("config key 'optimizer': expected adam or sgd, got '" + value + "'");
  } else if (key == "lr") optimizer.lr = to_double(key, value);
  else if (key == "beta1") optimizer.beta1 = to_double(key, value);
  else if (key == "beta2") optimizer.beta2 = to_double(key, value);
  else if (key == "adam_eps") optimizer.eps = to_double(key, value);
  else if (key == "steps") steps = to_size(key, value);
  else if (key == "batch") batch = to_size(key, value);
  else if (key == "log_every") log_every = to_size(key, value);
  else if (key == "eval_episodes") eval_episodes = to_size(key, value);
  else if (key == "workers") workers = to_size(key, value);
  else if (key == "merge_visual") merge_visual = to_size(key, value);
  else if (key == "dump_frames") dump_frames = to_size(key, value);
  else if (key == "dump_distractors") dump_distractors = to_size(key, value);
  else if (key == "gradcheck_coords") gradcheck_coords = to_size(key, value);
  else if (key == "gradcheck_distractors") gradcheck_distractors = to_size(key, value);
  else if (key == "gradcheck_h") gradcheck_h = to_double(key, value);
  else if (key == "gradcheck_tol") gradcheck_tol = to_double(key, value);
  else if (key == "out_dir") out_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::finalize() {
  TaskSpec probe;
  probe.config = task;
  decoder.vocab = probe.vocab_size();
  projector.feat_dim = task.feat_dim;
  projector.model_dim = decoder.model_dim();
  try {
    task.validate();
    decoder.validate();
    projector.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (distractor_lengths.empty()) throw ConfigError("config key 'distractor_lengths': empty list");
  if (!std::is_sorted(distractor_lengths.begin(), distractor_lengths.end())) {
    throw ConfigError("config key 'distractor_lengths': must be sorted ascending");
  }
  if (batch == 0) throw ConfigError("config key 'batch': must be >= 1");
  if (log_every == 0) throw ConfigError("config key 'log_every': must be >= 1");
  if (eval_episodes == 0) throw ConfigError("config key 'eval_episodes': must be >= 1");
  if (workers == 0) throw ConfigError("config key 'workers': must be >= 1");
  if (merge_visual == 0) throw ConfigError("config key 'merge_visual': must be >= 1");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("config key 'lr': must be >= 0");
  if (!(gradcheck_h > 0.0)) throw ConfigError("config key 'gradcheck_h': must be > 0");
}

std::string RunConfig::to_text() const {
  auto size_str = [](std::size_t v) { return std::to_string(v); };
  std::vector<std::pair<std::string, std::string>> kv = {
      {"seed", std::to_string(seed)},
      {"classes", size_str(task.classes)},
      {"feat_dim", size_str(task.feat_dim)},
      {"frame_len", size_str(task.frame_len)},
      {"frames", size_str(task.frames)},
      {"noise", format_double(task.noise)},
      {"distractor_vocab", size_str(task.distractor_vocab)},
      {"distractor_lengths", join(distractor_lengths, size_str)},
      {"heads", size_str(decoder.heads)},
      {"head_dim", size_str(decoder.head_dim)},
      {"layers", size_str(decoder.layers)},
      {"ffn_dim", size_str(decoder.ffn_dim)},
      {"max_positions", size_str(decoder.max_positions)},
      {"rope_base", format_double(decoder.rope_base)},
      {"tie_head", decoder.tie_head ? "true" : "false"},
      {"decoder_init_scale", format_double(decoder.init_scale)},
      {"embed_scale", format_double(decoder.embed_scale)},
      {"head_scale", format_double(decoder.head_scale)},
      {"query_tokens", size_str(projector.query_tokens)},
      {"proj_dim", size_str(projector.proj_dim)},
      {"proj_ffn_dim", size_str(projector.ffn_dim)},
      {"proj_blocks", size_str(projector.blocks)},
      {"proj_init_scale", format_double(projector.init_scale)},
      {"strategy", join(strategies, [](PositionalStrategy s) { return std::string(strategy_name(s)); })},
      {"mode", std::string(mode_name(mode))},
      {"freeze", frozen.empty() ? "none"
                                : join(std::vector<ParamGroup>(frozen.begin(), frozen.end()),
                                       [](ParamGroup g) { return std::string(group_name(g)); })},
      {"optimizer", optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd"},
      {"lr", format_double(optimizer.lr)},
      {"beta1", format_double(optimizer.beta1)},
      {"beta2", format_double(optimizer.beta2)},
      {"adam_eps", format_double(optimizer.eps)},
      {"steps", size_str(steps)},
      {"batch", size_str(batch)},
      {"log_every", size_str(log_every)},
      {"eval_episodes", size_str(eval_episodes)},
      {"workers", size_str(workers)},
      {"merge_visual", size_str(merge_visual)},
      {"dump_frames", size_str(dump_frames)},
      {"dump_distractors", size_str(dump_distractors)},
      {"gradcheck_coords", size_str(gradcheck_coords)},
      {"gradcheck_distractors", size_str(gradcheck_distractors)},
      {"gradcheck_h", format_double(gradcheck_h)},
      {"gradcheck_tol", format_double(gradcheck_tol)},
      {"out_dir", out_dir},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

}  // namespace vidattn::harness
