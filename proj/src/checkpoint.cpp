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

#include "vidattn/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "vidattn/errors.hpp"

namespace vidattn {
namespace {

constexpr const char* kMagic = "vidattn-checkpoint";
constexpr int kVersion = 1;

[[noreturn]] void malformed(const std::string& what) {
  throw ArgumentError("checkpoint: " + what);
}

}  // namespace

void write_checkpoint(std::ostream& out, const NamedTensors& tensors) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "count " << tensors.size() << '\n';
  char buffer[64];
  for (const auto& [name, tensor] : tensors) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      malformed("invalid tensor name '" + name + "'");
    }
    out << "tensor " << name << ' ' << tensor.rank();
    for (std::size_t extent : tensor.shape()) out << ' ' << extent;
    out << '\n';
    bool first = true;
    for (double v : tensor.data()) {
      std::snprintf(buffer, sizeof(buffer), "%a", v);
      if (!first) out << ' ';
      out << buffer;
      first = false;
    }
    out << '\n';
  }
  out << "end\n";
}

NamedTensors read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic) malformed("missing header");
  if (version != kVersion) malformed("unsupported version " + std::to_string(version));
  std::string keyword;
  std::size_t count = 0;
  if (!(in >> keyword >> count) || keyword != "count") malformed("missing count");
  NamedTensors tensors;
  for (std::size_t t = 0; t < count; ++t) {
    std::string name;
    std::size_t rank = 0;
    if (!(in >> keyword >> name >> rank) || keyword != "tensor") malformed("bad tensor record");
    Shape shape(rank);
    std::size_t total = 1;
    for (std::size_t& extent : shape) {
      if (!(in >> extent)) malformed("bad shape for " + name);
      total *= extent;
    }
    std::vector<double> data(total);
    std::string token;
    for (double& v : data) {
      if (!(in >> token)) malformed("truncated values for " + name);
      char* end = nullptr;
      v = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') malformed("bad value '" + token + "'");
    }
    tensors.emplace_back(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!(in >> keyword) || keyword != "end") malformed("missing end marker");
  return tensors;
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("checkpoint: cannot open " + path + " for writing");
  write_checkpoint(out, tensors);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("checkpoint: cannot open " + path);
  return read_checkpoint(in);
}

void load_into(const NamedTensors& tensors, const std::vector<NamedParam>& params) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, tensor] : tensors) {
    if (!by_name.emplace(name, &tensor).second) malformed("duplicate tensor " + name);
  }
  if (by_name.size() != params.size()) {
    malformed("holds " + std::to_string(by_name.size()) + " tensors, model expects " +
              std::to_string(params.size()));
  }
  for (const NamedParam& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) malformed("missing tensor " + p.name);
    if (it->second->shape() != p.tensor->shape()) {
      malformed(p.name + " has shape " + shape_string(it->second->shape()) + ", expected " +
                shape_string(p.tensor->shape()));
    }
    *p.tensor = *it->second;
  }
}

}  // namespace vidattn
