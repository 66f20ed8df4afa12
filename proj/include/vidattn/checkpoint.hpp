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

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "vidattn/params.hpp"
#include "vidattn/tensor.hpp"

namespace vidattn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Text container, version 1:
//
//   vidattn-checkpoint 1
//   count <N>
//   tensor <name> <rank> <extent>...
//   <values as C99 hex floats, space separated, one line>
//   ... (N tensor records)
//   end
//
// Hex floats make the round trip bit-exact. Names contain no whitespace.
void write_checkpoint(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

// Copies every named tensor into the matching parameter. Missing names,
// unknown names and shape mismatches throw.
void load_into(const NamedTensors& tensors, const std::vector<NamedParam>& params);

}  // namespace vidattn
