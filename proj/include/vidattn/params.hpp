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

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vidattn/tensor.hpp"

namespace vidattn {

// Groups that can be frozen independently during training.
enum class ParamGroup { Projector, Decoder, Embeddings, Head };

std::string_view group_name(ParamGroup group);
std::optional<ParamGroup> parse_group(std::string_view name);

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor* tensor;
};

}  // namespace vidattn
