# Copyright 2026 The vidattn Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Mixed visual/text attention with pluggable rotary strategies."""

from vidattn._vidattn import (
    AttentionParams,
    ConfigError,
    Model,
    NumericalError,
    RotaryTable,
    apply_rotary,
    attention_forward,
    merge_logits,
    strategies,
    subsample_tokens,
    sweep,
)

__all__ = [
    "AttentionParams",
    "ConfigError",
    "Model",
    "NumericalError",
    "RotaryTable",
    "apply_rotary",
    "attention_forward",
    "merge_logits",
    "strategies",
    "subsample_tokens",
    "sweep",
]
