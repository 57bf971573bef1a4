// Copyright 2026 The DPLM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPLM_CHECKPOINT_H_
#define DPLM_CHECKPOINT_H_

#include <string>

#include "dplm/model.h"

namespace dplm {

// Single-file checkpoint: magic, JSON header (config + tensor manifest),
// then the named tensors as little-endian 64-bit floats in canonical order.
void SaveCheckpoint(const std::string& path, const ModelParams& params);
ModelParams LoadCheckpoint(const std::string& path);

}  // namespace dplm

#endif  // DPLM_CHECKPOINT_H_
