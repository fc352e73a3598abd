// Copyright 2026 The zsdistill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Umbrella header.

#include "zsd/checkpoint.hpp"
#include "zsd/common.hpp"
#include "zsd/config.hpp"
#include "zsd/eval.hpp"
#include "zsd/experiment.hpp"
#include "zsd/gradcheck.hpp"
#include "zsd/losses.hpp"
#include "zsd/models.hpp"
#include "zsd/optim.hpp"
#include "zsd/prompts.hpp"
#include "zsd/report.hpp"
#include "zsd/tensor.hpp"
#include "zsd/train.hpp"
#include "zsd/world.hpp"
