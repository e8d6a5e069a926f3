// Copyright 2026 The flowforge Authors
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

#ifndef FLOWFORGE_FLOWFORGE_HPP
#define FLOWFORGE_FLOWFORGE_HPP

#include "flowforge/common.hpp"
#include "flowforge/density.hpp"
#include "flowforge/transport.hpp"
#include "flowforge/velocity.hpp"
#include "flowforge/flow.hpp"
#include "flowforge/objective.hpp"
#include "flowforge/metrics.hpp"
#include "flowforge/io.hpp"

#endif  // FLOWFORGE_FLOWFORGE_HPP
