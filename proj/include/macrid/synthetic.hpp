// Copyright 2026 The Macrid Authors.
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

#include <cstddef>
#include <cstdint>
#include <vector>

#include "macrid/corpus.hpp"

namespace macrid {

struct SyntheticOptions {
  std::size_t n_users = 600;
  std::size_t n_concepts = 3;
  std::size_t items_per_concept = 30;
  std::size_t concepts_per_user = 2;
  std::size_t min_items = 10;
  std::size_t max_items = 20;
  // Width of the per-user attribute preference kernel; items carry a 2-D
  // attribute in [0,1]^2 and users favour items near a preferred point.
  double preference_width = 0.15;
};

struct SyntheticCorpus {
  InteractionMatrix matrix;
  std::vector<std::size_t> labels;  // ground-truth concept per item
};

// Users adopt items from `concepts_per_user` randomly chosen concepts; within
// a concept, items are drawn without replacement with weight
// exp(-|a_i - p_u|^2 / (2 w^2)) for the user's preferred attribute point p_u.
SyntheticCorpus make_synthetic(const SyntheticOptions& opts, std::uint64_t seed);

}  // namespace macrid
