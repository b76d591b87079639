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

#include "macrid/tensor.hpp"

namespace macrid {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment accumulators, one pair per parameter tensor.
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<TensorD> m;
  std::vector<TensorD> v;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}

  // Drops row `row` from the accumulators of tensor `tensor` (used when a
  // concept prototype is removed mid-training).
  void erase_row(std::size_t tensor, std::size_t row);
};

// One Adam step with bias correction. Parameters move against the gradient,
// so `grads` must be gradients of a loss to be minimized.
void adam_update(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
                 AdamState& state);

}  // namespace macrid
