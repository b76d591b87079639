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

// Controllable recommendation: take an anchor vector in item space, find
// the interval over which one coordinate can move without changing the
// anchor's nearest prototype, split that interval into B subranges holding
// equal numbers of the concept's items, and pick one item per subrange by
// beam search so the sequence stays close to the anchor and to itself on the
// remaining coordinates.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "macrid/model.hpp"

namespace macrid {

struct ProbeResult {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t k_star = 0;
  double bound = 0.0;  // R
  bool lower_clamped = false;
  bool upper_clamped = false;
};

// Nearest prototype of h_star by cosine, lowest index on ties.
std::size_t nearest_prototype(std::span<const double> h, const ModelParams& params);

// Range of h_star[j] over which nearest_prototype stays k_star. Each
// endpoint is located by bisection to `tol` within [-R, R] with
// R = 10 * max_i |h_ij| (widened to |h_star[j]| if that is larger); the
// returned endpoints are the last points found inside the range.
ProbeResult probe_range(std::span<const double> h_star, std::size_t j,
                        const ModelParams& params, double tol = 1e-4);

// Items assigned to concept k by the infer-mode (hard) assignment.
std::vector<Index> concept_items(const ModelParams& params, std::size_t k);

struct Partition {
  std::vector<double> boundaries;         // a_0 = lower, ..., a_B = upper
  std::vector<std::vector<Index>> bins;   // items per subrange, by value
  std::size_t eligible = 0;
};

// Splits the items with h_ij in (lower, upper) into B quantile bins whose
// sizes differ by at most one. Boundaries are midpoints between consecutive
// sorted values. Throws InsufficientItemsError when fewer than B qualify.
Partition partition(double lower, double upper, std::span<const Index> items, std::size_t j,
                    std::size_t b, const ModelParams& params);

struct ControlQuery {
  std::vector<double> anchor;  // h_star, length d
  std::size_t dim = 0;
  std::size_t b = 8;
  double gamma = 1.0;
  std::size_t beam_width = 8;
  std::optional<double> tau;    // defaults to the model's tau
  std::optional<double> value;  // slider position; reported as value_bin

  void validate(const ModelParams& params) const;
};

struct ControlTrajectory {
  std::vector<Index> items;
  std::vector<double> dim_values;
  std::vector<double> boundaries;
  double objective = 0.0;
  ProbeResult probe;
  std::size_t eligible = 0;
  std::optional<std::size_t> value_bin;
};

std::vector<double> item_anchor(const ModelParams& params, Index item);
// Infer-mode posterior mean of concept k for a user with the given items.
std::vector<double> user_anchor(const ModelParams& params, std::span<const Index> row,
                                std::size_t k);

// Precomputed terms of the trajectory objective over a candidate set:
// anchor[i] = exp(cos(h_{i,-j}, h_{*,-j}) / tau) and
// pair[i][i'] = exp(cos(h_{i,-j}, h_{i',-j}) / tau).
struct ControlObjective {
  std::vector<Index> items;
  std::vector<double> anchor;
  TensorD pair;
  double gamma = 1.0;

  std::size_t position(Index item) const;
  double score(std::span<const Index> chosen) const;
};

ControlObjective make_objective(const ModelParams& params, std::span<const double> h_star,
                                std::size_t j, std::span<const Index> items, double tau,
                                double gamma);

// Beam search over subranges t = 1..B keeping `beam_width` partial tuples,
// ties broken by the lexicographically smaller item sequence.
std::vector<Index> beam_select(const ControlObjective& obj,
                               const std::vector<std::vector<Index>>& bins,
                               std::size_t beam_width);

ControlTrajectory select_trajectory(const ControlQuery& q, const ModelParams& params);

}  // namespace macrid
