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
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "macrid/corpus.hpp"
#include "macrid/model.hpp"

namespace macrid {

struct TrainConfig {
  HyperParams hp;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::size_t patience = 20;
  // Minimum pairwise JS divergence below which a prototype is deleted after
  // an epoch; unset disables shrinking.
  std::optional<double> adaptive_k;
  // Written with the best-scoring parameters whenever validation improves.
  std::filesystem::path checkpoint_path;

  void validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean per-user training objective
  double nll = 0.0;
  double kl = 0.0;
  double val_ndcg = 0.0;  // validation NDCG@100, infer mode
  std::size_t k = 0;      // concept count after this epoch
  double seconds = 0.0;   // wall clock since training began
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  std::size_t best_epoch = 0;
  double best_ndcg = 0.0;
  double seconds = 0.0;
  std::size_t parameter_count = 0;
  bool over_budget = false;
};

struct TrainResult {
  ModelParams params;  // best validation checkpoint
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochReport&, const ModelParams&)>;

// Minibatch Adam on the training users with early stopping on validation
// NDCG@100. Deterministic for a given config. Numeric failures are rethrown
// as NumericError naming the epoch and step.
TrainResult train(const InteractionMatrix& corpus, const SplitSpec& split,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Parameter budget: the model should stay near 2*M*d parameters. Returns true
// when params exceeds 1.1 * 2 * M * d.
bool over_parameter_budget(const ModelParams& params);

// Pairwise Jensen-Shannon divergences between the per-concept item
// distributions p(i|k) derived from softmaxed prototype logits (K x K).
TensorD concept_divergences(const ModelParams& params);

struct AdaptiveKResult {
  bool removed = false;
  std::size_t removed_concept = 0;
  double min_divergence = 0.0;
};

// Deletes the higher-index prototype of the closest pair when their JS
// divergence falls below threshold. At most one deletion per call.
AdaptiveKResult adaptive_k(ModelParams& params, double threshold);

struct SearchTrial {
  TrainConfig config;
  double val_ndcg = 0.0;
  std::size_t best_epoch = 0;
  std::string error;  // non-empty when the trial failed numerically
};

struct SearchResult {
  TrainConfig best;
  TrainResult best_result;
  std::vector<SearchTrial> trials;
};

// Draws a configuration from the search ranges: sigma0 in [0.075, 0.5],
// beta in [0, 100], K in 1..20, lr log-uniform in [1e-8, 1], l2 log-uniform in
// [1e-12, 1], dropout in [0.05, 1], layers 0..3, width in {50, 100, ..., 700}.
// Fields not searched (d, tau, lambda, epochs, ...) come from `base`.
TrainConfig sample_config(const TrainConfig& base, Rng& rng);

// Trains n_trials sampled configurations and keeps the best by validation
// NDCG@100. Trials that fail numerically score -inf and are reported.
SearchResult random_search(const InteractionMatrix& corpus, const SplitSpec& split,
                           std::size_t n_trials, std::uint64_t seed, const TrainConfig& base,
                           const std::function<void(const SearchTrial&)>& on_trial = {});

std::string to_json(const EpochReport& e);
std::string to_json(const HyperParams& hp);

}  // namespace macrid
