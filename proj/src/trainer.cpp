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

#include "macrid/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "macrid/adam.hpp"
#include "macrid/error.hpp"
#include "macrid/metrics.hpp"

namespace macrid {

void TrainConfig::validate() const {
  hp.validate();
  if (epochs < 1) fail(ErrorKind::kUsage, "epochs must be >= 1");
  if (patience < 1) fail(ErrorKind::kUsage, "patience must be >= 1");
  if (batch_size < 1) fail(ErrorKind::kUsage, "batch size must be >= 1");
  if (adaptive_k && !(*adaptive_k >= 0.0)) fail(ErrorKind::kUsage, "adaptive-k threshold must be >= 0");
}

bool over_parameter_budget(const ModelParams& params) {
  const double budget = 2.0 * static_cast<double>(params.m()) * static_cast<double>(params.d());
  return static_cast<double>(params.parameter_count()) > 1.1 * budget;
}

TrainResult train(const InteractionMatrix& corpus, const SplitSpec& split,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  require(!split.train_users.empty(), "train: the split has no training users");
  require(!split.validation_users.empty(), "train: the split has no validation users");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  ModelParams params = init_params(corpus.n_items(), cfg.hp, derive_seed(cfg.seed, 3));
  HyperParams hp = cfg.hp;
  AdamState adam(AdamOptions{hp.lr, 0.9, 0.999, 1e-8});
  MinibatchStream stream(split.train_users, cfg.batch_size, derive_seed(cfg.seed, 4));
  Rng rng(derive_seed(cfg.seed, 2));

  TrainResult result;
  result.report.parameter_count = params.parameter_count();
  result.report.over_budget = over_parameter_budget(params);
  result.report.best_ndcg = -std::numeric_limits<double>::infinity();
  result.params = params;

  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0, nll_sum = 0.0, kl_sum = 0.0;
    std::size_t seen = 0, step = 0;
    for (const auto& batch : stream.epoch(epoch)) {
      ++step;
      std::vector<std::vector<Index>> rows;
      rows.reserve(batch.size());
      for (Index u : batch) rows.push_back(corpus.row_vector(u));
      try {
        const BatchNoise noise = sample_noise(rows, params, hp, Mode::kTrain, rng);
        const auto res = loss(rows, params, hp, Mode::kTrain, noise, true);
        adam_update(params.tensors(), res.grads, adam);
        for (const auto* t : params.tensors()) {
          if (!t->all_finite()) throw NumericError("adam_update", "non-finite parameter after update");
        }
        const double n = static_cast<double>(rows.size());
        loss_sum += res.loss * n;
        nll_sum += res.nll * n;
        kl_sum += res.kl * n;
        seen += rows.size();
      } catch (const NumericError& e) {
        throw NumericError(e.node(), "epoch " + std::to_string(epoch + 1) + " step " +
                                         std::to_string(step) + ": " + e.what());
      }
    }
    if (cfg.adaptive_k && params.k() >= 2) {
      const auto shrink = adaptive_k(params, *cfg.adaptive_k);
      if (shrink.removed) {
        adam.erase_row(0, shrink.removed_concept);
        hp.k = params.k();
      }
    }
    EpochReport rep;
    rep.epoch = epoch + 1;
    rep.loss = loss_sum / static_cast<double>(seen);
    rep.nll = nll_sum / static_cast<double>(seen);
    rep.kl = kl_sum / static_cast<double>(seen);
    rep.val_ndcg = evaluate(params, split, SplitPart::kValidation).ndcg100.mean;
    rep.k = params.k();
    rep.seconds = elapsed();
    result.report.epochs.push_back(rep);
    if (on_epoch) on_epoch(rep, params);
    if (rep.val_ndcg > result.report.best_ndcg) {
      result.report.best_ndcg = rep.val_ndcg;
      result.report.best_epoch = rep.epoch;
      result.params = params;
      since_best = 0;
      if (!cfg.checkpoint_path.empty())
        save_checkpoint(cfg.checkpoint_path, params, corpus.item_vocab());
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.report.seconds = elapsed();
  return result;
}

TensorD concept_divergences(const ModelParams& params) {
  const TensorD s = prototype_logits(params);
  const std::size_t m = s.rows(), k = s.cols();
  // Row softmax, then column normalization: p(i|k).
  TensorD p(m, k);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, s(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += (p(i, c) = std::exp(s(i, c) - mx));
    for (std::size_t c = 0; c < k; ++c) p(i, c) /= z;
  }
  for (std::size_t c = 0; c < k; ++c) {
    double col = 0.0;
    for (std::size_t i = 0; i < m; ++i) col += p(i, c);
    for (std::size_t i = 0; i < m; ++i) p(i, c) /= col;
  }
  TensorD js(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      double v = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double pa = p(i, a), pb = p(i, b), mid = 0.5 * (pa + pb);
        if (pa > 0.0) v += 0.5 * pa * std::log(pa / mid);
        if (pb > 0.0) v += 0.5 * pb * std::log(pb / mid);
      }
      js(a, b) = js(b, a) = v;
    }
  return js;
}

AdaptiveKResult adaptive_k(ModelParams& params, double threshold) {
  require(params.k() >= 2, "adaptive_k needs K >= 2");
  const TensorD js = concept_divergences(params);
  const std::size_t k = params.k();
  AdaptiveKResult out;
  out.min_divergence = std::numeric_limits<double>::infinity();
  std::size_t drop = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b)
      if (js(a, b) < out.min_divergence) {
        out.min_divergence = js(a, b);
        drop = b;
      }
  if (out.min_divergence < threshold) {
    std::vector<float> keep;
    for (std::size_t c = 0; c < k; ++c) {
      if (c == drop) continue;
      auto r = params.prototypes.row(c);
      keep.insert(keep.end(), r.begin(), r.end());
    }
    params.prototypes = Tensor(k - 1, params.d(), std::move(keep));
    out.removed = true;
    out.removed_concept = drop;
  }
  return out;
}

TrainConfig sample_config(const TrainConfig& base, Rng& rng) {
  TrainConfig c = base;
  auto uniform = [&rng](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  auto log_uniform = [&](double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  };
  c.hp.sigma0 = uniform(0.075, 0.5);
  c.hp.beta = uniform(0.0, 100.0);
  c.hp.k = 1 + rng.below(20);
  c.hp.lr = log_uniform(1e-8, 1.0);
  c.hp.l2_reg = log_uniform(1e-12, 1.0);
  c.hp.dropout_rate = uniform(0.05, 1.0);
  c.hp.hidden_layers = rng.below(4);
  c.hp.hidden_width = 50 * (1 + rng.below(14));
  return c;
}

SearchResult random_search(const InteractionMatrix& corpus, const SplitSpec& split,
                           std::size_t n_trials, std::uint64_t seed, const TrainConfig& base,
                           const std::function<void(const SearchTrial&)>& on_trial) {
  require(n_trials >= 1, "random_search needs at least one trial");
  Rng rng(derive_seed(seed, 5));
  SearchResult out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n_trials; ++t) {
    SearchTrial trial;
    trial.config = sample_config(base, rng);
    trial.config.seed = derive_seed(seed, 100 + t);
    trial.config.checkpoint_path.clear();
    trial.val_ndcg = -std::numeric_limits<double>::infinity();
    try {
      TrainResult r = train(corpus, split, trial.config);
      trial.val_ndcg = r.report.best_ndcg;
      trial.best_epoch = r.report.best_epoch;
      if (trial.val_ndcg > best || out.trials.empty()) {
        best = trial.val_ndcg;
        out.best = trial.config;
        out.best_result = std::move(r);
      }
    } catch (const NumericError& e) {
      trial.error = e.what();
      if (out.trials.empty()) out.best = trial.config;
    }
    if (on_trial) on_trial(trial);
    out.trials.push_back(trial);
  }
  return out;
}

std::string to_json(const EpochReport& e) {
  nlohmann::json j;
  j["epoch"] = e.epoch;
  j["loss"] = e.loss;
  j["nll"] = e.nll;
  j["kl"] = e.kl;
  j["val_ndcg100"] = e.val_ndcg;
  j["k"] = e.k;
  j["seconds"] = e.seconds;
  return j.dump();
}

std::string to_json(const HyperParams& hp) {
  nlohmann::json j;
  j["k"] = hp.k;
  j["d"] = hp.d;
  j["beta"] = hp.beta;
  j["sigma0"] = hp.sigma0;
  j["tau"] = hp.tau;
  j["lambda"] = hp.gumbel_temp;
  j["lr"] = hp.lr;
  j["l2"] = hp.l2_reg;
  j["dropout"] = hp.dropout_rate;
  j["layers"] = hp.hidden_layers;
  j["width"] = hp.hidden_width;
  j["neg_samples"] = hp.neg_samples == kAutoNegatives ? nlohmann::json("auto")
                                                      : nlohmann::json(hp.neg_samples);
  j["similarity"] = to_string(hp.similarity);
  return j.dump();
}

}  // namespace macrid
