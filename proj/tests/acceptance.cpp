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

// Acceptance suite: one PASS/FAIL line per top-level criterion. Arguments
// restrict the run to the named criteria. Exits nonzero when a criterion
// fails that is not listed as a known gap.
//
// Environment:
//   MACRID_ML100K   path to MovieLens 100K u.data (default data/ml-100k/u.data)
//   MACRID_THREADS  cap on worker threads

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "macrid/control.hpp"
#include "macrid/corpus.hpp"
#include "macrid/metrics.hpp"
#include "macrid/synthetic.hpp"
#include "macrid/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/proofs.hpp"

namespace {

namespace fs = std::filesystem;
using macrid::Index;
using macrid::ModelParams;
using macrid::Rng;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& cmd) { return std::system(cmd.c_str()); }

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// Test-set metrics on MovieLens 100K through the command-line tool with the
// shipped configuration.
Outcome ml100k(const fs::path& work) {
  const char* env = std::getenv("MACRID_ML100K");
  const fs::path data = env ? fs::path(env) : fs::path(MACRID_SOURCE_DIR) / "data/ml-100k/u.data";
  if (!fs::exists(data)) {
    return {false, "ratings not found at " + data.string() + " (run tools/fetch_ml100k.sh)"};
  }
  const std::string cli = quote(MACRID_CLI);
  const fs::path corpus = work / "ml100k", ckpt = work / "ml100k.mcrd";
  const auto t0 = Clock::now();
  if (run(cli + " --quiet --seed 0 --json " + quote(work / "prep.json") + " prep --input " +
          quote(data) + " --threshold 4 --min-items 5 --heldout 100 --out " + quote(corpus)) != 0) {
    return {false, "prep failed"};
  }
  if (run(cli + " --quiet --seed 0 train --corpus " + quote(corpus) + " --config " +
          quote(fs::path(MACRID_SOURCE_DIR) / "configs/ml100k.toml") + " --out " + quote(ckpt) +
          " > " + quote(work / "train.log")) != 0) {
    return {false, "train failed"};
  }
  if (run(cli + " --quiet --json " + quote(work / "eval.json") + " eval --ckpt " + quote(ckpt) +
          " --corpus " + quote(corpus) + " --split test") != 0) {
    return {false, "eval failed"};
  }
  const double seconds = since(t0);
  const json prep = json::parse(read_file(work / "prep.json"));
  const json ev = json::parse(read_file(work / "eval.json"));
  const double ndcg = ev["ndcg100"]["mean"], r20 = ev["recall20"]["mean"], r50 = ev["recall50"]["mean"];
  const bool ok = ndcg >= 0.26 && r20 >= 0.27 && r50 >= 0.37 && seconds <= 1800.0;
  return {ok, "NDCG@100 " + num(ndcg) + " (>= 0.26), R@20 " + num(r20) + " (>= 0.27), R@50 " +
                  num(r50) + " (>= 0.37), " + num(seconds, 0) + " s (<= 1800); corpus " +
                  std::to_string(prep["users"].get<int>()) + " users / " +
                  std::to_string(prep["items"].get<int>()) + " items / " +
                  std::to_string(prep["interactions"].get<int>()) +
                  " interactions (reference 603 / 5697 / 47922)"};
}

// Analytic gradients of the training objective against 64-bit finite
// differences on 100 random small models.
Outcome gradients() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  std::size_t entries = 0;
  for (int trial = 0; trial < 100; ++trial) {
    macrid::HyperParams hp;
    hp.k = 1 + rng.below(3);
    hp.d = 2 + rng.below(3);
    hp.beta = rng.uniform() * 2.0;
    hp.dropout_rate = trial % 3 == 0 ? 0.0 : 0.3;
    hp.l2_reg = trial % 2 ? 0.01 : 0.0;
    hp.hidden_layers = rng.below(2);
    hp.hidden_width = 2 + rng.below(3);
    const std::size_t m = std::max<std::size_t>(hp.k, 3 + rng.below(8));
    if (trial % 4 == 1 && m > 3) hp.neg_samples = 2;
    std::vector<std::vector<Index>> rows(1 + rng.below(3));
    for (auto& r : rows) {
      std::set<Index> s;
      const std::size_t n = 1 + rng.below(m - 1);
      while (s.size() < n) s.insert(static_cast<Index>(rng.below(m)));
      r.assign(s.begin(), s.end());
    }
    auto p = macrid::init_params(m, hp, 500 + trial).cast<double>();
    for (auto& layer : p.mlp) {
      for (auto& b : layer.bias.flat()) b = 0.1 * rng.normal();
    }
    const auto noise = macrid::sample_noise(std::span<const std::vector<Index>>(rows), p, hp,
                                            macrid::Mode::kTrain, rng);
    const auto res = macrid::testing::check_model_loss(std::span<const std::vector<Index>>(rows),
                                                       p, hp, macrid::Mode::kTrain, noise);
    worst = std::max(worst, res.max_rel_error);
    entries += res.entries;
  }
  const double seconds = since(t0);
  return {worst < 1e-4 && seconds < 10.0,
          "max relative error " + [&] {
            std::ostringstream s;
            s << std::scientific << std::setprecision(2) << worst;
            return s.str();
          }() + " (< 1e-4) over " + std::to_string(entries) + " entries, " + num(seconds, 1) +
              " s (< 10)"};
}

// Variational bound and KL decomposition by Monte Carlo.
Outcome proofs() {
  const auto t0 = Clock::now();
  Rng rng(77);
  int bound_ok = 0;
  for (int t = 0; t < 20; ++t) {
    macrid::HyperParams hp;
    hp.k = 1 + rng.below(2);
    hp.d = 2 + rng.below(2);
    hp.sigma0 = 0.1 + 0.4 * rng.uniform();
    const std::size_t m = 4 + rng.below(5);
    const auto p = macrid::init_params(m, hp, 900 + t);
    std::set<Index> s;
    const std::size_t n = 1 + rng.below(m - 1);
    while (s.size() < n) s.insert(static_cast<Index>(rng.below(m)));
    const std::vector<Index> row(s.begin(), s.end());
    const auto c = macrid::infer_assignment(p);
    const auto lb = macrid::testing::elbo(row, p, c, rng, 4000);
    const auto lp = macrid::testing::log_marginal(row, p, c, rng, 500, 40);
    if (lb.mean <= lp.mean + 3.0 * std::hypot(lb.se, lp.se)) ++bound_ok;
  }
  macrid::HyperParams hp;
  hp.k = 2;
  hp.d = 2;
  hp.sigma0 = 0.5;
  const auto p = macrid::init_params(8, hp, 31);
  const std::vector<std::vector<Index>> rows{{0, 1}, {2, 3, 4}, {5}, {1, 6, 7}};
  const auto kl = macrid::testing::kl_decomposition(std::span<const std::vector<Index>>(rows), p,
                                                    macrid::infer_assignment(p), rng, 200000);
  const double gap = kl.mutual_information.mean + kl.marginal_kl.mean - kl.expected_kl;
  const double tol = 3.0 * std::hypot(kl.mutual_information.se, kl.marginal_kl.se);
  const bool kl_ok = std::abs(gap) <= 3.0 * kl.total.se;
  const double seconds = since(t0);
  return {bound_ok == 20 && kl_ok && seconds < 120.0,
          "ELBO <= log evidence + 3 SE on " + std::to_string(bound_ok) +
              "/20 draws; E[KL] " + num(kl.expected_kl) + " vs I " +
              num(kl.mutual_information.mean) + " + KL(q(z)||p) " + num(kl.marginal_kl.mean) +
              " (gap " + num(gap) + ", 3 SE " + num(3.0 * kl.total.se) + ", per-term 3 SE " +
              num(tol) + "), " + num(seconds, 1) + " s (< 120)"};
}

// Ranking metrics against a full-sort oracle and beam search against
// exhaustive enumeration.
Outcome oracles() {
  const auto t0 = Clock::now();
  Rng rng(5);
  int metric_ok = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 5 + rng.below(300);
    std::vector<double> scores(m);
    for (auto& s : scores) s = static_cast<double>(rng.below(t % 2 ? 10 : 1000));
    std::set<std::size_t> fold, held;
    const std::size_t n_fold = rng.below(m / 2), n_held = 1 + rng.below(m / 3);
    while (fold.size() < n_fold) fold.insert(rng.below(m));
    while (held.size() < n_held) {
      const std::size_t i = rng.below(m);
      if (!fold.count(i)) held.insert(i);
    }
    std::vector<bool> ex(m, false);
    for (auto i : fold) ex[i] = true;
    const std::vector<Index> rel(held.begin(), held.end());
    const auto ranked = macrid::top_k(scores, 100, ex);
    const auto want = macrid::testing::naive_metrics(scores, fold, held);
    const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
    if (close(macrid::ndcg_at_k(ranked, rel, 100), want.ndcg100) &&
        close(macrid::recall_at_k(ranked, rel, 20), want.recall20) &&
        close(macrid::recall_at_k(ranked, rel, 50), want.recall50)) {
      ++metric_ok;
    }
  }
  int exhaustive_ok = 0, near_ok = 0, instances = 0;
  double worst_ratio = 1.0;
  for (int seed = 0; instances < 50; ++seed) {
    const std::size_t m = 15 + rng.below(16), d = 3 + rng.below(3);
    macrid::HyperParams hp;
    hp.k = 1 + rng.below(2);
    hp.d = d;
    const auto p = macrid::init_params(m, hp, 3000 + seed);
    macrid::ControlQuery q;
    q.anchor = macrid::item_anchor(p, static_cast<Index>(rng.below(m)));
    q.dim = rng.below(d);
    q.b = 1 + rng.below(3);
    q.gamma = rng.uniform() * 2.0;
    macrid::ControlTrajectory def;
    try {
      def = macrid::select_trajectory(q, p);
    } catch (const macrid::InsufficientItemsError&) {
      continue;
    }
    ++instances;
    const auto members = macrid::concept_items(p, def.probe.k_star);
    const auto part = macrid::partition(def.probe.lower, def.probe.upper, members, q.dim, q.b, p);
    std::vector<std::vector<std::size_t>> bins;
    std::size_t product = 1;
    for (const auto& b : part.bins) {
      bins.emplace_back(b.begin(), b.end());
      product *= b.size();
    }
    std::vector<std::vector<double>> reps;
    for (std::size_t i = 0; i < m; ++i) reps.emplace_back(p.item_reps.row(i).begin(), p.item_reps.row(i).end());
    const double opt =
        macrid::testing::brute_force_objective(reps, q.anchor, q.dim, bins, p.tau, q.gamma);
    worst_ratio = std::min(worst_ratio, def.objective / opt);
    if (def.objective >= 0.95 * opt) ++near_ok;
    q.beam_width = product;
    if (std::abs(macrid::select_trajectory(q, p).objective - opt) <= 1e-9 * opt) ++exhaustive_ok;
  }
  const double seconds = since(t0);
  return {metric_ok == 200 && exhaustive_ok == 50 && near_ok == 50 && seconds < 60.0,
          "metrics match on " + std::to_string(metric_ok) + "/200; wide beam equals enumeration on " +
              std::to_string(exhaustive_ok) + "/50; default beam >= 95% on " +
              std::to_string(near_ok) + "/50 (worst " + num(worst_ratio) + "), " +
              num(seconds, 1) + " s (< 60)"};
}

// Training setup shared by the synthetic criteria.
macrid::TrainConfig synthetic_config(std::uint64_t seed) {
  macrid::TrainConfig cfg;
  cfg.hp.k = 3;
  cfg.hp.d = 16;
  cfg.hp.lr = 1e-2;
  cfg.hp.beta = 0.2;
  cfg.hp.dropout_rate = 0.5;
  cfg.epochs = 150;
  cfg.batch_size = 16;
  cfg.patience = 150;
  cfg.seed = seed;
  return cfg;
}

struct SyntheticRun {
  macrid::SyntheticCorpus corpus;
  macrid::SplitSpec split;
};

SyntheticRun synthetic(std::uint64_t seed) {
  SyntheticRun r{macrid::make_synthetic(macrid::SyntheticOptions{}, 1000 + seed), {}};
  r.split = macrid::make_split(r.corpus.matrix, 100, 0.8, seed);
  return r;
}

Outcome macro_recovery() {
  const auto t0 = Clock::now();
  double ari_sum = 0.0, max_share = 0.0;
  std::string aris, shares;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto s = synthetic(seed);
    const auto cos = macrid::train(s.corpus.matrix, s.split, synthetic_config(seed));
    const double ari = macrid::cluster_agreement(macrid::infer_assignment(cos.params), s.corpus.labels);
    ari_sum += ari;
    aris += (aris.empty() ? "" : " ") + num(ari, 3);
    auto cfg = synthetic_config(seed);
    cfg.hp.similarity = macrid::Similarity::kInner;
    const auto inner = macrid::train(s.corpus.matrix, s.split, cfg);
    std::vector<std::size_t> counts(inner.params.k(), 0);
    for (auto k : macrid::infer_assignment(inner.params).concepts()) ++counts[k];
    const double share = static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                         static_cast<double>(inner.params.m());
    max_share = std::max(max_share, share);
    shares += (shares.empty() ? "" : " ") + num(share, 2);
  }
  const double seconds = since(t0);
  const double ari = ari_sum / 3.0;
  return {ari >= 0.9 && max_share > 0.6 && seconds < 300.0,
          "cosine ARI " + num(ari, 3) + " [" + aris + "] (>= 0.9); inner largest concept share [" +
              shares + "] (some seed > 0.60), " + num(seconds, 0) + " s (< 300)"};
}

Outcome micro_direction() {
  const auto t0 = Clock::now();
  double gain_sample = 0.0, gain_mean = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = synthetic(seed);
    std::vector<std::vector<Index>> rows;
    for (auto u : s.split.train_users) rows.push_back(s.corpus.matrix.row_vector(u));
    const std::span<const std::vector<Index>> r(rows);
    double sample[2], mean[2];
    for (int b = 0; b < 2; ++b) {
      auto cfg = synthetic_config(seed);
      cfg.hp.beta = b == 0 ? 0.0 : 50.0;
      const auto res = macrid::train(s.corpus.matrix, s.split, cfg);
      sample[b] = macrid::independence(
                      macrid::user_codes(res.params, r, macrid::Representation::kSample, seed))
                      .value;
      mean[b] = macrid::independence(macrid::user_means(res.params, r)).value;
    }
    gain_sample += (sample[1] - sample[0]) / 5.0;
    gain_mean += (mean[1] - mean[0]) / 5.0;
  }
  const double seconds = since(t0);
  return {gain_sample >= 0.05 && seconds < 600.0,
          "independence gain beta 50 vs 0 on sampled codes " + num(gain_sample) +
              " (>= 0.05); on posterior means " + num(gain_mean) + "; " + num(seconds, 0) +
              " s (< 600)"};
}

Outcome determinism(const fs::path& work) {
  const auto s = synthetic(9);
  auto cfg = synthetic_config(9);
  cfg.epochs = 5;
  cfg.checkpoint_path = work / "det_a.mcrd";
  macrid::train(s.corpus.matrix, s.split, cfg);
  cfg.checkpoint_path = work / "det_b.mcrd";
  macrid::train(s.corpus.matrix, s.split, cfg);
  const bool same_seed = read_file(work / "det_a.mcrd") == read_file(work / "det_b.mcrd");

  const auto ck = macrid::load_checkpoint(work / "det_a.mcrd");
  macrid::save_checkpoint(work / "det_c.mcrd", ck.params, ck.items);
  const bool ckpt_round = read_file(work / "det_a.mcrd") == read_file(work / "det_c.mcrd");

  std::ostringstream a;
  macrid::write_corpus_binary(s.corpus.matrix, a);
  std::istringstream in(a.str());
  const auto back = macrid::read_corpus_binary(in, s.corpus.matrix.user_vocab(),
                                               s.corpus.matrix.item_vocab());
  std::ostringstream b;
  macrid::write_corpus_binary(back, b);
  macrid::save_corpus_dir(work / "det_corpus", s.corpus.matrix, &s.split);
  const bool corpus_round = a.str() == b.str() && back == s.corpus.matrix &&
                            macrid::load_corpus_dir(work / "det_corpus") == s.corpus.matrix &&
                            macrid::load_split(work / "det_corpus") == s.split;
  return {same_seed && ckpt_round && corpus_round,
          std::string("same-seed checkpoints ") + (same_seed ? "identical" : "DIFFER") +
              "; checkpoint round-trip " + (ckpt_round ? "bit-exact" : "DIFFERS") +
              "; corpus round-trip " + (corpus_round ? "bit-exact" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<std::string> only(argv + 1, argv + argc);
  const fs::path work = fs::temp_directory_path() / "macrid_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    bool known_gap = false;
  };
  const std::vector<Criterion> criteria{
      {"ml100k-reproduction", [&] { return ml100k(work); }},
      {"gradient-correctness", gradients},
      {"proof-properties", proofs},
      {"metric-beam-oracles", oracles},
      {"macro-recovery", macro_recovery, true},
      {"micro-disentanglement-direction", micro_direction},
      {"determinism-formats", [&] { return determinism(work); }},
  };
  int failed = 0, gaps = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++(c.known_gap ? gaps : failed);
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name
              << (!o.pass && c.known_gap ? " [known gap, see README]" : "") << ": " << o.detail
              << std::endl;
  }
  const std::size_t ran = only.empty() ? criteria.size() : only.size();
  std::cout << (ran - failed - gaps) << "/" << ran << " criteria passed, " << gaps
            << " known gap(s)" << std::endl;
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
