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

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "macrid/model.hpp"
#include "support/gradcheck.hpp"

namespace {

using macrid::ConceptAssignment;
using macrid::HyperParams;
using macrid::Index;
using macrid::Mode;
using macrid::ModelParams;
using macrid::Rng;
using macrid::TensorD;
using ParamsD = macrid::BasicModelParams<double>;

HyperParams tiny_hp(std::size_t k, std::size_t d) {
  HyperParams hp;
  hp.k = k;
  hp.d = d;
  hp.dropout_rate = 0.3;
  hp.beta = 0.7;
  hp.l2_reg = 0.01;
  return hp;
}

std::vector<std::vector<Index>> tiny_rows() { return {{0, 2, 3}, {1, 4}, {5}, {0, 1, 2, 3, 4}}; }

}  // namespace

TEST_CASE("prototype logits at identical, orthogonal and opposite vectors") {
  HyperParams hp = tiny_hp(3, 2);
  ModelParams p = macrid::init_params(3, hp, 1);
  p.prototypes = macrid::Tensor(3, 2, std::vector<float>{1, 0, 0, 1, -1, 0});
  p.item_reps = macrid::Tensor(3, 2, std::vector<float>{1, 0, 1, 0, 1, 0});
  const TensorD s = macrid::prototype_logits(p);
  CHECK(s(0, 0) == doctest::Approx(10.0));
  CHECK(s(0, 1) == doctest::Approx(0.0));
  CHECK(s(0, 2) == doctest::Approx(-10.0));
  for (double v : s.flat()) CHECK(std::abs(v) <= 10.0 + 1e-9);
}

TEST_CASE("prototype logits of a zero row are zero") {
  ModelParams p = macrid::init_params(4, tiny_hp(2, 3), 1);
  for (auto& v : p.item_reps.row(1)) v = 0.0f;
  const TensorD s = macrid::prototype_logits(p);
  CHECK(s(1, 0) == 0.0);
  CHECK(s(1, 1) == 0.0);
}

TEST_CASE("infer-mode assignment is a one-hot argmax with lowest-index ties") {
  Rng rng(1);
  const TensorD logits(2, 3, std::vector<double>{10, 0, -10, 2, 5, 5});
  const auto c = macrid::sample_assignment(logits, 1.0, Mode::kInfer, rng);
  CHECK(c.hard);
  CHECK(c.weights.row(0)[0] == 1.0);
  CHECK(c.weights.row(0)[1] == 0.0);
  CHECK(c.weights(1, 1) == 1.0);
  CHECK(c.weights(1, 2) == 0.0);
  CHECK(c.concepts() == std::vector<std::size_t>{0, 1});
}

TEST_CASE("low temperature Gumbel-Softmax samples are nearly one-hot") {
  Rng rng(2);
  // At a top-two gap of exactly 1 only about 97% of draws land within 1e-3
  // of a vertex, so the check uses a gap of 5.
  const TensorD logits(1, 3, std::vector<double>{5.0, 0.0, -1.0});
  int near = 0;
  const int draws = 10000;
  for (int n = 0; n < draws; ++n) {
    const auto c = macrid::sample_assignment(logits, 0.01, Mode::kTrain, rng);
    const auto r = c.weights.row(0);
    double total = 0.0;
    for (double v : r) total += v;
    CHECK(std::abs(total - 1.0) < 1e-5);
    if (*std::max_element(r.begin(), r.end()) > 1.0 - 1e-3) ++near;
  }
  CHECK(near >= 0.99 * draws);
}

TEST_CASE("Gumbel-Softmax argmax frequencies match softmax(logits)") {
  Rng rng(3);
  const TensorD logits(1, 4, std::vector<double>{0.5, -1.0, 1.2, 0.0});
  std::vector<double> freq(4, 0.0);
  const int draws = 100000;
  for (int n = 0; n < draws; ++n) {
    const auto c = macrid::sample_assignment(logits, 1.0, Mode::kTrain, rng);
    freq[c.concept_of(0)] += 1.0 / draws;
  }
  double z = 0.0;
  for (double v : logits.flat()) z += std::exp(v);
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(freq[k] - std::exp(logits[k]) / z) < 0.01);
}

TEST_CASE("users with no weight on a concept share its posterior mean") {
  HyperParams hp = tiny_hp(2, 3);
  const ModelParams p = macrid::init_params(6, hp, 4);
  ConceptAssignment c{TensorD(6, 2), true};
  for (std::size_t i = 0; i < 6; ++i) c.weights(i, i < 3 ? 0 : 1) = 1.0;
  const std::vector<Index> a{0, 1}, b{2};
  const auto pa = macrid::encode_user<float>(a, c, p, Mode::kInfer, nullptr);
  const auto pb = macrid::encode_user<float>(b, c, p, Mode::kInfer, nullptr);
  for (std::size_t j = 0; j < 3; ++j) CHECK(pa.mu(1, j) == pb.mu(1, j));
  CHECK(macrid::pooled_context<float>(a, c, p)(1, 0) == 0.0);
}

TEST_CASE("zero log-variance output gives sigma equal to sigma0") {
  HyperParams hp = tiny_hp(2, 3);
  ModelParams p = macrid::init_params(6, hp, 5);
  auto& last = p.mlp.back();
  for (std::size_t r = 0; r < last.weight.rows(); ++r)
    for (std::size_t c = 3; c < 6; ++c) last.weight(r, c) = 0.0f;
  const auto c = macrid::infer_assignment(p);
  Rng rng(1);
  const auto noise = macrid::sample_noise(std::vector<std::vector<Index>>{{0, 1, 2}}, p, hp,
                                          Mode::kTrain, rng);
  const auto post = macrid::encode_user<float>(std::vector<Index>{0, 1, 2}, c, p, Mode::kTrain,
                                               &noise.users[0]);
  for (double s : post.sigma.flat()) CHECK(s == doctest::Approx(hp.sigma0).epsilon(1e-12));
  CHECK_THROWS_AS(macrid::encode_user<float>(std::vector<Index>{}, c, p, Mode::kInfer, nullptr),
                  macrid::Error);
}

TEST_CASE("infer-mode encoding is deterministic and returns unit-norm means") {
  HyperParams hp = tiny_hp(3, 4);
  const ModelParams p = macrid::init_params(10, hp, 6);
  const auto c = macrid::infer_assignment(p);
  const auto rows = std::vector<std::vector<Index>>{{0, 3, 7}, {2, 9}};
  Rng r1(1), r2(99);
  const auto a = macrid::encode(rows, c, p, hp, Mode::kInfer, r1);
  const auto b = macrid::encode(rows, c, p, hp, Mode::kInfer, r2);
  for (std::size_t u = 0; u < rows.size(); ++u) {
    CHECK(a[u].z == b[u].z);
    CHECK(a[u].z == a[u].mu);
    for (std::size_t k = 0; k < 3; ++k) {
      if (macrid::l2_norm<double>(a[u].mu.row(k)) == 0.0) continue;
      CHECK(std::abs(macrid::l2_norm<double>(a[u].mu.row(k)) - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("decode with one concept is a log-softmax of cosine / tau") {
  HyperParams hp = tiny_hp(1, 3);
  const ModelParams p = macrid::init_params(5, hp, 7);
  Rng rng(1);
  const TensorD z = macrid::testing::random_tensor(rng, 1, 3);
  ConceptAssignment c{TensorD(5, 1, 1.0), true};
  const std::vector<Index> cand{0, 1, 2, 3, 4};
  const auto logp = macrid::decode_scores(z, c, p, cand);
  std::vector<double> s(5);
  double lse = 0.0;
  std::vector<double> hi(3);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) hi[j] = p.item_reps(i, j);
    s[i] = macrid::cosine<double>(z.row(0), hi) / p.tau;
    lse += std::exp(s[i]);
  }
  for (std::size_t i = 0; i < 5; ++i) CHECK(logp[i] == doctest::Approx(s[i] - std::log(lse)));
}

TEST_CASE("hard assignment raw score is the concept's cosine / tau") {
  HyperParams hp = tiny_hp(3, 4);
  const ModelParams p = macrid::init_params(8, hp, 8);
  Rng rng(2);
  const TensorD z = macrid::testing::random_tensor(rng, 3, 4);
  const auto c = macrid::infer_assignment(p);
  const auto raw = macrid::raw_scores(z, c, p);
  std::vector<double> hi(4);
  for (std::size_t i = 0; i < 8; ++i) {
    const std::size_t k = c.concept_of(i);
    for (std::size_t j = 0; j < 4; ++j) hi[j] = p.item_reps(i, j);
    CHECK(raw[i] == doctest::Approx(macrid::cosine<double>(z.row(k), hi) / p.tau));
  }
}

TEST_CASE("full-softmax probabilities sum to one and log-probabilities are nonpositive") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    HyperParams hp = tiny_hp(1 + rng.below(4), 2 + rng.below(5));
    const std::size_t m = hp.k + rng.below(30);
    const ModelParams p = macrid::init_params(m, hp, trial);
    const auto c = macrid::sample_assignment(macrid::prototype_logits(p), 1.0, Mode::kTrain, rng);
    const TensorD z = macrid::testing::random_tensor(rng, hp.k, hp.d);
    std::vector<Index> cand(m);
    for (Index i = 0; i < m; ++i) cand[i] = i;
    const auto logp = macrid::decode_scores(z, c, p, cand);
    double total = 0.0;
    for (double v : logp) {
      CHECK(v <= 0.0);
      total += std::exp(v);
    }
    CHECK(std::abs(total - 1.0) < 1e-5);
  }
}

TEST_CASE("rescaling an item or prototype leaves logits and scores unchanged") {
  HyperParams hp = tiny_hp(3, 4);
  const ModelParams p = macrid::init_params(9, hp, 9);
  ModelParams q = p;
  for (auto& v : q.item_reps.row(4)) v *= 3.7f;
  for (auto& v : q.prototypes.row(1)) v *= 0.2f;
  const TensorD a = macrid::prototype_logits(p), b = macrid::prototype_logits(q);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
  Rng rng(4);
  const TensorD z = macrid::testing::random_tensor(rng, 3, 4);
  const auto c = macrid::infer_assignment(p);
  std::vector<Index> cand{0, 2, 4, 6, 8};
  const auto sa = macrid::decode_scores(z, c, p, cand);
  const auto sb = macrid::decode_scores(z, c, q, cand);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(std::abs(sa[i] - sb[i]) < 1e-5);
}

TEST_CASE("kl_gaussian closed-form cases") {
  macrid::UserPosterior post{TensorD(2, 3), TensorD(2, 3, 0.1), TensorD(2, 3)};
  CHECK(macrid::kl_gaussian(post, 0.1) == doctest::Approx(0.0));
  macrid::UserPosterior one{TensorD(1, 1, 0.2), TensorD(1, 1, 0.1), TensorD(1, 1)};
  CHECK(macrid::kl_gaussian(one, 0.1) == doctest::Approx(2.0));
}

TEST_CASE("kl_gaussian matches a Monte-Carlo estimate of E_q[ln q - ln p]") {
  Rng rng(5);
  const double sigma0 = 0.3;
  macrid::UserPosterior post{macrid::testing::random_tensor(rng, 1, 3, 0.5), TensorD(1, 3),
                             TensorD(1, 3)};
  for (auto& s : post.sigma.flat()) s = 0.1 + 0.4 * rng.uniform();
  const int n = 1000000;
  double mean = 0.0, m2 = 0.0;
  for (int t = 1; t <= n; ++t) {
    double lq = 0.0, lp = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double e = rng.normal();
      const double z = post.mu[j] + post.sigma[j] * e;
      lq += -std::log(post.sigma[j]) - 0.5 * e * e;
      lp += -std::log(sigma0) - 0.5 * z * z / (sigma0 * sigma0);
    }
    const double x = lq - lp, delta = x - mean;
    mean += delta / t;
    m2 += delta * (x - mean);
  }
  const double se = std::sqrt(m2 / (n - 1) / n);
  CHECK(std::abs(mean - macrid::kl_gaussian(post, sigma0)) < 3 * se);
}

TEST_CASE("autodiff loss equals the plain-route objective") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    HyperParams hp = tiny_hp(1 + rng.below(3), 2 + rng.below(3));
    hp.hidden_layers = rng.below(3);
    hp.hidden_width = 2 + rng.below(4);
    hp.similarity = trial % 4 == 3 ? macrid::Similarity::kInner : macrid::Similarity::kCosine;
    if (trial % 2) hp.neg_samples = 2;
    const ModelParams pf = macrid::init_params(6, hp, 100 + trial);
    const ParamsD pd = pf.cast<double>();
    const auto rows = tiny_rows();
    for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
      const auto noise = macrid::sample_noise(rows, pd, hp, mode, rng);
      const double ref = macrid::reference_loss(rows, pd, hp, mode, noise);
      const auto got = macrid::loss(rows, pd, hp, mode, noise, false);
      CHECK(got.loss == doctest::Approx(ref).epsilon(1e-10));
      const auto gotf = macrid::loss(rows, pf, hp, mode, noise, false);
      CHECK(gotf.loss == doctest::Approx(ref).epsilon(1e-4));
    }
  }
}

TEST_CASE("loss gradient matches finite differences on a tiny instance") {
  HyperParams hp = tiny_hp(2, 3);
  const ParamsD p = macrid::init_params(6, hp, 11).cast<double>();
  Rng rng(7);
  const auto rows = tiny_rows();
  const auto noise = macrid::sample_noise(rows, p, hp, Mode::kTrain, rng);
  const auto res = macrid::testing::check_model_loss(rows, p, hp, Mode::kTrain, noise);
  INFO("worst " << res.worst);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("beta scales the KL term linearly") {
  HyperParams hp = tiny_hp(2, 3);
  hp.l2_reg = 0.0;
  const ParamsD p = macrid::init_params(6, hp, 12).cast<double>();
  Rng rng(8);
  const auto rows = tiny_rows();
  const auto noise = macrid::sample_noise(rows, p, hp, Mode::kTrain, rng);
  HyperParams h0 = hp, h2 = hp;
  h0.beta = 0.0;
  h2.beta = 2 * hp.beta;
  const auto l0 = macrid::loss(rows, p, h0, Mode::kTrain, noise, false);
  const auto l1 = macrid::loss(rows, p, hp, Mode::kTrain, noise, false);
  const auto l2 = macrid::loss(rows, p, h2, Mode::kTrain, noise, false);
  CHECK(l0.loss == doctest::Approx(l0.nll));
  CHECK(l2.loss - l1.loss == doctest::Approx(hp.beta * l1.kl));
}

TEST_CASE("sampled negatives avoid positives and are distinct") {
  HyperParams hp = tiny_hp(2, 3);
  hp.neg_samples = 3;
  const ModelParams p = macrid::init_params(10, hp, 13);
  Rng rng(9);
  const std::vector<std::vector<Index>> rows{{1, 2, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8}};
  const auto noise = macrid::sample_noise(rows, p, hp, Mode::kTrain, rng);
  CHECK(noise.users[0].negatives.size() == 3);
  CHECK(noise.users[1].negatives == std::vector<Index>{9});
  for (Index i : noise.users[0].negatives) CHECK((i == 0 || i > 3));
  HyperParams full = hp;
  full.neg_samples = macrid::kAutoNegatives;
  CHECK(full.negatives_for(20000) == macrid::kFullSoftmax);
  CHECK(full.negatives_for(20001) == 1000);
}

TEST_CASE("init_params copies distinct items into the prototypes") {
  HyperParams hp = tiny_hp(5, 4);
  const ModelParams p = macrid::init_params(12, hp, 14);
  CHECK_NOTHROW(p.validate());
  std::set<std::size_t> matched;
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t i = 0; i < 12; ++i) {
      bool same = true;
      for (std::size_t j = 0; j < 4; ++j) same = same && p.prototypes(k, j) == p.item_reps(i, j);
      if (same) matched.insert(i);
    }
  CHECK(matched.size() == 5);
  CHECK(p == macrid::init_params(12, hp, 14));
  CHECK_THROWS_AS(macrid::init_params(4, hp, 1), macrid::Error);
}

TEST_CASE("hyper-parameter ranges are enforced") {
  HyperParams hp;
  CHECK_NOTHROW(hp.validate());
  hp.k = 21;
  CHECK_THROWS_AS(hp.validate(), macrid::Error);
  hp = {};
  hp.sigma0 = 0.6;
  CHECK_THROWS_AS(hp.validate(), macrid::Error);
  hp = {};
  hp.beta = -1;
  CHECK_THROWS_AS(hp.validate(), macrid::Error);
  CHECK_THROWS_AS(macrid::similarity_from_string("dot"), macrid::Error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  HyperParams hp = tiny_hp(3, 4);
  hp.hidden_layers = 2;
  hp.hidden_width = 5;
  hp.similarity = macrid::Similarity::kInner;
  const ModelParams p = macrid::init_params(7, hp, 15);
  macrid::Vocabulary items({"a", "b", "c", "d", "e", "f", "g"});
  std::stringstream s;
  macrid::write_checkpoint(s, p, items);
  const std::string bytes = s.str();
  CHECK(bytes.substr(0, 5) == "MCRD1");
  const auto ck = macrid::read_checkpoint(s);
  CHECK(ck.params == p);
  CHECK(ck.items == items);
  std::stringstream again;
  macrid::write_checkpoint(again, ck.params, ck.items);
  CHECK(again.str() == bytes);
  std::istringstream cut(bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(macrid::read_checkpoint(cut), macrid::Error);
}
