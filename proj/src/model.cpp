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

#include "macrid/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "macrid/autodiff.hpp"
#include "macrid/binary_io.hpp"
#include "macrid/error.hpp"

namespace macrid {

namespace {

constexpr double kPoolEps = 1e-8;
constexpr double kLogSigmaBound = 40.0;

double similarity_value(std::span<const double> a, std::span<const double> b,
                        Similarity s) {
  return s == Similarity::kCosine ? cosine(a, b) : dot(a, b);
}

template <typename T>
std::span<const double> as_double_row(const BasicTensor<T>& t, std::size_t r,
                                      std::vector<double>& scratch) {
  auto src = t.row(r);
  scratch.assign(src.begin(), src.end());
  return scratch;
}

}  // namespace

std::string to_string(Similarity s) {
  return s == Similarity::kCosine ? "cosine" : "inner";
}

Similarity similarity_from_string(const std::string& s) {
  if (s == "cosine") return Similarity::kCosine;
  if (s == "inner") return Similarity::kInner;
  fail(ErrorKind::kUsage, "unknown similarity '" + s + "' (expected cosine|inner)");
}

void HyperParams::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::kUsage, what); };
  if (k < 1 || k > 20) bad("K must lie in 1..20");
  if (d < 2) bad("d must be >= 2");
  if (!(beta >= 0.0 && beta <= 100.0)) bad("beta must lie in [0, 100]");
  if (!(sigma0 >= 0.075 && sigma0 <= 0.5)) bad("sigma0 must lie in [0.075, 0.5]");
  if (!(tau > 0.0)) bad("tau must be > 0");
  if (!(gumbel_temp > 0.0)) bad("gumbel temperature must be > 0");
  if (!(lr > 0.0)) bad("learning rate must be > 0");
  if (!(l2_reg >= 0.0)) bad("l2 regularization must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0)) bad("dropout rate must lie in [0, 1]");
  if (hidden_layers > 3) bad("hidden layers must lie in 0..3");
  if (hidden_layers > 0 && hidden_width < 1) bad("hidden width must be >= 1");
}

std::size_t HyperParams::negatives_for(std::size_t m) const {
  if (neg_samples == kAutoNegatives) return m <= 20000 ? kFullSoftmax : 1000;
  return neg_samples;
}

template <typename T>
std::vector<std::size_t> BasicModelParams<T>::hidden_sizes() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l + 1 < mlp.size(); ++l) out.push_back(mlp[l].weight.cols());
  return out;
}

template <typename T>
std::vector<BasicTensor<T>*> BasicModelParams<T>::tensors() {
  std::vector<BasicTensor<T>*> out{&prototypes, &item_reps, &context_reps};
  for (auto& l : mlp) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicModelParams<T>::tensors() const {
  std::vector<const BasicTensor<T>*> out{&prototypes, &item_reps, &context_reps};
  for (const auto& l : mlp) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

template <typename T>
std::size_t BasicModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

template <typename T>
void BasicModelParams<T>::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::kData, "invalid model: " + what); };
  if (k() < 1) bad("K must be >= 1");
  if (d() < 2) bad("d must be >= 2");
  if (m() < k()) bad("M must be >= K");
  if (prototypes.cols() != d() || context_reps.rows() != m() || context_reps.cols() != d())
    bad("embedding shapes disagree");
  if (mlp.empty()) bad("MLP has no layers");
  std::size_t in = d();
  for (const auto& l : mlp) {
    if (l.weight.rows() != in || l.bias.rows() != 1 || l.bias.cols() != l.weight.cols())
      bad("MLP layer shapes disagree");
    in = l.weight.cols();
  }
  if (in != 2 * d()) bad("MLP output must be 2d");
  if (!(tau > 0.0) || !(sigma0 > 0.0)) bad("tau and sigma0 must be positive");
  for (const auto* t : tensors())
    if (!t->all_finite()) bad("non-finite parameter");
}

template struct BasicModelParams<float>;
template struct BasicModelParams<double>;

ModelParams init_params(std::size_t n_items, const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  if (n_items < hp.k) {
    fail(ErrorKind::kUsage, "need at least K items (" + std::to_string(hp.k) + "), have " +
                                std::to_string(n_items));
  }
  Rng rng(seed);
  ModelParams p;
  p.tau = hp.tau;
  p.sigma0 = hp.sigma0;
  p.similarity = hp.similarity;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(hp.d));
  auto normal_tensor = [&rng](std::size_t r, std::size_t c, double sd) {
    Tensor t(r, c);
    for (auto& v : t.flat()) v = static_cast<float>(sd * rng.normal());
    return t;
  };
  p.item_reps = normal_tensor(n_items, hp.d, emb_std);
  p.context_reps = normal_tensor(n_items, hp.d, emb_std);
  std::size_t in = hp.d;
  for (std::size_t l = 0; l <= hp.hidden_layers; ++l) {
    const std::size_t out = l == hp.hidden_layers ? 2 * hp.d : hp.hidden_width;
    p.mlp.push_back({normal_tensor(in, out, 1.0 / std::sqrt(static_cast<double>(in))),
                     Tensor(1, out)});
    in = out;
  }
  // K distinct items, partial Fisher-Yates.
  std::vector<std::size_t> pick(n_items);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  p.prototypes = Tensor(hp.k, hp.d);
  for (std::size_t k = 0; k < hp.k; ++k) {
    std::swap(pick[k], pick[k + rng.below(n_items - k)]);
    auto src = p.item_reps.row(pick[k]);
    std::copy(src.begin(), src.end(), p.prototypes.row(k).begin());
  }
  return p;
}

std::size_t ConceptAssignment::concept_of(std::size_t item) const {
  auto r = weights.row(item);
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

std::vector<std::size_t> ConceptAssignment::concepts() const {
  std::vector<std::size_t> out(weights.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = concept_of(i);
  return out;
}

template <typename T>
BatchNoise sample_noise(std::span<const std::vector<Index>> rows,
                        const BasicModelParams<T>& params, const HyperParams& hp,
                        Mode mode, Rng& rng) {
  BatchNoise noise;
  if (mode == Mode::kInfer) {
    noise.users.resize(rows.size());
    return noise;
  }
  const std::size_t m = params.m(), k = params.k(), d = params.d();
  noise.gumbel = TensorD(m, k);
  for (auto& g : noise.gumbel.flat()) g = rng.gumbel();
  const double keep = 1.0 - hp.dropout_rate;
  const std::size_t n_neg = hp.negatives_for(m);
  for (const auto& row : rows) {
    UserNoise u;
    std::size_t in = d;
    for (const auto& layer : params.mlp) {
      TensorD mask(k, in);
      for (auto& v : mask.flat()) v = (keep > 0.0 && rng.uniform() < keep) ? 1.0 / keep : 0.0;
      u.dropout_masks.push_back(std::move(mask));
      in = layer.weight.cols();
    }
    u.eps = TensorD(k, d);
    for (auto& v : u.eps.flat()) v = rng.normal();
    if (n_neg != kFullSoftmax) {
      const std::size_t available = m - row.size();
      const std::size_t want = std::min(n_neg, available);
      std::vector<bool> taken(m, false);
      for (Index i : row) taken[i] = true;
      // Uniform without replacement over non-adopted items.
      while (u.negatives.size() < want) {
        const auto cand = static_cast<Index>(rng.below(m));
        if (taken[cand]) continue;
        taken[cand] = true;
        u.negatives.push_back(cand);
      }
    }
    noise.users.push_back(std::move(u));
  }
  return noise;
}

template <typename T>
TensorD prototype_logits(const BasicModelParams<T>& params) {
  const std::size_t m = params.m(), k = params.k();
  TensorD s(m, k);
  std::vector<double> hi, mk;
  for (std::size_t i = 0; i < m; ++i) {
    auto h = as_double_row(params.item_reps, i, hi);
    for (std::size_t c = 0; c < k; ++c) {
      auto p = as_double_row(params.prototypes, c, mk);
      s(i, c) = similarity_value(h, p, params.similarity) / params.tau;
    }
  }
  return s;
}

ConceptAssignment hard_assignment(const TensorD& logits) {
  ConceptAssignment c{TensorD(logits.rows(), logits.cols()), true};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    const auto best = std::max_element(r.begin(), r.end()) - r.begin();
    c.weights(i, static_cast<std::size_t>(best)) = 1.0;
  }
  return c;
}

ConceptAssignment sample_assignment(const TensorD& logits, double lambda, Mode mode,
                                    const TensorD& gumbel) {
  if (mode == Mode::kInfer) return hard_assignment(logits);
  require(lambda > 0.0, "Gumbel-Softmax temperature must be > 0");
  if (!gumbel.same_shape(logits)) fail(ErrorKind::kDimension, "gumbel noise shape");
  ConceptAssignment c{TensorD(logits.rows(), logits.cols()), false};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < logits.cols(); ++k)
      mx = std::max(mx, (logits(i, k) + gumbel(i, k)) / lambda);
    double s = 0.0;
    for (std::size_t k = 0; k < logits.cols(); ++k) {
      c.weights(i, k) = std::exp((logits(i, k) + gumbel(i, k)) / lambda - mx);
      s += c.weights(i, k);
    }
    for (std::size_t k = 0; k < logits.cols(); ++k) c.weights(i, k) /= s;
  }
  return c;
}

ConceptAssignment sample_assignment(const TensorD& logits, double lambda, Mode mode,
                                    Rng& rng) {
  if (mode == Mode::kInfer) return hard_assignment(logits);
  TensorD g(logits.rows(), logits.cols());
  for (auto& v : g.flat()) v = rng.gumbel();
  return sample_assignment(logits, lambda, mode, g);
}

template <typename T>
TensorD pooled_context(std::span<const Index> row, const ConceptAssignment& c,
                       const BasicModelParams<T>& params) {
  const std::size_t k = params.k(), d = params.d();
  TensorD v(k, d);
  std::vector<double> sq(k, 0.0);
  for (Index i : row) {
    auto t = params.context_reps.row(i);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double w = c.weights(i, kk);
      if (w == 0.0) continue;
      sq[kk] += w * w;
      for (std::size_t j = 0; j < d; ++j) v(kk, j) += w * static_cast<double>(t[j]);
    }
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double den = std::sqrt(sq[kk] + kPoolEps);
    for (std::size_t j = 0; j < d; ++j) v(kk, j) /= den;
  }
  return v;
}

template <typename T>
UserPosterior encode_user(std::span<const Index> row, const ConceptAssignment& c,
                          const BasicModelParams<T>& params, Mode mode,
                          const UserNoise* noise) {
  require(!row.empty(), "encode: user row must be nonempty");
  const std::size_t k = params.k(), d = params.d();
  TensorD x = pooled_context(row, c, params);
  for (std::size_t l = 0; l < params.mlp.size(); ++l) {
    if (mode == Mode::kTrain && noise) {
      const TensorD& mask = noise->dropout_masks.at(l);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
    }
    const auto w = params.mlp[l].weight.template cast<double>();
    TensorD y = macrid::matmul(x, w);
    const auto& b = params.mlp[l].bias;
    const bool last = l + 1 == params.mlp.size();
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t j = 0; j < y.cols(); ++j) {
        y(r, j) += static_cast<double>(b[j]);
        if (!last) y(r, j) = std::tanh(y(r, j));
      }
    x = std::move(y);
  }
  UserPosterior post{TensorD(k, d), TensorD(k, d), TensorD(k, d)};
  for (std::size_t kk = 0; kk < k; ++kk) {
    double n = 0.0;
    for (std::size_t j = 0; j < d; ++j) n += x(kk, j) * x(kk, j);
    n = std::sqrt(n);
    for (std::size_t j = 0; j < d; ++j) {
      post.mu(kk, j) = x(kk, j) / (n + 1e-8);
      const double e = std::clamp(-0.5 * x(kk, d + j), -kLogSigmaBound, kLogSigmaBound);
      post.sigma(kk, j) = params.sigma0 * std::exp(e);
      post.z(kk, j) = post.mu(kk, j);
      if (mode == Mode::kTrain && noise) post.z(kk, j) += noise->eps(kk, j) * post.sigma(kk, j);
    }
  }
  return post;
}

template <typename T>
std::vector<UserPosterior> encode(std::span<const std::vector<Index>> rows,
                                  const ConceptAssignment& c,
                                  const BasicModelParams<T>& params,
                                  const HyperParams& hp, Mode mode, Rng& rng) {
  const BatchNoise noise = sample_noise(rows, params, hp, mode, rng);
  std::vector<UserPosterior> out;
  out.reserve(rows.size());
  for (std::size_t u = 0; u < rows.size(); ++u)
    out.push_back(encode_user<T>(rows[u], c, params, mode, &noise.users[u]));
  return out;
}

template <typename T>
std::vector<double> raw_scores(const TensorD& z, const ConceptAssignment& c,
                               const BasicModelParams<T>& params) {
  const std::size_t m = params.m(), k = params.k();
  // logits[k, i] = sim(z_k, h_i) / tau
  TensorD zn = z;
  TensorD hn = params.item_reps.template cast<double>();
  if (params.similarity == Similarity::kCosine) {
    auto normalize = [](TensorD& t) {
      for (std::size_t r = 0; r < t.rows(); ++r) {
        const double n = l2_norm<double>(t.row(r)) + 1e-8;
        for (auto& v : t.row(r)) v /= n;
      }
    };
    normalize(zn);
    normalize(hn);
  }
  const TensorD logits = macrid::matmul(zn, hn, false, true);
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t kk = 0; kk < k; ++kk)
      if (c.weights(i, kk) > 0.0) mx = std::max(mx, logits(kk, i) / params.tau);
    double s = 0.0;
    for (std::size_t kk = 0; kk < k; ++kk)
      if (c.weights(i, kk) > 0.0) s += c.weights(i, kk) * std::exp(logits(kk, i) / params.tau - mx);
    out[i] = mx + std::log(s);
  }
  return out;
}

template <typename T>
std::vector<double> decode_scores(const TensorD& z, const ConceptAssignment& c,
                                  const BasicModelParams<T>& params,
                                  std::span<const Index> candidates) {
  require(!candidates.empty(), "decode: candidate set must be nonempty");
  const auto raw = raw_scores(z, c, params);
  std::vector<double> out;
  out.reserve(candidates.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (Index i : candidates) mx = std::max(mx, raw.at(i));
  double s = 0.0;
  for (Index i : candidates) s += std::exp(raw[i] - mx);
  const double lse = mx + std::log(s);
  for (Index i : candidates) out.push_back(raw[i] - lse);
  return out;
}

double kl_gaussian(const UserPosterior& post, double sigma0) {
  double kl = 0.0;
  const double s0sq = sigma0 * sigma0;
  for (std::size_t i = 0; i < post.mu.size(); ++i) {
    const double s = post.sigma[i], mu = post.mu[i];
    require(s > 0.0, "kl_gaussian: sigma must be positive");
    kl += std::log(sigma0 / s) + (s * s + mu * mu) / (2.0 * s0sq) - 0.5;
  }
  return kl;
}

namespace {

// Candidate list (positives first) and the number of positives.
std::vector<Index> candidates_for(const std::vector<Index>& row, const UserNoise& noise,
                                  std::size_t m, bool full) {
  if (full) {
    std::vector<Index> all(m);
    std::iota(all.begin(), all.end(), Index{0});
    return all;
  }
  std::vector<Index> out = row;
  out.insert(out.end(), noise.negatives.begin(), noise.negatives.end());
  return out;
}

}  // namespace

template <typename T>
LossResult<T> loss(std::span<const std::vector<Index>> rows,
                   const BasicModelParams<T>& params, const HyperParams& hp,
                   Mode mode, const BatchNoise& noise, bool with_grad) {
  require(!rows.empty(), "loss: empty batch");
  using ad::Var;
  ad::Tape<T> tape;
  const std::size_t m = params.m(), d = params.d();
  const bool cosine_sim = params.similarity == Similarity::kCosine;
  const bool train = mode == Mode::kTrain;
  const bool full = hp.negatives_for(m) == kFullSoftmax;
  const double inv_tau = 1.0 / params.tau;

  std::vector<Var<T>> theta;
  for (const auto* t : params.tensors()) theta.push_back(tape.parameter(*t));
  Var<T> protos = theta[0], items = theta[1], context = theta[2];

  Var<T> sim = cosine_sim ? ad::cosine(items, protos) : ad::matmul(items, protos, false, true);
  Var<T> logits = ad::scale(sim, inv_tau);
  Var<T> c;
  if (train) {
    Var<T> g = tape.constant(noise.gumbel.template cast<T>());
    c = ad::softmax_rows(ad::scale(ad::add(logits, g), 1.0 / hp.gumbel_temp));
  } else {
    c = tape.constant(infer_assignment(params).weights.template cast<T>());
  }
  Var<T> dec_items = cosine_sim ? ad::row_l2_normalize(items) : items;

  const double inv_2s0sq = 1.0 / (2.0 * params.sigma0 * params.sigma0);
  std::vector<Var<T>> user_terms;
  double nll_total = 0.0, kl_total = 0.0;
  for (std::size_t u = 0; u < rows.size(); ++u) {
    const auto& row = rows[u];
    require(!row.empty(), "loss: user row must be nonempty");
    std::vector<std::size_t> idx(row.begin(), row.end());
    Var<T> cu = ad::gather_rows(c, idx);
    Var<T> tu = ad::gather_rows(context, idx);
    Var<T> num = ad::matmul(cu, tu, true, false);                          // K x d
    Var<T> den = ad::sqrt(ad::add_scalar(ad::transpose(ad::sum_rows(ad::mul(cu, cu))), kPoolEps));
    Var<T> x = ad::div(num, den);
    for (std::size_t l = 0; l < params.mlp.size(); ++l) {
      if (train) x = ad::apply_mask(x, noise.users[u].dropout_masks.at(l).template cast<T>());
      x = ad::add(ad::matmul(x, theta[3 + 2 * l]), theta[4 + 2 * l]);
      if (l + 1 < params.mlp.size()) x = ad::tanh(x);
    }
    Var<T> mu = ad::row_l2_normalize(ad::slice_cols(x, 0, d));
    Var<T> log_ratio = ad::clamp(ad::scale(ad::slice_cols(x, d, 2 * d), -0.5),
                                 -kLogSigmaBound, kLogSigmaBound);  // ln(sigma / sigma0)
    Var<T> sigma = ad::scale(ad::exp(log_ratio), params.sigma0);
    Var<T> z = train ? ad::add(mu, ad::mul(tape.constant(noise.users[u].eps.template cast<T>()), sigma))
                     : mu;
    Var<T> zs = cosine_sim ? ad::row_l2_normalize(z) : z;
    Var<T> dec_logits = ad::scale(ad::matmul(zs, dec_items, false, true), inv_tau);  // K x M
    Var<T> raw = ad::log_mix_exp(dec_logits, c);                                     // 1 x M
    std::vector<std::size_t> pos;
    if (full) {
      pos.assign(row.begin(), row.end());
    } else {
      const auto cand = candidates_for(row, noise.users[u], m, false);
      raw = ad::gather_cols(raw, std::vector<std::size_t>(cand.begin(), cand.end()));
      pos.resize(row.size());
      std::iota(pos.begin(), pos.end(), std::size_t{0});
    }
    Var<T> logp = ad::log_softmax_rows(raw);
    Var<T> nll = ad::scale(ad::sum(ad::gather_cols(logp, pos)), -1.0);
    Var<T> quad = ad::scale(ad::add(ad::mul(sigma, sigma), ad::mul(mu, mu)), inv_2s0sq);
    Var<T> kl = ad::sum(ad::add_scalar(ad::sub(quad, log_ratio), -0.5));
    nll_total += nll.value()[0];
    kl_total += kl.value()[0];
    user_terms.push_back(ad::add(nll, ad::scale(kl, hp.beta)));
  }
  Var<T> total = user_terms[0];
  for (std::size_t u = 1; u < user_terms.size(); ++u) total = ad::add(total, user_terms[u]);
  total = ad::scale(total, 1.0 / static_cast<double>(rows.size()));
  if (hp.l2_reg > 0.0) {
    for (Var<T> t : theta) total = ad::add(total, ad::scale(ad::sum(ad::mul(t, t)), hp.l2_reg));
  }

  LossResult<T> out;
  out.loss = total.value()[0];
  out.nll = nll_total / static_cast<double>(rows.size());
  out.kl = kl_total / static_cast<double>(rows.size());
  if (with_grad) {
    tape.backward(total);
    for (Var<T> t : theta) out.grads.push_back(t.grad());
  }
  return out;
}

template <typename T>
LossResult<T> loss(std::span<const std::vector<Index>> rows,
                   const BasicModelParams<T>& params, const HyperParams& hp,
                   Mode mode, Rng& rng) {
  const BatchNoise noise = sample_noise(rows, params, hp, mode, rng);
  return loss(rows, params, hp, mode, noise, true);
}

template <typename T>
double reference_loss(std::span<const std::vector<Index>> rows,
                      const BasicModelParams<T>& params, const HyperParams& hp,
                      Mode mode, const BatchNoise& noise) {
  const TensorD logits = prototype_logits(params);
  const ConceptAssignment c = sample_assignment(logits, hp.gumbel_temp, mode, noise.gumbel);
  const bool full = hp.negatives_for(params.m()) == kFullSoftmax;
  double total = 0.0;
  for (std::size_t u = 0; u < rows.size(); ++u) {
    const UserPosterior post = encode_user<T>(rows[u], c, params, mode, &noise.users[u]);
    const auto cand = candidates_for(rows[u], noise.users[u], params.m(), full);
    const auto logp = decode_scores(post.z, c, params, cand);
    double nll = 0.0;
    if (full) {
      for (Index i : rows[u]) nll -= logp[i];
    } else {
      for (std::size_t p = 0; p < rows[u].size(); ++p) nll -= logp[p];
    }
    total += nll + hp.beta * kl_gaussian(post, params.sigma0);
  }
  total /= static_cast<double>(rows.size());
  double l2 = 0.0;
  for (const auto* t : params.tensors()) l2 += t->squared_norm();
  return total + hp.l2_reg * l2;
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(std::ostream& out, const ModelParams& params, const Vocabulary& items) {
  nlohmann::json h;
  h["M"] = params.m();
  h["K"] = params.k();
  h["d"] = params.d();
  h["tau"] = params.tau;
  h["sigma0"] = params.sigma0;
  h["hidden"] = params.hidden_sizes();
  h["similarity"] = to_string(params.similarity);
  h["items"] = items.ids();
  const std::string header = h.dump();
  out.write("MCRD1", 5);
  io::put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto* t : params.tensors())
    for (float v : t->flat()) io::put_f32(out, v);
  if (!out) fail(ErrorKind::kIo, "failed writing checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Vocabulary& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  write_checkpoint(out, params, items);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[5];
  in.read(magic, 5);
  if (!in || std::string(magic, 5) != "MCRD1") fail(ErrorKind::kData, "not a checkpoint (bad magic)");
  const std::uint64_t len = io::get_u64(in);
  if (len > (1ULL << 32)) fail(ErrorKind::kData, "corrupt checkpoint header");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorKind::kData, "truncated checkpoint header");
  Checkpoint ck;
  try {
    auto h = nlohmann::json::parse(header);
    const auto m = h.at("M").get<std::size_t>();
    const auto k = h.at("K").get<std::size_t>();
    const auto d = h.at("d").get<std::size_t>();
    auto& p = ck.params;
    p.tau = h.at("tau").get<double>();
    p.sigma0 = h.at("sigma0").get<double>();
    p.similarity = similarity_from_string(h.value("similarity", std::string("cosine")));
    p.prototypes = Tensor(k, d);
    p.item_reps = Tensor(m, d);
    p.context_reps = Tensor(m, d);
    std::size_t in_dim = d;
    auto hidden = h.at("hidden").get<std::vector<std::size_t>>();
    hidden.push_back(2 * d);
    for (std::size_t out_dim : hidden) {
      p.mlp.push_back({Tensor(in_dim, out_dim), Tensor(1, out_dim)});
      in_dim = out_dim;
    }
    ck.items = Vocabulary(h.at("items").get<std::vector<std::string>>());
    if (ck.items.size() != m) fail(ErrorKind::kData, "checkpoint vocabulary size != M");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed checkpoint header: ") + e.what());
  }
  for (auto* t : ck.params.tensors())
    for (float& v : t->flat()) v = io::get_f32(in);
  ck.params.validate();
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kData, "cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define MACRID_INSTANTIATE_MODEL(T)                                                   \
  template BatchNoise sample_noise<T>(std::span<const std::vector<Index>>,            \
                                      const BasicModelParams<T>&, const HyperParams&, \
                                      Mode, Rng&);                                    \
  template TensorD prototype_logits<T>(const BasicModelParams<T>&);                   \
  template TensorD pooled_context<T>(std::span<const Index>, const ConceptAssignment&, \
                                     const BasicModelParams<T>&);                     \
  template UserPosterior encode_user<T>(std::span<const Index>,                       \
                                        const ConceptAssignment&,                     \
                                        const BasicModelParams<T>&, Mode,             \
                                        const UserNoise*);                            \
  template std::vector<UserPosterior> encode<T>(                                      \
      std::span<const std::vector<Index>>, const ConceptAssignment&,                  \
      const BasicModelParams<T>&, const HyperParams&, Mode, Rng&);                    \
  template std::vector<double> raw_scores<T>(const TensorD&, const ConceptAssignment&, \
                                             const BasicModelParams<T>&);             \
  template std::vector<double> decode_scores<T>(                                      \
      const TensorD&, const ConceptAssignment&, const BasicModelParams<T>&,           \
      std::span<const Index>);                                                        \
  template LossResult<T> loss<T>(std::span<const std::vector<Index>>,                 \
                                 const BasicModelParams<T>&, const HyperParams&,      \
                                 Mode, const BatchNoise&, bool);                      \
  template LossResult<T> loss<T>(std::span<const std::vector<Index>>,                 \
                                 const BasicModelParams<T>&, const HyperParams&,      \
                                 Mode, Rng&);                                         \
  template double reference_loss<T>(std::span<const std::vector<Index>>,              \
                                    const BasicModelParams<T>&, const HyperParams&,   \
                                    Mode, const BatchNoise&);

MACRID_INSTANTIATE_MODEL(float)
MACRID_INSTANTIATE_MODEL(double)

#undef MACRID_INSTANTIATE_MODEL

}  // namespace macrid
