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

// Macro-micro disentangled VAE for implicit feedback.
//
// Items are softly assigned to K concepts through cosine similarity between
// item representations and concept prototypes. A user's history is pooled
// per concept through the context representations, pushed through a shared
// MLP, and turned into one unit-norm Gaussian component per concept. The
// decoder scores item i by mixing exp(cos(z_k, h_i) / tau) over the item's
// concept weights and normalizing over the candidate set.
//
// Two evaluation routes exist for the forward pass: the autodiff route in
// loss(), used for training, and the plain double-precision route
// (prototype_logits / encode / decode_scores / kl_gaussian), used for
// inference and as an independent cross-check of the training objective.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "macrid/corpus.hpp"
#include "macrid/rng.hpp"
#include "macrid/tensor.hpp"

namespace macrid {

enum class Similarity { kCosine, kInner };
enum class Mode { kTrain, kInfer };

std::string to_string(Similarity s);
Similarity similarity_from_string(const std::string& s);

// Sentinel values for HyperParams::neg_samples.
inline constexpr std::size_t kFullSoftmax = 0;
inline constexpr std::size_t kAutoNegatives = std::numeric_limits<std::size_t>::max();

struct HyperParams {
  std::size_t k = 7;
  std::size_t d = 100;
  double beta = 0.2;
  double sigma0 = 0.1;
  double tau = 0.1;
  double gumbel_temp = 1.0;
  double lr = 1e-3;
  double l2_reg = 0.0;
  double dropout_rate = 0.5;
  std::size_t hidden_layers = 0;
  std::size_t hidden_width = 100;
  // kAutoNegatives: full softmax when M <= 20,000, else 1,000 negatives.
  std::size_t neg_samples = kAutoNegatives;
  Similarity similarity = Similarity::kCosine;

  // Throws Error(kUsage) when a value falls outside its allowed range.
  void validate() const;
  // Number of sampled negatives for a catalog of m items; 0 means full.
  std::size_t negatives_for(std::size_t m) const;
};

template <typename T>
struct DenseLayer {
  BasicTensor<T> weight;  // in x out
  BasicTensor<T> bias;    // 1 x out

  bool operator==(const DenseLayer&) const = default;
};

template <typename T>
struct BasicModelParams {
  BasicTensor<T> prototypes;    // K x d
  BasicTensor<T> item_reps;     // M x d, decoder side
  BasicTensor<T> context_reps;  // M x d, encoder side
  std::vector<DenseLayer<T>> mlp;
  double tau = 0.1;
  double sigma0 = 0.1;
  Similarity similarity = Similarity::kCosine;

  std::size_t k() const { return prototypes.rows(); }
  std::size_t m() const { return item_reps.rows(); }
  std::size_t d() const { return item_reps.cols(); }
  std::vector<std::size_t> hidden_sizes() const;

  // All trainable tensors in checkpoint order: prototypes, item_reps,
  // context_reps, then (weight, bias) per MLP layer from input to output.
  std::vector<BasicTensor<T>*> tensors();
  std::vector<const BasicTensor<T>*> tensors() const;
  std::size_t parameter_count() const;
  void validate() const;

  template <typename U>
  BasicModelParams<U> cast() const {
    BasicModelParams<U> out;
    out.prototypes = prototypes.template cast<U>();
    out.item_reps = item_reps.template cast<U>();
    out.context_reps = context_reps.template cast<U>();
    for (const auto& l : mlp)
      out.mlp.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
    out.tau = tau;
    out.sigma0 = sigma0;
    out.similarity = similarity;
    return out;
  }

  bool operator==(const BasicModelParams&) const = default;
};

using ModelParams = BasicModelParams<float>;

// Embeddings ~ N(0, 1/d), MLP weights ~ N(0, 1/fan_in), biases 0;
// prototypes copy K distinct randomly chosen item representations.
ModelParams init_params(std::size_t n_items, const HyperParams& hp, std::uint64_t seed);

// Per-item concept weights, M x K, rows on the simplex.
struct ConceptAssignment {
  TensorD weights;
  bool hard = false;

  std::size_t concept_of(std::size_t item) const;
  std::vector<std::size_t> concepts() const;
};

// Per-concept posterior for one user; K x d each.
struct UserPosterior {
  TensorD mu;
  TensorD sigma;
  TensorD z;
};

// Noise consumed by one stochastic pass. Drawing it up front lets the
// autodiff route and the plain route see identical randomness.
struct UserNoise {
  std::vector<TensorD> dropout_masks;  // one per MLP layer input
  TensorD eps;                         // K x d standard normal draws
  std::vector<Index> negatives;        // sampled negatives (sampled softmax)
};

struct BatchNoise {
  TensorD gumbel;  // M x K standard Gumbel draws
  std::vector<UserNoise> users;
};

template <typename T>
BatchNoise sample_noise(std::span<const std::vector<Index>> rows,
                        const BasicModelParams<T>& params, const HyperParams& hp,
                        Mode mode, Rng& rng);

// s[i, k] = cos(h_i, m_k) / tau (inner product / tau in kInner mode).
template <typename T>
TensorD prototype_logits(const BasicModelParams<T>& params);

// Train: per row softmax((s + g) / lambda) with g standard Gumbel.
// Infer: one-hot at the argmax logit, lowest index on ties.
ConceptAssignment sample_assignment(const TensorD& logits, double lambda, Mode mode,
                                    Rng& rng);
ConceptAssignment sample_assignment(const TensorD& logits, double lambda, Mode mode,
                                    const TensorD& gumbel);
ConceptAssignment hard_assignment(const TensorD& logits);

template <typename T>
ConceptAssignment infer_assignment(const BasicModelParams<T>& params) {
  return hard_assignment(prototype_logits(params));
}

// Pooled per-concept encoder input: (sum_i c_ik t_i) / sqrt(sum_i c_ik^2 + 1e-8).
template <typename T>
TensorD pooled_context(std::span<const Index> row, const ConceptAssignment& c,
                       const BasicModelParams<T>& params);

template <typename T>
UserPosterior encode_user(std::span<const Index> row, const ConceptAssignment& c,
                          const BasicModelParams<T>& params, Mode mode,
                          const UserNoise* noise);

template <typename T>
std::vector<UserPosterior> encode(std::span<const std::vector<Index>> rows,
                                  const ConceptAssignment& c,
                                  const BasicModelParams<T>& params,
                                  const HyperParams& hp, Mode mode, Rng& rng);

// Unnormalized item scores ln sum_k c_ik exp(sim(z_k, h_i) / tau) for every
// item in the catalog.
template <typename T>
std::vector<double> raw_scores(const TensorD& z, const ConceptAssignment& c,
                               const BasicModelParams<T>& params);

// Log-softmax of raw_scores restricted to `candidates` (in candidate order).
template <typename T>
std::vector<double> decode_scores(const TensorD& z, const ConceptAssignment& c,
                                  const BasicModelParams<T>& params,
                                  std::span<const Index> candidates);

// KL(N(mu, diag(sigma^2)) || N(0, sigma0^2 I)).
double kl_gaussian(const UserPosterior& post, double sigma0);

template <typename T>
struct LossResult {
  double loss = 0.0;  // (1/B) sum_u (nll_u + beta * kl_u) + l2 * ||theta||^2
  double nll = 0.0;   // batch mean
  double kl = 0.0;    // batch mean
  std::vector<BasicTensor<T>> grads;  // same order as params.tensors()
};

// Minimization objective and its gradient via the autodiff tape.
template <typename T>
LossResult<T> loss(std::span<const std::vector<Index>> rows,
                   const BasicModelParams<T>& params, const HyperParams& hp,
                   Mode mode, const BatchNoise& noise, bool with_grad = true);

template <typename T>
LossResult<T> loss(std::span<const std::vector<Index>> rows,
                   const BasicModelParams<T>& params, const HyperParams& hp,
                   Mode mode, Rng& rng);

// Same objective evaluated only through the plain route (no gradients).
template <typename T>
double reference_loss(std::span<const std::vector<Index>> rows,
                      const BasicModelParams<T>& params, const HyperParams& hp,
                      Mode mode, const BatchNoise& noise);

// Checkpoint: "MCRD1", u64 header length, JSON header
// {M, K, d, tau, sigma0, hidden, similarity, items}, then little-endian f32
// arrays in params.tensors() order.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Vocabulary& items);
void write_checkpoint(std::ostream& out, const ModelParams& params,
                      const Vocabulary& items);

struct Checkpoint {
  ModelParams params;
  Vocabulary items;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint read_checkpoint(std::istream& in);

}  // namespace macrid
