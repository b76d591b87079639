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

// Ranking metrics under the fold-in protocol, the independence score of a
// representation matrix, and cluster agreement between concept assignments
// and reference labels.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "macrid/corpus.hpp"
#include "macrid/model.hpp"
#include "macrid/tensor.hpp"

namespace macrid {

// Indices of the k highest scores, best first. Ties go to the lower index.
// Items flagged in `excluded` never appear.
std::vector<Index> top_k(std::span<const double> scores, std::size_t k,
                         const std::vector<bool>& excluded = {});

// Binary-gain NDCG@k with discount 1/log2(rank + 1); `relevant` is sorted.
double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> relevant,
                 std::size_t k);
// hits in the top k / min(k, |relevant|); `relevant` is sorted.
double recall_at_k(std::span<const Index> ranked, std::span<const Index> relevant,
                   std::size_t k);

struct UserRanking {
  Index user = 0;
  double ndcg100 = 0.0;
  double recall20 = 0.0;
  double recall50 = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double se = 0.0;  // sample deviation / sqrt(n)
};

struct RankingResult {
  std::vector<UserRanking> per_user;
  MetricSummary ndcg100;
  MetricSummary recall20;
  MetricSummary recall50;
  std::size_t skipped = 0;  // users with an empty fold-in or held-out set
};

enum class SplitPart { kValidation, kTest };
SplitPart split_part_from_string(const std::string& s);

// Encodes each held-out user from fold-in items (infer mode), ranks every
// item except the fold-in ones and scores the ranking against the held-out
// items. Users run in parallel; results are in user order.
template <typename T>
RankingResult evaluate(const BasicModelParams<T>& params, const SplitSpec& split,
                       SplitPart which);

MetricSummary summarize(const std::vector<double>& values);

struct IndependenceScore {
  double value = 0.0;
  std::size_t dim = 0;
  TensorD corr;                  // dim x dim Pearson correlations
  std::size_t constant_columns = 0;  // columns treated as uncorrelated
};

// 1 - 2/(d(d-1)) * sum_{i<j} |corr_ij| over the columns of reps (N x d).
IndependenceScore independence(const TensorD& reps);

// Infer-mode posterior means of the given users, one row per user, K*d
// columns (concept-major). With `concept_id` set, only that concept's d columns.
template <typename T>
TensorD user_means(const BasicModelParams<T>& params,
                   std::span<const std::vector<Index>> rows,
                   std::optional<std::size_t> concept_id = std::nullopt);

enum class Representation { kMean, kSample };
Representation representation_from_string(const std::string& s);

// Like user_means; kSample draws z = mu + sigma * eps from the infer-mode
// posterior instead, with noise seeded per user so the result does not
// depend on the thread count.
template <typename T>
TensorD user_codes(const BasicModelParams<T>& params, std::span<const std::vector<Index>> rows,
                   Representation rep, std::uint64_t seed = 0,
                   std::optional<std::size_t> concept_id = std::nullopt);

// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);
double cluster_agreement(const ConceptAssignment& assignment,
                         std::span<const std::size_t> labels);

// Embedding export for external projection tools. Tab-separated:
//   # items <M> <d>
//   item rows:  id, concept, h_0 .. h_{d-1}
//   # users <rows> <d>
//   user rows:  id, k, confidence, mu_0 .. mu_{d-1}
// where confidence is sum over the user's items of c_ik.
struct ExportedUser {
  std::string id;
  std::vector<Index> items;
};
void export_embeddings(const std::filesystem::path& path, const ModelParams& params,
                       const ConceptAssignment& assignment, const Vocabulary& items,
                       std::span<const ExportedUser> users);
void write_embeddings(std::ostream& out, const ModelParams& params,
                      const ConceptAssignment& assignment, const Vocabulary& items,
                      std::span<const ExportedUser> users);

struct EmbeddingTable {
  struct ItemRow {
    std::string id;
    std::size_t concept_id = 0;
    std::vector<double> values;
  };
  struct UserRow {
    std::string id;
    std::size_t k = 0;
    double confidence = 0.0;
    std::vector<double> values;
  };
  std::vector<ItemRow> items;
  std::vector<UserRow> users;
};
EmbeddingTable read_embeddings(std::istream& in);

// Per-concept confidence sum_{i in items} c_ik.
std::vector<double> component_confidence(const ConceptAssignment& assignment,
                                         std::span<const Index> items);

}  // namespace macrid
