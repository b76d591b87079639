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

#include "macrid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "macrid/error.hpp"
#include "macrid/parallel.hpp"

namespace macrid {

std::vector<Index> top_k(std::span<const double> scores, std::size_t k,
                         const std::vector<bool>& excluded) {
  std::vector<Index> idx;
  idx.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (excluded.empty() || !excluded[i]) idx.push_back(static_cast<Index>(i));
  k = std::min(k, idx.size());
  auto better = [&scores](Index a, Index b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> relevant,
                 std::size_t k) {
  if (relevant.empty()) return 0.0;
  double dcg = 0.0, idcg = 0.0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r)
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r]))
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

double recall_at_k(std::span<const Index> ranked, std::span<const Index> relevant,
                   std::size_t k) {
  if (relevant.empty()) return 0.0;
  std::size_t hits = 0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r)
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(std::min(k, relevant.size()));
}

SplitPart split_part_from_string(const std::string& s) {
  if (s == "validation") return SplitPart::kValidation;
  if (s == "test") return SplitPart::kTest;
  fail(ErrorKind::kUsage, "unknown split '" + s + "' (expected validation|test)");
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return s;
}

template <typename T>
RankingResult evaluate(const BasicModelParams<T>& params, const SplitSpec& split,
                       SplitPart which) {
  const auto& users = which == SplitPart::kValidation ? split.validation_users : split.test_users;
  require(!users.empty(), "evaluate: no held-out users in the requested split");
  const ConceptAssignment c = infer_assignment(params);
  const std::size_t m = params.m();
  std::vector<UserRanking> slots(users.size());
  std::vector<char> ok(users.size(), 0);
  parallel_for(users.size(), [&](std::size_t n) {
    const Index u = users[n];
    const auto fi = split.foldin.find(u);
    const auto hi = split.heldout.find(u);
    if (fi == split.foldin.end() || hi == split.heldout.end() || fi->second.empty() ||
        hi->second.empty())
      return;
    const UserPosterior post = encode_user(fi->second, c, params, Mode::kInfer, nullptr);
    const std::vector<double> scores = raw_scores(post.z, c, params);
    std::vector<bool> excluded(m, false);
    for (Index i : fi->second) excluded[i] = true;
    const auto ranked = top_k(scores, 100, excluded);
    for (Index i : ranked) {
      if (excluded[i]) fail(ErrorKind::kPrecondition, "evaluate ranked a fold-in item");
    }
    slots[n] = {u, ndcg_at_k(ranked, hi->second, 100), recall_at_k(ranked, hi->second, 20),
                recall_at_k(ranked, hi->second, 50)};
    ok[n] = 1;
  });
  RankingResult out;
  std::vector<double> nd, r20, r50;
  for (std::size_t n = 0; n < users.size(); ++n) {
    if (!ok[n]) {
      ++out.skipped;
      continue;
    }
    out.per_user.push_back(slots[n]);
    nd.push_back(slots[n].ndcg100);
    r20.push_back(slots[n].recall20);
    r50.push_back(slots[n].recall50);
  }
  if (out.skipped > 0) {
    std::cerr << "warning: skipped " << out.skipped
              << " held-out users with an empty fold-in or held-out set\n";
  }
  out.ndcg100 = summarize(nd);
  out.recall20 = summarize(r20);
  out.recall50 = summarize(r50);
  return out;
}

template RankingResult evaluate<float>(const BasicModelParams<float>&, const SplitSpec&,
                                       SplitPart);
template RankingResult evaluate<double>(const BasicModelParams<double>&, const SplitSpec&,
                                        SplitPart);

IndependenceScore independence(const TensorD& reps) {
  const std::size_t n = reps.rows(), d = reps.cols();
  if (d < 2) fail(ErrorKind::kDimension, "independence needs at least 2 dimensions");
  require(n >= 2, "independence needs at least 2 rows");
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) mean[j] += reps(r, j);
  for (double& v : mean) v /= static_cast<double>(n);
  TensorD centered(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) centered(r, j) = reps(r, j) - mean[j];
  const TensorD cov = matmul(centered, centered, true, false);
  IndependenceScore out;
  out.dim = d;
  out.corr = TensorD(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    sd[j] = std::sqrt(cov(j, j));
    if (!(sd[j] > 0.0)) ++out.constant_columns;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    out.corr(i, i) = 1.0;
    for (std::size_t j = i + 1; j < d; ++j) {
      double c = 0.0;
      if (sd[i] > 0.0 && sd[j] > 0.0) c = std::clamp(cov(i, j) / (sd[i] * sd[j]), -1.0, 1.0);
      out.corr(i, j) = out.corr(j, i) = c;
      total += std::abs(c);
    }
  }
  if (out.constant_columns > 0) {
    std::cerr << "warning: " << out.constant_columns
              << " constant columns treated as uncorrelated\n";
  }
  out.value = 1.0 - 2.0 / (static_cast<double>(d) * static_cast<double>(d - 1)) * total;
  return out;
}

Representation representation_from_string(const std::string& s) {
  if (s == "mean") return Representation::kMean;
  if (s == "sample") return Representation::kSample;
  fail(ErrorKind::kUsage, "unknown representation '" + s + "' (expected mean|sample)");
}

template <typename T>
TensorD user_codes(const BasicModelParams<T>& params, std::span<const std::vector<Index>> rows,
                   Representation rep, std::uint64_t seed, std::optional<std::size_t> concept_id) {
  const std::size_t k = params.k(), d = params.d();
  if (concept_id && *concept_id >= k) fail(ErrorKind::kUsage, "concept index out of range");
  const ConceptAssignment c = infer_assignment(params);
  const std::size_t width = concept_id ? d : k * d;
  TensorD out(rows.size(), width);
  parallel_for(rows.size(), [&](std::size_t u) {
    const UserPosterior post = encode_user(rows[u], c, params, Mode::kInfer, nullptr);
    Rng rng(derive_seed(seed, u));
    for (std::size_t kk = 0; kk < k; ++kk) {
      for (std::size_t j = 0; j < d; ++j) {
        double v = post.mu(kk, j);
        if (rep == Representation::kSample) v += post.sigma(kk, j) * rng.normal();
        if (concept_id && kk != *concept_id) continue;
        out(u, (concept_id ? 0 : kk * d) + j) = v;
      }
    }
  });
  return out;
}

template <typename T>
TensorD user_means(const BasicModelParams<T>& params, std::span<const std::vector<Index>> rows,
                   std::optional<std::size_t> concept_id) {
  return user_codes(params, rows, Representation::kMean, 0, concept_id);
}

#define MACRID_INSTANTIATE_CODES(T)                                                         \
  template TensorD user_codes<T>(const BasicModelParams<T>&,                               \
                                 std::span<const std::vector<Index>>, Representation,      \
                                 std::uint64_t, std::optional<std::size_t>);               \
  template TensorD user_means<T>(const BasicModelParams<T>&,                               \
                                 std::span<const std::vector<Index>>, std::optional<std::size_t>);
MACRID_INSTANTIATE_CODES(float)
MACRID_INSTANTIATE_CODES(double)
#undef MACRID_INSTANTIATE_CODES

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) {
    fail(ErrorKind::kDimension, "adjusted_rand_index: " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + " labels");
  }
  const double n = static_cast<double>(a.size());
  auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [_, v] : table) index += choose2(v);
  for (const auto& [_, v] : rows) sum_a += choose2(v);
  for (const auto& [_, v] : cols) sum_b += choose2(v);
  const double expected = sum_a * sum_b / choose2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  // Both labelings trivial (one cluster each, or all singletons).
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

double cluster_agreement(const ConceptAssignment& assignment,
                         std::span<const std::size_t> labels) {
  if (labels.size() != assignment.weights.rows()) {
    fail(ErrorKind::kDimension, "cluster_agreement: " + std::to_string(labels.size()) +
                                    " labels for " +
                                    std::to_string(assignment.weights.rows()) + " items");
  }
  const auto concepts = assignment.concepts();
  return adjusted_rand_index(concepts, labels);
}

std::vector<double> component_confidence(const ConceptAssignment& assignment,
                                         std::span<const Index> items) {
  std::vector<double> conf(assignment.weights.cols(), 0.0);
  for (Index i : items)
    for (std::size_t k = 0; k < conf.size(); ++k) conf[k] += assignment.weights(i, k);
  return conf;
}

void write_embeddings(std::ostream& out, const ModelParams& params,
                      const ConceptAssignment& assignment, const Vocabulary& items,
                      std::span<const ExportedUser> users) {
  const std::size_t m = params.m(), d = params.d(), k = params.k();
  if (items.size() != m) fail(ErrorKind::kDimension, "export: vocabulary size != M");
  out << std::setprecision(9);
  out << "# items\t" << m << '\t' << d << '\n';
  for (std::size_t i = 0; i < m; ++i) {
    out << items.id(static_cast<Index>(i)) << '\t' << assignment.concept_of(i);
    for (float v : params.item_reps.row(i)) out << '\t' << v;
    out << '\n';
  }
  out << "# users\t" << users.size() * k << '\t' << d << '\n';
  for (const auto& u : users) {
    const UserPosterior post = encode_user(u.items, assignment, params, Mode::kInfer, nullptr);
    const auto conf = component_confidence(assignment, u.items);
    for (std::size_t kk = 0; kk < k; ++kk) {
      out << u.id << '\t' << kk << '\t' << conf[kk];
      for (double v : post.mu.row(kk)) out << '\t' << v;
      out << '\n';
    }
  }
}

void export_embeddings(const std::filesystem::path& path, const ModelParams& params,
                       const ConceptAssignment& assignment, const Vocabulary& items,
                       std::span<const ExportedUser> users) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  write_embeddings(out, params, assignment, items, users);
  if (!out) fail(ErrorKind::kIo, "failed writing " + path.string());
}

EmbeddingTable read_embeddings(std::istream& in) {
  EmbeddingTable t;
  std::string line;
  int section = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# items", 0) == 0) section = 1;
      else if (line.rfind("# users", 0) == 0) section = 2;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) f.push_back(tok);
    try {
      if (section == 1 && f.size() >= 2) {
        EmbeddingTable::ItemRow r{f[0], std::stoul(f[1]), {}};
        for (std::size_t j = 2; j < f.size(); ++j) r.values.push_back(std::stod(f[j]));
        t.items.push_back(std::move(r));
      } else if (section == 2 && f.size() >= 3) {
        EmbeddingTable::UserRow r{f[0], std::stoul(f[1]), std::stod(f[2]), {}};
        for (std::size_t j = 3; j < f.size(); ++j) r.values.push_back(std::stod(f[j]));
        t.users.push_back(std::move(r));
      } else {
        throw ParseError(lineno, "unexpected embedding row");
      }
    } catch (const std::logic_error&) {
      throw ParseError(lineno, "malformed number in embedding row");
    }
  }
  return t;
}

}  // namespace macrid
