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

// Brute-force reference implementations used as test oracles. They share
// no code with the library routines they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <utility>
#include <vector>

namespace macrid::testing {

struct NaiveMetrics {
  double ndcg100 = 0.0;
  double recall20 = 0.0;
  double recall50 = 0.0;
};

// Full sort of (score, index) pairs, fold-in items filtered afterwards.
inline NaiveMetrics naive_metrics(const std::vector<double>& scores,
                                  const std::set<std::size_t>& foldin,
                                  const std::set<std::size_t>& heldout) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < scores.size(); ++i) all.push_back({-scores[i], i});
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> ranking;
  for (const auto& [neg, i] : all)
    if (!foldin.count(i)) ranking.push_back(i);
  NaiveMetrics m;
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < ranking.size() && r < 100; ++r)
    if (heldout.count(ranking[r])) dcg += 1.0 / std::log2(r + 2.0);
  for (std::size_t r = 0; r < heldout.size() && r < 100; ++r) idcg += 1.0 / std::log2(r + 2.0);
  m.ndcg100 = dcg / idcg;
  auto recall = [&](std::size_t k) {
    double hits = 0.0;
    for (std::size_t r = 0; r < ranking.size() && r < k; ++r) hits += heldout.count(ranking[r]);
    return hits / static_cast<double>(std::min(k, heldout.size()));
  };
  m.recall20 = recall(20);
  m.recall50 = recall(50);
  return m;
}

// Adjusted Rand index from the four pair counts (Hubert-Arabie form).
inline double pair_counting_ari(const std::vector<std::size_t>& a,
                                const std::vector<std::size_t>& b) {
  double ss = 0, sd = 0, ds = 0, dd = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      (sa ? (sb ? ss : sd) : (sb ? ds : dd)) += 1;
    }
  const double den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
  if (den == 0.0) return 1.0;
  return 2.0 * (ss * dd - sd * ds) / den;
}

// Exhaustive maximum of the trajectory objective over one item per bin,
// computed directly from the representation rows.
inline double brute_force_objective(const std::vector<std::vector<double>>& reps,
                                    const std::vector<double>& anchor, std::size_t j,
                                    const std::vector<std::vector<std::size_t>>& bins,
                                    double tau, double gamma) {
  auto cos_wo = [j](const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (i != j) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
    return ab / ((std::sqrt(aa) + 1e-8) * (std::sqrt(bb) + 1e-8));
  };
  double best = -1.0;
  std::vector<std::size_t> pick(bins.size(), 0);
  while (true) {
    double s = 0.0;
    for (std::size_t t = 0; t < bins.size(); ++t) {
      s += std::exp(cos_wo(reps[bins[t][pick[t]]], anchor) / tau);
      for (std::size_t u = t + 1; u < bins.size(); ++u)
        s += gamma * std::exp(cos_wo(reps[bins[t][pick[t]]], reps[bins[u][pick[u]]]) / tau);
    }
    best = std::max(best, s);
    std::size_t t = 0;
    while (t < bins.size() && ++pick[t] == bins[t].size()) pick[t++] = 0;
    if (t == bins.size()) break;
  }
  return best;
}

// Index of the prototype with the largest cosine to h; first on ties.
inline std::size_t argmax_cosine(const std::vector<double>& h,
                                 const std::vector<std::vector<double>>& protos) {
  std::size_t best = 0;
  double best_s = -2.0;
  for (std::size_t k = 0; k < protos.size(); ++k) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < h.size(); ++i)
      ab += h[i] * protos[k][i], aa += h[i] * h[i], bb += protos[k][i] * protos[k][i];
    const double s = ab / ((std::sqrt(aa) + 1e-8) * (std::sqrt(bb) + 1e-8));
    if (s > best_s) best_s = s, best = k;
  }
  return best;
}

// Walks coordinate j from h[j] in steps of `step` until the nearest
// prototype changes or |x| passes `bound`; returns the last point inside.
inline double grid_scan_endpoint(std::vector<double> h, std::size_t j,
                                 const std::vector<std::vector<double>>& protos, double bound,
                                 double step) {
  const std::size_t k = argmax_cosine(h, protos);
  double x = h[j];
  while (std::abs(x + step) <= bound) {
    h[j] = x + step;
    if (argmax_cosine(h, protos) != k) return x;
    x += step;
  }
  return step > 0 ? bound : -bound;
}

}  // namespace macrid::testing
