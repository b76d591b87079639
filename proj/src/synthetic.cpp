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

#include "macrid/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "macrid/error.hpp"
#include "macrid/rng.hpp"

namespace macrid {

SyntheticCorpus make_synthetic(const SyntheticOptions& opts, std::uint64_t seed) {
  require(opts.n_concepts >= opts.concepts_per_user && opts.concepts_per_user >= 1,
          "synthetic: concepts_per_user must lie in 1..n_concepts");
  require(opts.min_items >= 1 && opts.min_items <= opts.max_items,
          "synthetic: need 1 <= min_items <= max_items");
  require(opts.max_items <= opts.concepts_per_user * opts.items_per_concept,
          "synthetic: max_items exceeds the items a user can reach");
  Rng rng(seed);
  const std::size_t m = opts.n_concepts * opts.items_per_concept;
  SyntheticCorpus out;
  out.labels.resize(m);
  std::vector<double> ax(m), ay(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.labels[i] = i / opts.items_per_concept;
    ax[i] = rng.uniform();
    ay[i] = rng.uniform();
  }
  const double inv = 1.0 / (2.0 * opts.preference_width * opts.preference_width);
  std::vector<std::vector<Index>> rows;
  for (std::size_t u = 0; u < opts.n_users; ++u) {
    std::vector<std::size_t> concepts(opts.n_concepts);
    std::iota(concepts.begin(), concepts.end(), std::size_t{0});
    for (std::size_t c = 0; c < opts.concepts_per_user; ++c)
      std::swap(concepts[c], concepts[c + rng.below(opts.n_concepts - c)]);
    const std::size_t total = opts.min_items + rng.below(opts.max_items - opts.min_items + 1);
    // Split the budget as evenly as possible over the chosen concepts.
    std::vector<Index> row;
    for (std::size_t c = 0; c < opts.concepts_per_user; ++c) {
      std::size_t want = total / opts.concepts_per_user + (c < total % opts.concepts_per_user);
      want = std::min(want, opts.items_per_concept);
      const double px = rng.uniform(), py = rng.uniform();
      std::vector<double> w(opts.items_per_concept);
      const std::size_t base = concepts[c] * opts.items_per_concept;
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double dx = ax[base + j] - px, dy = ay[base + j] - py;
        w[j] = std::exp(-(dx * dx + dy * dy) * inv) + 1e-6;
      }
      for (std::size_t n = 0; n < want; ++n) {
        double total_w = std::accumulate(w.begin(), w.end(), 0.0);
        double r = rng.uniform() * total_w;
        std::size_t j = 0;
        while (j + 1 < w.size() && (r -= w[j]) > 0.0) ++j;
        while (w[j] == 0.0) j = (j + 1) % w.size();
        row.push_back(static_cast<Index>(base + j));
        w[j] = 0.0;
      }
    }
    std::sort(row.begin(), row.end());
    rows.push_back(std::move(row));
  }
  std::vector<std::string> users, items;
  for (std::size_t u = 0; u < opts.n_users; ++u) users.push_back("u" + std::to_string(u));
  for (std::size_t i = 0; i < m; ++i) items.push_back("i" + std::to_string(i));
  out.matrix = InteractionMatrix(std::move(rows), m, Vocabulary(users), Vocabulary(items));
  return out;
}

}  // namespace macrid
