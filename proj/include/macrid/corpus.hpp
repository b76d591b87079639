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
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace macrid {

using Index = std::uint32_t;

// Bidirectional map between external ids and dense indices. Indices are
// assigned in first-appearance order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> ids);

  Index add(const std::string& id);
  std::optional<Index> find(const std::string& id) const;
  const std::string& id(Index i) const { return ids_[i]; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }

  bool operator==(const Vocabulary& o) const { return ids_ == o.ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, Index> index_;
};

// Binary user x item adoption matrix stored as compressed rows. Rows are
// nonempty, sorted and duplicate free.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  InteractionMatrix(std::vector<std::vector<Index>> rows, std::size_t n_items,
                    Vocabulary users, Vocabulary items);

  std::size_t n_users() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t nnz() const noexcept { return indices_.size(); }
  std::span<const Index> row(std::size_t u) const {
    return {indices_.data() + offsets_[u], offsets_[u + 1] - offsets_[u]};
  }
  std::vector<Index> row_vector(std::size_t u) const {
    auto r = row(u);
    return {r.begin(), r.end()};
  }
  bool contains(std::size_t u, Index item) const;

  const Vocabulary& user_vocab() const noexcept { return users_; }
  const Vocabulary& item_vocab() const noexcept { return items_; }
  const std::vector<std::uint64_t>& offsets() const noexcept { return offsets_; }
  const std::vector<Index>& indices() const noexcept { return indices_; }

  bool operator==(const InteractionMatrix& o) const = default;

 private:
  std::size_t n_items_ = 0;
  std::vector<std::uint64_t> offsets_;
  std::vector<Index> indices_;
  Vocabulary users_;
  Vocabulary items_;
};

struct LoadOptions {
  double rating_threshold = 4.0;
  std::size_t min_items_per_user = 5;
};

// Reads delimited (comma or tab; "::" also accepted) rows of
// userId, itemId, rating[, timestamp]. A header line is detected by a
// non-numeric rating field. Keeps ratings >= threshold, drops users with
// fewer than min_items distinct kept items, and drops unreferenced items.
InteractionMatrix load_ratings(const std::filesystem::path& path,
                               const LoadOptions& opts = {});
InteractionMatrix parse_ratings(std::istream& in, const LoadOptions& opts = {});

// Writes the matrix back out as a ratings file (rating 1 for every
// adoption), readable by load_ratings with threshold <= 1.
void write_ratings(const InteractionMatrix& m, std::ostream& out);

struct SplitSpec {
  std::vector<Index> train_users;
  std::vector<Index> validation_users;
  std::vector<Index> test_users;
  double foldin_fraction = 0.8;
  std::uint64_t seed = 0;
  // Per held-out user: sorted fold-in items and sorted held-out items.
  std::map<Index, std::vector<Index>> foldin;
  std::map<Index, std::vector<Index>> heldout;

  bool operator==(const SplitSpec&) const = default;
};

// Strong-generalization split: n_heldout users are set aside (half for
// validation, half for test); each of them has ceil(f * |row|) items marked
// fold-in (capped at |row| - 1) and the rest held out.
SplitSpec make_split(const InteractionMatrix& m, std::size_t n_heldout,
                     double foldin_fraction, std::uint64_t seed);

// Seed-determined shuffled batches of user indices. epoch(e) depends only on
// (users, batch_size, seed, e).
class MinibatchStream {
 public:
  MinibatchStream(std::vector<Index> users, std::size_t batch_size,
                  std::uint64_t seed);
  std::vector<std::vector<Index>> epoch(std::size_t e) const;
  std::size_t batches_per_epoch() const;

 private:
  std::vector<Index> users_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

// Binary corpus file: "MCOR1", n_users u64, n_items u64, (n_users + 1) u64
// offsets, then the concatenated u32 item indices; all little-endian.
void write_corpus_binary(const InteractionMatrix& m, std::ostream& out);
// Vocabularies are supplied separately (stored as JSON next to the file).
InteractionMatrix read_corpus_binary(std::istream& in, Vocabulary users,
                                     Vocabulary items);

// Corpus directory layout: corpus.mcor, users.json, items.json, split.json.
void save_corpus_dir(const std::filesystem::path& dir, const InteractionMatrix& m,
                     const SplitSpec* split);
InteractionMatrix load_corpus_dir(const std::filesystem::path& dir);
SplitSpec load_split(const std::filesystem::path& dir);

std::string split_to_json(const SplitSpec& s);
SplitSpec split_from_json(const std::string& text);

}  // namespace macrid
