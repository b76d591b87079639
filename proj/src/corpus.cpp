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

#include "macrid/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "macrid/binary_io.hpp"
#include "macrid/error.hpp"
#include "macrid/rng.hpp"

namespace macrid {

using nlohmann::json;

Vocabulary::Vocabulary(std::vector<std::string> ids) {
  for (auto& id : ids) add(id);
}

Index Vocabulary::add(const std::string& id) {
  auto [it, inserted] = index_.emplace(id, static_cast<Index>(ids_.size()));
  if (inserted) ids_.push_back(id);
  return it->second;
}

std::optional<Index> Vocabulary::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

InteractionMatrix::InteractionMatrix(std::vector<std::vector<Index>> rows,
                                     std::size_t n_items, Vocabulary users,
                                     Vocabulary items)
    : n_items_(n_items), users_(std::move(users)), items_(std::move(items)) {
  if (users_.size() != rows.size()) {
    fail(ErrorKind::kData, "user vocabulary size " + std::to_string(users_.size()) +
                               " != row count " + std::to_string(rows.size()));
  }
  if (items_.size() != n_items) {
    fail(ErrorKind::kData, "item vocabulary size does not match n_items");
  }
  offsets_.reserve(rows.size() + 1);
  offsets_.push_back(0);
  for (std::size_t u = 0; u < rows.size(); ++u) {
    auto& r = rows[u];
    if (r.empty()) fail(ErrorKind::kData, "user " + std::to_string(u) + " has an empty row");
    std::sort(r.begin(), r.end());
    if (std::adjacent_find(r.begin(), r.end()) != r.end()) {
      fail(ErrorKind::kData, "user " + std::to_string(u) + " has duplicate items");
    }
    if (r.back() >= n_items) fail(ErrorKind::kData, "item index out of range");
    indices_.insert(indices_.end(), r.begin(), r.end());
    offsets_.push_back(indices_.size());
  }
}

bool InteractionMatrix::contains(std::size_t u, Index item) const {
  auto r = row(u);
  return std::binary_search(r.begin(), r.end(), item);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  if (line.find("::") != std::string_view::npos) {
    std::size_t pos = 0;
    while (true) {
      auto next = line.find("::", pos);
      out.push_back(line.substr(pos, next - pos));
      if (next == std::string_view::npos) break;
      pos = next + 2;
    }
    return out;
  }
  const char delim = line.find('\t') != std::string_view::npos ? '\t' : ',';
  std::size_t pos = 0;
  while (true) {
    auto next = line.find(delim, pos);
    out.push_back(line.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

InteractionMatrix parse_ratings(std::istream& in, const LoadOptions& opts) {
  struct Kept {
    std::string user;
    std::string item;
  };
  std::vector<Kept> kept;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    auto fields = split_fields(view);
    if (fields.size() < 3) {
      throw ParseError(line_no, "expected at least 3 fields (user, item, rating)");
    }
    auto rating = parse_number(fields[2]);
    if (!rating) {
      if (first) {  // header row
        first = false;
        continue;
      }
      throw ParseError(line_no, "rating is not a number: '" + std::string(fields[2]) + "'");
    }
    first = false;
    auto user = trim(fields[0]);
    auto item = trim(fields[1]);
    if (user.empty() || item.empty()) throw ParseError(line_no, "empty user or item id");
    if (*rating >= opts.rating_threshold) {
      kept.push_back({std::string(user), std::string(item)});
    }
  }

  // Distinct kept items per user, in file order.
  Vocabulary all_users;
  std::vector<std::vector<std::string>> per_user;
  for (const auto& k : kept) {
    Index u = all_users.add(k.user);
    if (u == per_user.size()) per_user.emplace_back();
    per_user[u].push_back(k.item);
  }
  std::vector<bool> keep_user(per_user.size());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto items = per_user[u];
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    keep_user[u] = items.size() >= opts.min_items_per_user;
  }

  Vocabulary users, items;
  std::vector<std::vector<Index>> rows;
  for (const auto& k : kept) {
    Index old = *all_users.find(k.user);
    if (!keep_user[old]) continue;
    Index u = users.add(k.user);
    if (u == rows.size()) rows.emplace_back();
    rows[u].push_back(items.add(k.item));
  }
  if (rows.empty()) {
    throw EmptyCorpusError("no interactions survive rating >= " +
                           std::to_string(opts.rating_threshold) + " and >= " +
                           std::to_string(opts.min_items_per_user) +
                           " items per user");
  }
  for (auto& r : rows) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }
  const std::size_t n_items = items.size();
  return InteractionMatrix(std::move(rows), n_items, std::move(users), std::move(items));
}

InteractionMatrix load_ratings(const std::filesystem::path& path, const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, "cannot open ratings file " + path.string());
  return parse_ratings(in, opts);
}

void write_ratings(const InteractionMatrix& m, std::ostream& out) {
  out << "userId,itemId,rating,timestamp\n";
  for (std::size_t u = 0; u < m.n_users(); ++u) {
    for (Index i : m.row(u)) {
      out << m.user_vocab().id(u) << ',' << m.item_vocab().id(i) << ",1,0\n";
    }
  }
}

SplitSpec make_split(const InteractionMatrix& m, std::size_t n_heldout,
                     double foldin_fraction, std::uint64_t seed) {
  if (n_heldout >= m.n_users()) {
    fail(ErrorKind::kUsage, "invalid split: " + std::to_string(n_heldout) +
                                " held-out users but only " +
                                std::to_string(m.n_users()) + " users");
  }
  if (!(foldin_fraction > 0.0 && foldin_fraction < 1.0)) {
    fail(ErrorKind::kUsage, "invalid split: fold-in fraction must lie in (0, 1)");
  }
  SplitSpec s;
  s.foldin_fraction = foldin_fraction;
  s.seed = seed;
  std::vector<Index> perm(m.n_users());
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(derive_seed(seed, 0));
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  const std::size_t half = n_heldout / 2;
  s.validation_users.assign(perm.begin(), perm.begin() + half);
  s.test_users.assign(perm.begin() + half, perm.begin() + 2 * half);
  s.train_users.assign(perm.begin() + 2 * half, perm.end());
  std::sort(s.train_users.begin(), s.train_users.end());
  std::sort(s.validation_users.begin(), s.validation_users.end());
  std::sort(s.test_users.begin(), s.test_users.end());

  Rng item_rng(derive_seed(seed, 1));
  auto assign = [&](Index u) {
    auto items = m.row_vector(u);
    if (items.size() < 2) {
      fail(ErrorKind::kPrecondition, "held-out user " + m.user_vocab().id(u) +
                                         " has fewer than 2 items");
    }
    std::shuffle(items.begin(), items.end(), item_rng.engine());
    auto n_fold = static_cast<std::size_t>(
        std::ceil(foldin_fraction * static_cast<double>(items.size()) - 1e-9));
    n_fold = std::clamp<std::size_t>(n_fold, 1, items.size() - 1);
    std::vector<Index> f(items.begin(), items.begin() + n_fold);
    std::vector<Index> h(items.begin() + n_fold, items.end());
    std::sort(f.begin(), f.end());
    std::sort(h.begin(), h.end());
    s.foldin[u] = std::move(f);
    s.heldout[u] = std::move(h);
  };
  for (Index u : s.validation_users) assign(u);
  for (Index u : s.test_users) assign(u);
  return s;
}

MinibatchStream::MinibatchStream(std::vector<Index> users, std::size_t batch_size,
                                 std::uint64_t seed)
    : users_(std::move(users)), batch_size_(batch_size), seed_(seed) {
  require(batch_size_ >= 1, "batch_size must be >= 1");
}

std::vector<std::vector<Index>> MinibatchStream::epoch(std::size_t e) const {
  std::vector<Index> order = users_;
  Rng rng(derive_seed(seed_, 1000 + e));
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<Index>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size_) {
    const std::size_t end = std::min(order.size(), i + batch_size_);
    out.emplace_back(order.begin() + i, order.begin() + end);
  }
  return out;
}

std::size_t MinibatchStream::batches_per_epoch() const {
  return (users_.size() + batch_size_ - 1) / batch_size_;
}

void write_corpus_binary(const InteractionMatrix& m, std::ostream& out) {
  out.write("MCOR1", 5);
  io::put_u64(out, m.n_users());
  io::put_u64(out, m.n_items());
  for (std::uint64_t o : m.offsets()) io::put_u64(out, o);
  for (Index i : m.indices()) io::put_u32(out, i);
  if (!out) fail(ErrorKind::kIo, "failed writing corpus");
}

InteractionMatrix read_corpus_binary(std::istream& in, Vocabulary users, Vocabulary items) {
  char magic[5];
  in.read(magic, 5);
  if (!in || std::string(magic, 5) != "MCOR1") fail(ErrorKind::kData, "not a corpus file (bad magic)");
  const std::uint64_t n_users = io::get_u64(in);
  const std::uint64_t n_items = io::get_u64(in);
  std::vector<std::uint64_t> offsets(n_users + 1);
  for (auto& o : offsets) o = io::get_u64(in);
  if (offsets.front() != 0) fail(ErrorKind::kData, "corrupt corpus offsets");
  std::vector<std::vector<Index>> rows(n_users);
  for (std::uint64_t u = 0; u < n_users; ++u) {
    if (offsets[u + 1] < offsets[u]) fail(ErrorKind::kData, "corrupt corpus offsets");
    rows[u].resize(offsets[u + 1] - offsets[u]);
    for (auto& i : rows[u]) i = io::get_u32(in);
  }
  return InteractionMatrix(std::move(rows), n_items, std::move(users), std::move(items));
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + p.string());
  out << text;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::kData, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_corpus_dir(const std::filesystem::path& dir, const InteractionMatrix& m,
                     const SplitSpec* split) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  {
    std::ofstream out(dir / "corpus.mcor", std::ios::binary);
    if (!out) fail(ErrorKind::kIo, "cannot write " + (dir / "corpus.mcor").string());
    write_corpus_binary(m, out);
  }
  write_text(dir / "users.json", json(m.user_vocab().ids()).dump());
  write_text(dir / "items.json", json(m.item_vocab().ids()).dump());
  if (split) write_text(dir / "split.json", split_to_json(*split));
}

InteractionMatrix load_corpus_dir(const std::filesystem::path& dir) {
  auto users = json::parse(read_text(dir / "users.json")).get<std::vector<std::string>>();
  auto items = json::parse(read_text(dir / "items.json")).get<std::vector<std::string>>();
  std::ifstream in(dir / "corpus.mcor", std::ios::binary);
  if (!in) fail(ErrorKind::kData, "cannot open " + (dir / "corpus.mcor").string());
  return read_corpus_binary(in, Vocabulary(std::move(users)), Vocabulary(std::move(items)));
}

SplitSpec load_split(const std::filesystem::path& dir) {
  return split_from_json(read_text(dir / "split.json"));
}

std::string split_to_json(const SplitSpec& s) {
  json j;
  j["train_users"] = s.train_users;
  j["validation_users"] = s.validation_users;
  j["test_users"] = s.test_users;
  j["foldin_fraction"] = s.foldin_fraction;
  j["seed"] = s.seed;
  json f = json::object(), h = json::object();
  for (const auto& [u, items] : s.foldin) f[std::to_string(u)] = items;
  for (const auto& [u, items] : s.heldout) h[std::to_string(u)] = items;
  j["foldin"] = f;
  j["heldout"] = h;
  return j.dump();
}

SplitSpec split_from_json(const std::string& text) {
  SplitSpec s;
  try {
    json j = json::parse(text);
    s.train_users = j.at("train_users").get<std::vector<Index>>();
    s.validation_users = j.at("validation_users").get<std::vector<Index>>();
    s.test_users = j.at("test_users").get<std::vector<Index>>();
    s.foldin_fraction = j.at("foldin_fraction").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (auto& [k, v] : j.at("foldin").items())
      s.foldin[static_cast<Index>(std::stoul(k))] = v.get<std::vector<Index>>();
    for (auto& [k, v] : j.at("heldout").items())
      s.heldout[static_cast<Index>(std::stoul(k))] = v.get<std::vector<Index>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed split file: ") + e.what());
  }
  return s;
}

}  // namespace macrid
