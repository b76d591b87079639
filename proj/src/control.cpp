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

#include "macrid/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "macrid/error.hpp"

namespace macrid {

namespace {

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  auto s = t.row(r);
  return {s.begin(), s.end()};
}

// Cosine with coordinate j removed.
double cosine_without(std::span<const double> a, std::span<const double> b, std::size_t j) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i == j) continue;
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / ((std::sqrt(aa) + 1e-8) * (std::sqrt(bb) + 1e-8));
}

}  // namespace

std::size_t nearest_prototype(std::span<const double> h, const ModelParams& params) {
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < params.k(); ++k) {
    const auto m = row_of(params.prototypes, k);
    const double s = cosine<double>(h, m);
    if (s > best_sim) {
      best_sim = s;
      best = k;
    }
  }
  return best;
}

ProbeResult probe_range(std::span<const double> h_star, std::size_t j,
                        const ModelParams& params, double tol) {
  if (h_star.size() != params.d()) fail(ErrorKind::kDimension, "probe: anchor length != d");
  if (j >= params.d()) fail(ErrorKind::kDimension, "probe: dimension out of range");
  ProbeResult out;
  out.k_star = nearest_prototype(h_star, params);
  double r = 0.0;
  for (std::size_t i = 0; i < params.m(); ++i)
    r = std::max(r, std::abs(static_cast<double>(params.item_reps(i, j))));
  out.bound = std::max(10.0 * r, std::abs(h_star[j]));
  std::vector<double> h(h_star.begin(), h_star.end());
  auto inside = [&](double x) {
    h[j] = x;
    return nearest_prototype(h, params) == out.k_star;
  };
  auto search = [&](double target, bool& clamped) {
    if (inside(target)) {
      clamped = true;
      return target;
    }
    double in = h_star[j], out_pt = target;
    while (std::abs(out_pt - in) > tol) {
      const double mid = 0.5 * (in + out_pt);
      (inside(mid) ? in : out_pt) = mid;
    }
    return in;
  };
  out.lower = search(-out.bound, out.lower_clamped);
  out.upper = search(out.bound, out.upper_clamped);
  return out;
}

std::vector<Index> concept_items(const ModelParams& params, std::size_t k) {
  const auto concepts = infer_assignment(params).concepts();
  std::vector<Index> out;
  for (std::size_t i = 0; i < concepts.size(); ++i)
    if (concepts[i] == k) out.push_back(static_cast<Index>(i));
  return out;
}

Partition partition(double lower, double upper, std::span<const Index> items, std::size_t j,
                    std::size_t b, const ModelParams& params) {
  require(b >= 1, "partition: B must be >= 1");
  if (j >= params.d()) fail(ErrorKind::kDimension, "partition: dimension out of range");
  std::vector<std::pair<double, Index>> vals;
  for (Index i : items) {
    const double v = params.item_reps(i, j);
    if (v > lower && v < upper) vals.push_back({v, i});
  }
  if (vals.size() < b) throw InsufficientItemsError(vals.size(), b);
  std::sort(vals.begin(), vals.end());
  Partition p;
  p.eligible = vals.size();
  p.boundaries.push_back(lower);
  p.bins.resize(b);
  const std::size_t base = vals.size() / b, extra = vals.size() % b;
  std::size_t pos = 0;
  for (std::size_t t = 0; t < b; ++t) {
    const std::size_t count = base + (t < extra ? 1 : 0);
    for (std::size_t n = 0; n < count; ++n) p.bins[t].push_back(vals[pos + n].second);
    pos += count;
    p.boundaries.push_back(t + 1 == b ? upper : 0.5 * (vals[pos - 1].first + vals[pos].first));
  }
  return p;
}

void ControlQuery::validate(const ModelParams& params) const {
  if (anchor.size() != params.d()) {
    fail(ErrorKind::kDimension, "control: anchor has " + std::to_string(anchor.size()) +
                                    " values, expected d = " + std::to_string(params.d()));
  }
  if (dim >= params.d()) {
    fail(ErrorKind::kDimension, "control: dim " + std::to_string(dim) + " out of range 0.." +
                                    std::to_string(params.d() - 1));
  }
  if (b < 1) fail(ErrorKind::kUsage, "control: B must be >= 1");
  if (!(gamma >= 0.0)) fail(ErrorKind::kUsage, "control: gamma must be >= 0");
  if (beam_width < 1) fail(ErrorKind::kUsage, "control: beam width must be >= 1");
  if (tau && !(*tau > 0.0)) fail(ErrorKind::kUsage, "control: tau must be > 0");
  for (double v : anchor)
    if (!std::isfinite(v)) fail(ErrorKind::kUsage, "control: anchor must be finite");
}

std::vector<double> item_anchor(const ModelParams& params, Index item) {
  if (item >= params.m()) fail(ErrorKind::kUsage, "control: item index out of range");
  return row_of(params.item_reps, item);
}

std::vector<double> user_anchor(const ModelParams& params, std::span<const Index> row,
                                std::size_t k) {
  if (k >= params.k()) fail(ErrorKind::kUsage, "control: concept out of range");
  const auto post = encode_user(row, infer_assignment(params), params, Mode::kInfer, nullptr);
  auto r = post.mu.row(k);
  return {r.begin(), r.end()};
}

std::size_t ControlObjective::position(Index item) const {
  const auto it = std::lower_bound(items.begin(), items.end(), item);
  if (it == items.end() || *it != item) fail(ErrorKind::kPrecondition, "item not in objective");
  return static_cast<std::size_t>(it - items.begin());
}

double ControlObjective::score(std::span<const Index> chosen) const {
  double s = 0.0;
  std::vector<std::size_t> pos;
  for (Index i : chosen) pos.push_back(position(i));
  for (std::size_t a = 0; a < pos.size(); ++a) {
    s += anchor[pos[a]];
    for (std::size_t b = a + 1; b < pos.size(); ++b) s += gamma * pair(pos[a], pos[b]);
  }
  return s;
}

ControlObjective make_objective(const ModelParams& params, std::span<const double> h_star,
                                std::size_t j, std::span<const Index> items, double tau,
                                double gamma) {
  ControlObjective obj;
  obj.items.assign(items.begin(), items.end());
  std::sort(obj.items.begin(), obj.items.end());
  obj.gamma = gamma;
  const std::size_t n = obj.items.size();
  std::vector<std::vector<double>> reps(n);
  for (std::size_t a = 0; a < n; ++a) reps[a] = row_of(params.item_reps, obj.items[a]);
  obj.anchor.resize(n);
  obj.pair = TensorD(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    obj.anchor[a] = std::exp(cosine_without(reps[a], h_star, j) / tau);
    for (std::size_t b = a + 1; b < n; ++b)
      obj.pair(a, b) = obj.pair(b, a) = std::exp(cosine_without(reps[a], reps[b], j) / tau);
  }
  return obj;
}

std::vector<Index> beam_select(const ControlObjective& obj,
                               const std::vector<std::vector<Index>>& bins,
                               std::size_t beam_width) {
  require(beam_width >= 1, "beam width must be >= 1");
  struct State {
    std::vector<Index> items;
    std::vector<std::size_t> pos;
    double score = 0.0;
  };
  std::vector<State> beam{State{}};
  for (const auto& bin : bins) {
    require(!bin.empty(), "beam_select: empty subrange");
    std::vector<State> next;
    for (const State& s : beam) {
      for (Index i : bin) {
        const std::size_t p = obj.position(i);
        State e = s;
        e.score += obj.anchor[p];
        for (std::size_t q : s.pos) e.score += obj.gamma * obj.pair(p, q);
        e.items.push_back(i);
        e.pos.push_back(p);
        next.push_back(std::move(e));
      }
    }
    auto better = [](const State& a, const State& b) {
      return a.score > b.score || (a.score == b.score && a.items < b.items);
    };
    const std::size_t keep = std::min(beam_width, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(),
                      better);
    next.resize(keep);
    beam = std::move(next);
  }
  return beam.front().items;
}

ControlTrajectory select_trajectory(const ControlQuery& q, const ModelParams& params) {
  q.validate(params);
  ControlTrajectory out;
  out.probe = probe_range(q.anchor, q.dim, params);
  const auto members = concept_items(params, out.probe.k_star);
  const Partition part =
      partition(out.probe.lower, out.probe.upper, members, q.dim, q.b, params);
  out.boundaries = part.boundaries;
  out.eligible = part.eligible;
  std::vector<Index> eligible;
  for (const auto& bin : part.bins) eligible.insert(eligible.end(), bin.begin(), bin.end());
  const ControlObjective obj = make_objective(params, q.anchor, q.dim, eligible,
                                              q.tau.value_or(params.tau), q.gamma);
  out.items = beam_select(obj, part.bins, q.beam_width);
  out.objective = obj.score(out.items);
  for (Index i : out.items) out.dim_values.push_back(params.item_reps(i, q.dim));
  if (q.value) {
    for (std::size_t t = 0; t + 1 < out.boundaries.size(); ++t) {
      if (*q.value > out.boundaries[t] && *q.value <= out.boundaries[t + 1]) out.value_bin = t;
    }
  }
  return out;
}

}  // namespace macrid
