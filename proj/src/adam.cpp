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

#include "macrid/adam.hpp"

#include <cmath>

namespace macrid {

void AdamState::erase_row(std::size_t tensor, std::size_t row) {
  auto drop = [row](TensorD& t) {
    if (t.empty()) return;
    std::vector<double> data;
    data.reserve(t.size() - t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r) {
      if (r == row) continue;
      auto src = t.row(r);
      data.insert(data.end(), src.begin(), src.end());
    }
    t = TensorD(t.rows() - 1, t.cols(), std::move(data));
  };
  if (tensor < m.size()) drop(m[tensor]);
  if (tensor < v.size()) drop(v[tensor]);
}

void adam_update(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
                 AdamState& state) {
  if (params.size() != grads.size()) {
    fail(ErrorKind::kDimension, "adam_update: parameter/gradient count differs");
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const Tensor* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = grads[p];
    TensorD& m = state.m[p];
    TensorD& v = state.v[p];
    if (!w.same_shape(g) || m.rows() != w.rows() || m.cols() != w.cols()) {
      fail(ErrorKind::kDimension, "adam_update: shape mismatch at tensor " +
                                      std::to_string(p));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<float>(w[i] - o.lr * mhat / (std::sqrt(vhat) + o.eps));
    }
  }
}

}  // namespace macrid
