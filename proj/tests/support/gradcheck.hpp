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

// Finite-difference gradient oracle shared by the unit tests and the
// acceptance runner. Everything runs in double precision.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "macrid/autodiff.hpp"
#include "macrid/model.hpp"
#include "macrid/tensor.hpp"

namespace macrid::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // "input[r,c]" of the worst entry
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t entries = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is zero from dividing rounding noise by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference with one Richardson step: (4 D(h) - D(2h)) / 3.
inline double richardson(const std::function<double(double)>& f, double h) {
  const double d1 = (f(h) - f(-h)) / (2 * h);
  const double d2 = (f(2 * h) - f(-2 * h)) / (4 * h);
  return (4 * d1 - d2) / 3;
}

// Ridders' extrapolation: central differences at shrinking steps combined in a
// Neville tableau, returning the entry with the smallest error estimate.
inline double ridders(const std::function<double(double)>& f, double h) {
  constexpr int kTab = 10;
  constexpr double kCon = 1.4, kCon2 = kCon * kCon, kSafe = 2.0;
  double a[kTab][kTab];
  a[0][0] = (f(h) - f(-h)) / (2 * h);
  double best = a[0][0], err = std::numeric_limits<double>::max();
  for (int i = 1; i < kTab; ++i) {
    h /= kCon;
    a[0][i] = (f(h) - f(-h)) / (2 * h);
    double fac = kCon2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1);
      fac *= kCon2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return best;
}

using GraphFn =
    std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;

inline double eval_graph(const GraphFn& f, const std::vector<TensorD>& inputs) {
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(tape.parameter(x));
  return f(tape, vars).value()[0];
}

// Compares reverse-mode gradients of a scalar graph against finite
// differences on every input entry.
inline GradCheck check_graph(const GraphFn& f, std::vector<TensorD> inputs,
                             double h = 1e-3) {
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(tape.parameter(x));
  tape.backward(f(tape, vars));
  GradCheck out;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    const TensorD analytic = vars[p].grad();
    for (std::size_t i = 0; i < inputs[p].size(); ++i) {
      const double x0 = inputs[p][i];
      const double num = richardson(
          [&](double dx) {
            inputs[p][i] = x0 + dx;
            const double v = eval_graph(f, inputs);
            inputs[p][i] = x0;
            return v;
          },
          h);
      const double err = relative_error(analytic[i], num);
      ++out.entries;
      if (err >= out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = "input" + std::to_string(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

// Same check for the model objective at fixed noise.
inline GradCheck check_model_loss(std::span<const std::vector<Index>> rows,
                                  BasicModelParams<double> params, const HyperParams& hp,
                                  Mode mode, const BatchNoise& noise, double h = 1e-3) {
  const auto res = loss<double>(rows, params, hp, mode, noise, true);
  GradCheck out;
  auto tensors = params.tensors();
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    for (std::size_t i = 0; i < tensors[p]->size(); ++i) {
      double& slot = (*tensors[p])[i];
      const double x0 = slot;
      const double num = ridders(
          [&](double dx) {
            slot = x0 + dx;
            const double v = loss<double>(rows, params, hp, mode, noise, false).loss;
            slot = x0;
            return v;
          },
          h);
      const double err = relative_error(res.grads[p][i], num);
      ++out.entries;
      if (err >= out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = "tensor" + std::to_string(p) + "[" + std::to_string(i) + "]";
        out.worst_analytic = res.grads[p][i];
        out.worst_numeric = num;
      }
    }
  }
  return out;
}

inline TensorD random_tensor(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  TensorD t(r, c);
  for (auto& v : t.flat()) v = scale * rng.normal();
  return t;
}

}  // namespace macrid::testing
