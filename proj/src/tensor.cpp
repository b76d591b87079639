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

#include "macrid/tensor.hpp"

#include <Eigen/Core>

namespace macrid {
namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

template <typename T>
void gemm(const BasicTensor<T>& a, bool trans_a, const BasicTensor<T>& b,
          bool trans_b, BasicTensor<T>& out, T beta) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb) {
    fail(ErrorKind::kDimension, "matmul inner dimensions differ: " +
                                    a.shape_str() + " x " + b.shape_str());
  }
  if (out.rows() != m || out.cols() != n) {
    if (beta != T(0)) {
      fail(ErrorKind::kDimension, "matmul output shape " + out.shape_str());
    }
    out = BasicTensor<T>(m, n);
  }
  Eigen::Map<const RowMajor<T>> ma(a.data(), a.rows(), a.cols());
  Eigen::Map<const RowMajor<T>> mb(b.data(), b.rows(), b.cols());
  Eigen::Map<RowMajor<T>> mo(out.data(), m, n);
  if (beta == T(0)) mo.setZero();
  else if (beta != T(1)) mo *= beta;
  if (!trans_a && !trans_b) mo.noalias() += ma * mb;
  else if (trans_a && !trans_b) mo.noalias() += ma.transpose() * mb;
  else if (!trans_a && trans_b) mo.noalias() += ma * mb.transpose();
  else mo.noalias() += ma.transpose() * mb.transpose();
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b,
                      bool trans_a, bool trans_b) {
  BasicTensor<T> out;
  gemm(a, trans_a, b, trans_b, out, T(0));
  return out;
}

template void gemm<float>(const Tensor&, bool, const Tensor&, bool, Tensor&,
                          float);
template void gemm<double>(const TensorD&, bool, const TensorD&, bool,
                           TensorD&, double);
template Tensor matmul<float>(const Tensor&, const Tensor&, bool, bool);
template TensorD matmul<double>(const TensorD&, const TensorD&, bool, bool);

}  // namespace macrid
