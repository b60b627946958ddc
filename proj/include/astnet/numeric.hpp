// include/astnet/numeric.hpp

// Copyright 2026  The AstNet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace astnet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

// Bank of 1-D filters. weights are laid out [filter][in_channel][tap];
// the tap axis is cross-correlated with the signal and centred on the output frame.
struct ConvKernel1D {
  std::size_t n_filters = 1;
  std::size_t in_channels = 1;
  std::size_t width = 1;
  std::vector<double> weights;

  double at(std::size_t filter, std::size_t channel, std::size_t tap) const {
    return weights[(filter * in_channels + channel) * width + tap];
  }
};

// Throws InvalidInput unless Wm.cols == x.size() and Wm.rows == b.size().
Vector affine(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Matrix>& Wm,
              const Eigen::Ref<const Vector>& b);

// Max-shifted softmax; safe for large-magnitude inputs.
Vector softmax(const Eigen::Ref<const Vector>& v);

double sigmoid(double x);

// log(1 + exp(x)) without overflow.
double softplus(double x);

// Same-length convolution with zero padding. signal is N x in_channels,
// result is N x n_filters.
Matrix conv1d_same(const Eigen::Ref<const Matrix>& signal, const ConvKernel1D& kernel);

// Adjoint of conv1d_same. Given dL/d(output) accumulate dL/d(signal) and
// dL/d(kernel weights).
void conv1d_same_backward(const Eigen::Ref<const Matrix>& signal, const ConvKernel1D& kernel,
                          const Eigen::Ref<const Matrix>& grad_out, Matrix* grad_signal,
                          std::span<double> grad_weights);

bool all_finite(const Eigen::Ref<const Matrix>& m);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct ParamGroupError {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradientCheckReport {
  std::vector<ParamGroupError> groups;
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// A named contiguous slice of the flat parameter vector.
struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares `analytic` against central differences of `f` around `params`.
// `f` must be a pure function of its argument. `params` is restored on exit.
// Throws InvalidInput for eps outside [1e-7, 1e-3] and DataError naming the
// parameter when f is non-finite at a probe. If `groups` is empty every entry
// is reported under a single group called "params".
GradientCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                               std::span<double> params, std::span<const double> analytic,
                               double eps, std::span<const ParamSlice> groups = {});

}  // namespace astnet
