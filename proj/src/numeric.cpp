// src/numeric.cpp

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

#include "astnet/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "astnet/error.hpp"

namespace astnet {

Vector affine(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Matrix>& Wm,
              const Eigen::Ref<const Vector>& b) {
  if (Wm.cols() != x.size() || Wm.rows() != b.size()) {
    std::ostringstream os;
    os << "affine: weight is " << Wm.rows() << "x" << Wm.cols() << ", input has " << x.size()
       << " entries, bias has " << b.size();
    throw InvalidInput(os.str());
  }
  return Wm * x + b;
}

Vector softmax(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) return Vector();
  Vector out = (v.array() - v.maxCoeff()).exp();
  out /= out.sum();
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

static void check_kernel(const ConvKernel1D& kernel, std::size_t in_channels) {
  if (kernel.width % 2 == 0) throw InvalidInput("conv1d_same: kernel width must be odd");
  if (kernel.in_channels != in_channels) {
    throw InvalidInput("conv1d_same: kernel expects " + std::to_string(kernel.in_channels) +
                       " input channels, signal has " + std::to_string(in_channels));
  }
  if (kernel.weights.size() != kernel.n_filters * kernel.in_channels * kernel.width) {
    throw InvalidInput("conv1d_same: kernel weight count does not match its shape");
  }
}

Matrix conv1d_same(const Eigen::Ref<const Matrix>& signal, const ConvKernel1D& kernel) {
  if (signal.rows() == 0) throw InvalidInput("conv1d_same: empty signal");
  check_kernel(kernel, static_cast<std::size_t>(signal.cols()));
  const long n = signal.rows();
  const long half = static_cast<long>(kernel.width / 2);
  Matrix out = Matrix::Zero(n, static_cast<long>(kernel.n_filters));
  for (long i = 0; i < n; ++i) {
    const long lo = std::max(0L, half - i);
    const long hi = std::min(static_cast<long>(kernel.width), n - i + half);
    for (std::size_t k = 0; k < kernel.n_filters; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < kernel.in_channels; ++c) {
        for (long j = lo; j < hi; ++j) {
          acc += kernel.at(k, c, static_cast<std::size_t>(j)) * signal(i + j - half, c);
        }
      }
      out(i, static_cast<long>(k)) = acc;
    }
  }
  return out;
}

void conv1d_same_backward(const Eigen::Ref<const Matrix>& signal, const ConvKernel1D& kernel,
                          const Eigen::Ref<const Matrix>& grad_out, Matrix* grad_signal,
                          std::span<double> grad_weights) {
  check_kernel(kernel, static_cast<std::size_t>(signal.cols()));
  const long n = signal.rows();
  const long half = static_cast<long>(kernel.width / 2);
  if (grad_signal != nullptr && (grad_signal->rows() != n || grad_signal->cols() != signal.cols())) {
    *grad_signal = Matrix::Zero(n, signal.cols());
  }
  for (long i = 0; i < n; ++i) {
    const long lo = std::max(0L, half - i);
    const long hi = std::min(static_cast<long>(kernel.width), n - i + half);
    for (std::size_t k = 0; k < kernel.n_filters; ++k) {
      const double go = grad_out(i, static_cast<long>(k));
      if (go == 0.0) continue;
      for (std::size_t c = 0; c < kernel.in_channels; ++c) {
        const std::size_t base = (k * kernel.in_channels + c) * kernel.width;
        for (long j = lo; j < hi; ++j) {
          const long src = i + j - half;
          if (!grad_weights.empty()) grad_weights[base + static_cast<std::size_t>(j)] += go * signal(src, c);
          if (grad_signal != nullptr) (*grad_signal)(src, c) += go * kernel.weights[base + static_cast<std::size_t>(j)];
        }
      }
    }
  }
}

bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradientCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                               std::span<double> params, std::span<const double> analytic,
                               double eps, std::span<const ParamSlice> groups) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw InvalidInput("grad_check: eps must lie in [1e-7, 1e-3]");
  if (analytic.size() != params.size()) {
    throw InvalidInput("grad_check: analytic gradient size differs from parameter count");
  }
  std::vector<ParamSlice> layout(groups.begin(), groups.end());
  if (layout.empty()) layout.push_back({"params", 0, params.size()});

  GradientCheckReport report;
  for (const ParamSlice& g : layout) {
    if (g.offset + g.size > params.size()) throw InvalidInput("grad_check: group " + g.name + " out of range");
    ParamGroupError ge{g.name, g.size, 0.0, 0};
    for (std::size_t k = 0; k < g.size; ++k) {
      const std::size_t i = g.offset + k;
      const double saved = params[i];
      params[i] = saved + eps;
      const double fp = f(params);
      params[i] = saved - eps;
      const double fm = f(params);
      params[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw DataError("grad_check: objective is not finite when probing " + g.name + "[" +
                        std::to_string(k) + "]");
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = relative_error(analytic[i], numeric);
      if (err > ge.max_rel_error) {
        ge.max_rel_error = err;
        ge.worst_index = k;
      }
      ++report.n_checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, ge.max_rel_error);
    report.groups.push_back(std::move(ge));
  }
  return report;
}

}  // namespace astnet
