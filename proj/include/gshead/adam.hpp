// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/common.hpp"

namespace gshead {

// Adam over a flat parameter vector; bias-corrected, deterministic.
struct Adam {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  VecX m, v;
  long t = 0;

  explicit Adam(double lr_ = 1e-2) : lr(lr_) {}

  void step(Eigen::Ref<VecX> params, const Eigen::Ref<const VecX>& grad) {
    if (m.size() != params.size()) {
      m = VecX::Zero(params.size());
      v = VecX::Zero(params.size());
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, double(t));
    const double c2 = 1.0 - std::pow(beta2, double(t));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

}  // namespace gshead
