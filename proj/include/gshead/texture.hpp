// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/common.hpp"

namespace gshead {

// Raw (pre-activation) Gaussian parameters on an H x W texel grid, 14 channels
// per texel: [0..3) delta position, [3..7) quaternion, [7..10) scale,
// [10..13) color, [13] opacity.
struct GaussianTextureMap {
  static constexpr int kChannels = 14;
  static constexpr int kDeltaPos = 0;
  static constexpr int kQuat = 3;
  static constexpr int kScale = 7;
  static constexpr int kColor = 10;
  static constexpr int kOpacity = 13;

  int resolution = 0;
  std::vector<double> data;  // row-major texels, channel-innermost

  GaussianTextureMap() = default;
  explicit GaussianTextureMap(int res, double fill = 0.0)
      : resolution(res), data(static_cast<size_t>(res) * res * kChannels, fill) {}

  double& at(int row, int col, int c) {
    return data[(static_cast<size_t>(row) * resolution + col) * kChannels + c];
  }
  double at(int row, int col, int c) const {
    return data[(static_cast<size_t>(row) * resolution + col) * kChannels + c];
  }
  const double* texel(int row, int col) const {
    return &data[(static_cast<size_t>(row) * resolution + col) * kChannels];
  }

  void require_finite() const {
    if (!all_finite(data)) throw NumericError("texture map contains non-finite values");
  }
};

}  // namespace gshead
