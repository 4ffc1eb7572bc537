// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/common.hpp"

#include <algorithm>
#include <cstddef>

namespace gshead {

// Row-major H x W x C image of doubles. Channel-innermost layout.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("mse: image shapes differ");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

// Peak signal-to-noise ratio for images in [0,1]. Identical images report 99 dB.
inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(m));
}

// IoU of {mask > 0.5} regions.
inline double mask_iou(const Image& pred, const Image& target) {
  if (!pred.same_shape(target)) throw ShapeError("mask_iou: image shapes differ");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] > 0.5;
    const bool t = target.data[i] > 0.5;
    inter += (p && t);
    uni += (p || t);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline int argmax_channel(const Image& img, int y, int x) {
  int best = 0;
  double v = img.at(y, x, 0);
  for (int c = 1; c < img.channels; ++c) {
    if (img.at(y, x, c) > v) {
      v = img.at(y, x, c);
      best = c;
    }
  }
  return best;
}

// Fraction of pixels whose argmax class matches the target class index image.
inline double seg_accuracy(const Image& pred_seg, const Image& target_classes) {
  if (pred_seg.height != target_classes.height || pred_seg.width != target_classes.width)
    throw ShapeError("seg_accuracy: image sizes differ");
  size_t hits = 0;
  for (int y = 0; y < pred_seg.height; ++y)
    for (int x = 0; x < pred_seg.width; ++x)
      hits += (argmax_channel(pred_seg, y, x) == static_cast<int>(target_classes.at(y, x, 0)));
  return static_cast<double>(hits) / (static_cast<double>(pred_seg.height) * pred_seg.width);
}

}  // namespace gshead
