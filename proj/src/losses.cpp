// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/losses.hpp"

#include <cstdio>

namespace gshead {

namespace {
constexpr double kCrossEntropyEps = 1e-8;

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
}  // namespace

std::string LossReport::to_line(long step) const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "step=%ld adv=%.17g rgb=%.17g mask=%.17g seg=%.17g seg_mesh=%.17g pos=%.17g "
                "scale=%.17g uv=%.17g total=%.17g",
                step, adv, rgb, mask, seg, seg_mesh, pos, scale, uv, total);
  return buf;
}

LossReport total_loss(double adv, double rgb, double mask, double seg, double seg_mesh, double pos,
                      double scale, double uv, const LossWeights& w) {
  LossReport r;
  r.adv = adv;
  r.rgb = rgb;
  r.mask = mask;
  r.seg = seg;
  r.seg_mesh = seg_mesh;
  r.pos = pos;
  r.scale = scale;
  r.uv = uv;
  r.total = adv + w.rgb * rgb + w.mask * mask + w.seg * seg + w.seg_mesh * seg_mesh + w.pos * pos +
            w.scale * scale + w.uv * uv;
  if (!std::isfinite(r.total)) throw NumericError("loss total is not finite");
  return r;
}

double adv_loss_g(const std::vector<double>& score_fake) {
  double s = 0.0;
  for (double v : score_fake) s += softplus(-v);
  return s / static_cast<double>(score_fake.size());
}

double adv_loss_d(const std::vector<double>& score_real, const std::vector<double>& score_fake) {
  double s = 0.0;
  for (double v : score_fake) s += softplus(v);
  for (double v : score_real) s += softplus(-v);
  return s / static_cast<double>(score_real.size());
}

std::vector<double> adv_loss_g_grad(const std::vector<double>& score_fake) {
  std::vector<double> g(score_fake.size());
  const double inv_n = 1.0 / static_cast<double>(score_fake.size());
  for (size_t i = 0; i < score_fake.size(); ++i) g[i] = -sigmoid(-score_fake[i]) * inv_n;
  return g;
}

void adv_loss_d_grad(const std::vector<double>& score_real, const std::vector<double>& score_fake,
                     std::vector<double>* d_real, std::vector<double>* d_fake) {
  const double inv_n = 1.0 / static_cast<double>(score_real.size());
  d_real->assign(score_real.size(), 0.0);
  d_fake->assign(score_fake.size(), 0.0);
  for (size_t i = 0; i < score_real.size(); ++i) (*d_real)[i] = -sigmoid(-score_real[i]) * inv_n;
  for (size_t i = 0; i < score_fake.size(); ++i) (*d_fake)[i] = sigmoid(score_fake[i]) * inv_n;
}

double l1_loss(const Image& pred, const Image& target, Image* d_pred, double weight) {
  if (!pred.same_shape(target)) throw ShapeError("l1_loss: image shapes differ");
  double s = 0.0;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    s += std::abs(d);
    if (d_pred) d_pred->data[i] += weight * sign(d) * inv_n;
  }
  return s * inv_n;
}

double seg_cross_entropy(const Image& pred_seg, const Image& target_classes, Image* d_pred,
                         double weight) {
  if (pred_seg.height != target_classes.height || pred_seg.width != target_classes.width)
    throw ShapeError("seg_cross_entropy: image sizes differ");
  if (pred_seg.channels != 3) throw ShapeError("seg_cross_entropy: prediction must have 3 channels");
  double s = 0.0;
  const double inv_n = 1.0 / (static_cast<double>(pred_seg.height) * pred_seg.width);
  for (int y = 0; y < pred_seg.height; ++y) {
    for (int x = 0; x < pred_seg.width; ++x) {
      const double tv = target_classes.at(y, x, 0);
      const int t = static_cast<int>(tv);
      if (tv != t || t < 0 || t > 2) throw DataError("segmentation target outside {0,1,2}");
      const double p = pred_seg.at(y, x, t) + kCrossEntropyEps;
      s -= std::log(p);
      if (d_pred) d_pred->at(y, x, t) += weight * (-1.0 / p) * inv_n;
    }
  }
  return s * inv_n;
}

double seg_mesh_l1(const Image& pred, const Image& target_classes, Image* d_pred, double weight) {
  if (pred.height != target_classes.height || pred.width != target_classes.width)
    throw ShapeError("seg_mesh_l1: image sizes differ");
  double s = 0.0;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data[i] - target_classes.data[i];
    s += std::abs(d);
    if (d_pred) d_pred->data[i] += weight * sign(d) * inv_n;
  }
  return s * inv_n;
}

double pos_reg(const std::vector<Vec3>& deltas, std::vector<Vec3>* d_deltas, double weight) {
  double s = 0.0;
  for (size_t i = 0; i < deltas.size(); ++i) {
    const double n = deltas[i].norm();
    s += n;
    if (d_deltas && n > 1e-12) (*d_deltas)[i] += weight * deltas[i] / n;
  }
  return s;
}

double scale_reg(const std::vector<Vec3>& scales, double s_min, double s_max,
                 std::vector<Vec3>* d_scales, double weight) {
  double s = 0.0;
  for (size_t i = 0; i < scales.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const double v = scales[i][k];
      if (v < s_min) {
        s += 10.0 * std::abs(v - s_min);
        if (d_scales) (*d_scales)[i][k] += weight * 10.0 * sign(v - s_min);
      } else if (v > s_max) {
        s += (v - s_max) * (v - s_max);
        if (d_scales) (*d_scales)[i][k] += weight * 2.0 * (v - s_max);
      }
    }
  }
  return s;
}

double uv_tv(const GaussianTextureMap& texture, const UvRig& rig, GaussianTextureMap* d_texture,
             double weight) {
  if (texture.resolution != rig.resolution) throw ShapeError("uv_tv: rig resolution mismatch");
  const int res = texture.resolution;
  // First pass counts valid pairs so the mean is well-defined before gradients.
  long pairs = 0;
  for (int row = 0; row < res; ++row) {
    for (int col = 0; col < res; ++col) {
      if (rig.at(row, col).face < 0) continue;
      if (col + 1 < res && rig.at(row, col + 1).face >= 0) ++pairs;
      if (row + 1 < res && rig.at(row + 1, col).face >= 0) ++pairs;
    }
  }
  if (pairs == 0) return 0.0;
  // Mean over pairs; each pair contributes the L1 difference of its 3 delta channels.
  const double inv_n = 1.0 / static_cast<double>(pairs);

  double s = 0.0;
  auto accumulate = [&](int r0, int c0, int r1, int c1) {
    for (int k = 0; k < 3; ++k) {
      const double d = texture.at(r0, c0, k) - texture.at(r1, c1, k);
      s += std::abs(d);
      if (d_texture) {
        d_texture->at(r0, c0, k) += weight * sign(d) * inv_n;
        d_texture->at(r1, c1, k) -= weight * sign(d) * inv_n;
      }
    }
  };
  for (int row = 0; row < res; ++row) {
    for (int col = 0; col < res; ++col) {
      if (rig.at(row, col).face < 0) continue;
      if (col + 1 < res && rig.at(row, col + 1).face >= 0) accumulate(row, col, row, col + 1);
      if (row + 1 < res && rig.at(row + 1, col).face >= 0) accumulate(row, col, row + 1, col);
    }
  }
  return s * inv_n;
}

}  // namespace gshead
