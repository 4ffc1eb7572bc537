// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/image.hpp"
#include "gshead/texture.hpp"
#include "gshead/uv_rig.hpp"

#include <map>
#include <string>

namespace gshead {

struct LossWeights {
  double rgb = 10.0;
  double mask = 10.0;
  double seg = 1.0;
  double seg_mesh = 100.0;
  double pos = 0.1;
  double scale = 1.0;
  double uv = 1.0;
  double r1 = 1.0;

  void validate() const {
    for (double w : {rgb, mask, seg, seg_mesh, pos, scale, uv, r1})
      if (w < 0.0) throw ConfigError("loss weights must be nonnegative");
  }
};

// One scalar per term plus the weighted total; serializes as a single metrics
// log line.
struct LossReport {
  double adv = 0.0;
  double rgb = 0.0;
  double mask = 0.0;
  double seg = 0.0;
  double seg_mesh = 0.0;
  double pos = 0.0;
  double scale = 0.0;
  double uv = 0.0;
  double total = 0.0;

  std::string to_line(long step) const;
};

LossReport total_loss(double adv, double rgb, double mask, double seg, double seg_mesh, double pos,
                      double scale, double uv, const LossWeights& w);

// Non-saturating GAN losses over batches of raw scores.
double adv_loss_g(const std::vector<double>& score_fake);
double adv_loss_d(const std::vector<double>& score_real, const std::vector<double>& score_fake);
// d loss / d score for the same batch conventions.
std::vector<double> adv_loss_g_grad(const std::vector<double>& score_fake);
void adv_loss_d_grad(const std::vector<double>& score_real, const std::vector<double>& score_fake,
                     std::vector<double>* d_real, std::vector<double>* d_fake);

// Mean absolute error; optional gradient w.r.t. pred accumulated with weight.
double l1_loss(const Image& pred, const Image& target, Image* d_pred = nullptr,
               double weight = 1.0);

// Cross-entropy of a simplex-valued seg render against class-index targets
// (values in {0,1,2}).
double seg_cross_entropy(const Image& pred_seg, const Image& target_classes,
                         Image* d_pred = nullptr, double weight = 1.0);

// L1 between a scalar mesh-label render and the targets' scalar labels.
double seg_mesh_l1(const Image& pred, const Image& target_classes, Image* d_pred = nullptr,
                   double weight = 1.0);

// Sum over Gaussians of || delta position ||_2 (post-clamp deltas).
double pos_reg(const std::vector<Vec3>& deltas, std::vector<Vec3>* d_deltas = nullptr,
               double weight = 1.0);

// Piecewise scale penalty: 10 |s - s_min| below, (s - s_max)^2 above, summed
// over every component of every Gaussian.
double scale_reg(const std::vector<Vec3>& scales, double s_min = 0.2, double s_max = 5.0,
                 std::vector<Vec3>* d_scales = nullptr, double weight = 1.0);

// Mean L1 difference of the delta-position channels over valid adjacent texel
// pairs; pairs touching invalid texels are skipped.
double uv_tv(const GaussianTextureMap& texture, const UvRig& rig,
             GaussianTextureMap* d_texture = nullptr, double weight = 1.0);

}  // namespace gshead
