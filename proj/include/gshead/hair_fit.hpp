// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/jacobian.hpp"
#include "gshead/mesh_raster.hpp"

namespace gshead {

struct HairFitConfig {
  int max_iterations = 500;
  double learning_rate = 1e-2;
  // Coarse-to-fine silhouette band: annealed geometrically from start to end
  // over the run so early iterations see long-range gradients.
  double softness_start = 8.0;
  double softness_end = 1.5;
  int image_width = 256;
  int image_height = 256;

  double softness_at(int it) const {
    if (max_iterations <= 1) return softness_end;
    const double t = double(it) / double(max_iterations - 1);
    return softness_start * std::pow(softness_end / softness_start, t);
  }
};

struct HairFitResult {
  TemplateMesh mesh;
  JacobianField field;
  double final_loss = 0.0;
  std::vector<double> loss_trace;  // one entry per iteration
};

struct FitTarget {
  CameraPose camera;
  Image labels;  // H x W scalar label image
};

// Multi-view silhouette fitting: Adam over (J, t) of the mean L1 between the
// rendered label image of the deformed mesh and each target, averaged over
// views. J starts at the identity, t at zero.
HairFitResult fit_hair_mesh(const TemplateMesh& tmpl, const std::vector<FitTarget>& targets,
                            const HairFitConfig& config = HairFitConfig{});

}  // namespace gshead
