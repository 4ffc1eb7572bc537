// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/camera.hpp"
#include "gshead/image.hpp"
#include "gshead/mesh.hpp"

namespace gshead {

// One or more labeled mesh parts rendered into a scalar segmentation image
// (0 background, 1 face, 2 hair).
struct LabeledMeshScene {
  std::vector<TemplateMesh> parts;
};

// Hard z-buffered interior with smooth silhouette edges: pixels within
// `softness` px of the nearest visible silhouette edge blend between the
// occluded value and the edge's label along a smoothstep ramp of the signed
// screen-space distance. Differentiable w.r.t. vertex positions through the
// edge term; beyond the band the output equals the hard rasterization.
Image render_mesh_labels(const LabeledMeshScene& scene, const CameraPose& camera, int img_w,
                         int img_h, double softness = 1.5);

// Gradient of render_mesh_labels w.r.t. every part's vertex positions.
// Occlusion changes carry no gradient; only in-plane silhouette motion does.
std::vector<MatX> render_mesh_labels_backward(const LabeledMeshScene& scene,
                                              const CameraPose& camera, int img_w, int img_h,
                                              double softness, const Image& d_image);

}  // namespace gshead
