// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/camera.hpp"
#include "gshead/gaussians.hpp"
#include "gshead/image.hpp"

#include <optional>

namespace gshead {

// Screen-space splat after projection. cov2d already includes the +0.3 px^2
// anti-aliasing dilation; conic is its inverse.
struct Splat2D {
  Vec2 mean = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  Mat2 conic = Mat2::Identity();
  double depth = 0.0;
  double radius3 = 0.0;  // 3 sigma extent in pixels
  Vec3 color = Vec3::Zero();
  Vec3 label = Vec3::Zero();
  double opacity = 0.0;
  int index = -1;  // position in the source GaussianSet
};

struct RenderOutput {
  Image rgb;            // H x W x 3
  Image mask;           // H x W x 1, = 1 - final transmittance
  Image seg;            // H x W x 3, simplex per pixel
  Image transmittance;  // H x W x 1
};

struct RenderOptions {
  double near_plane = 0.01;
  double alpha_clamp = 0.999;
  double t_threshold = 1e-4;   // early termination; 0 disables
  double support_sigma = 7.0;  // tile binning radius in sigmas
  static constexpr int tile_size = 16;
};

// Projects one Gaussian; nullopt means culled (behind the near plane, or the
// 3 sigma screen extent misses the image).
std::optional<Splat2D> project_gaussian(const GaussianPrimitive& g, const CameraPose& camera,
                                        int img_w, int img_h,
                                        const RenderOptions& opts = RenderOptions{});

// Tile-binned front-to-back alpha compositing over a global depth sort
// (ties broken by Gaussian index). Deterministic.
RenderOutput render(const GaussianSet& set, const CameraPose& camera, int img_w, int img_h,
                    const Vec3& background_rgb, const RenderOptions& opts = RenderOptions{});

// Per-pixel oracle: same projection contract, full splat loop per pixel, no
// tiling and no early termination.
RenderOutput reference_render(const GaussianSet& set, const CameraPose& camera, int img_w,
                              int img_h, const Vec3& background_rgb,
                              const RenderOptions& opts = RenderOptions{});

struct RenderGrads {
  const Image* d_rgb = nullptr;   // H x W x 3, may be null
  const Image* d_mask = nullptr;  // H x W x 1
  const Image* d_seg = nullptr;   // H x W x 3
};

// Analytic gradients of render() for every Gaussian parameter. Replays the
// forward pass (including early termination) so the gradient matches the
// rendered image exactly.
SetGrads render_backward(const GaussianSet& set, const CameraPose& camera, int img_w, int img_h,
                         const Vec3& background_rgb, const RenderGrads& upstream,
                         const RenderOptions& opts = RenderOptions{});

}  // namespace gshead
