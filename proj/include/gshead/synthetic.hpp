// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/gaussians.hpp"
#include "gshead/mesh_raster.hpp"
#include "gshead/renderer.hpp"

namespace gshead {

// Procedural hairstyle family: smooth deformations of one hemisphere template,
// so every sample shares its topology and the deformation is known exactly.
struct HairStyleParams {
  double length = 1.0;  // cap extent multiplier
  double flare = 0.0;   // radial widening toward the cap rim
  double fluff = 0.0;   // mid-cap radial bulge
};

// Closed deformed sphere (face, label 1) with per-corner UVs covering [0,1]^2.
TemplateMesh make_face_sphere(int segments, int rings, double radius, double bump_amp = 0.05,
                              double bump_phase = 0.0);

// Hemisphere cap (hair, label 2), open at the rim, pole closed.
TemplateMesh make_hair_template(int segments, int rings, double radius);

// Apply a hairstyle to the template; returns new vertex positions.
MatX deform_hair_template(const TemplateMesh& tmpl, const HairStyleParams& params);

struct DatasetSpec {
  int num_scenes = 1;
  int views_per_scene = 8;
  int image_size = 128;
  int texture_resolution = 64;
  int sphere_segments = 24;
  int sphere_rings = 16;
  double face_radius = 100.0;       // mm
  double camera_radius = 340.0;     // mm
  double camera_pitch_deg = 10.0;
  double focal_norm = 1.1;
  double gamma_face = 40.0;
  double gamma_hair = 20.0;
  double mesh_softness = 1.5;

  void validate() const {
    if (num_scenes < 1 || views_per_scene < 1 || image_size < 8 || texture_resolution < 4)
      throw ConfigError("invalid dataset spec");
  }
};

struct SyntheticView {
  double yaw_deg = 0.0;
  CameraPose camera;
  Image rgb;          // H x W x 3
  Image mask;         // H x W x 1
  Image seg;          // H x W x 3 rendered label blend
  Image seg_classes;  // H x W x 1 class indices {0,1,2}
  Image mesh_seg;     // H x W x 1 scalar mesh labels
};

struct SyntheticScene {
  TemplateMesh face_mesh;
  TemplateMesh hair_template;
  TemplateMesh hair_mesh;  // deformed template
  HairStyleParams style;
  GaussianTextureMap face_texture;
  GaussianTextureMap hair_texture;
  std::vector<SyntheticView> views;

  // Ground-truth splats decoded from the stored textures (face then hair).
  GaussianSet spawn_ground_truth(const UvRig& face_rig, const UvRig& hair_rig,
                                 const DatasetSpec& spec) const;
};

// Deterministic in (spec, seed). All stored inputs are float32-quantized so a
// reload re-renders the stored images bit-exactly.
std::vector<SyntheticScene> make_synthetic_dataset(const DatasetSpec& spec, uint64_t seed);

// Render the ground-truth images for one view of a scene (reference renderer
// plus the mesh label rasterizer); used at generation time and by consistency
// checks.
SyntheticView render_scene_view(const SyntheticScene& scene, const UvRig& face_rig,
                                const UvRig& hair_rig, const DatasetSpec& spec, double yaw_deg);

}  // namespace gshead
