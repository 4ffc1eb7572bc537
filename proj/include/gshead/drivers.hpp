// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/blend_model.hpp"
#include "gshead/generator.hpp"
#include "gshead/hair_fit.hpp"
#include "gshead/losses.hpp"
#include "gshead/synthetic.hpp"

#include <functional>

namespace gshead {

// Run settings shared by the CLI modes; parses the key = value config schema.
struct RunConfig {
  uint64_t seed = 1;
  int iterations = 1000;
  double learning_rate = 1e-2;
  double disc_learning_rate = 2e-3;
  int image_size = 128;
  int texture_resolution = 64;
  int num_scenes = 1;
  int views_per_scene = 8;
  double pose_swap_probability = 0.8;
  double omega = 1.0;
  int checkpoint_every = 100;
  int metrics_every = 1;
  double fit_support_sigma = 4.0;  // splat binning radius during optimization
  double gamma_face = 40.0;
  double gamma_hair = 20.0;
  double mesh_softness = 1.5;
  LossWeights weights;
  std::string output_dir = "out";
  bool emit_float = false;  // exact float dumps next to PNGs
  bool init_from_ground_truth = false;

  void validate() const;
  std::string echo() const;                      // documented key = value schema
  void apply_file(const std::string& path);      // load overrides from a config file
  void apply_pair(const std::string& key, const std::string& value);
};

// Canonical generator-side templates: the face sphere, the hair template, and
// a blend model over the procedural hairstyle family. Deterministic.
struct GeneratorAssets {
  TemplateMesh face_mesh;
  TemplateMesh hair_template;
  HairBlendModel hair_model;
  UvRig face_rig;
  UvRig hair_rig_template;  // rig depends only on the UV layout, valid for any theta
};

GeneratorAssets make_generator_assets(int texture_resolution, int blend_coeffs = 32);

struct FitGaussiansResult {
  GaussianTextureMap face_texture;
  GaussianTextureMap hair_texture;
  std::vector<std::string> metrics_lines;
  std::vector<double> loss_trace;
  double mean_psnr = 0.0;
  double mean_mask_iou = 0.0;
  double mean_seg_accuracy = 0.0;
};

// Discriminator-free reconstruction: Adam directly on the two raw texture
// maps against the weighted rgb / mask / seg losses plus regularizers over all
// views of one scene.
FitGaussiansResult fit_gaussians(const SyntheticScene& scene, const DatasetSpec& spec,
                                 const RunConfig& config);

struct TrainResult {
  NetParams params;
  SynthesisConfig net_config;
  std::vector<std::string> metrics_lines;
  long generator_steps = 0;
  long condition_drops = 0;
  long pose_swaps = 0;
};

// Alternating GAN training on synthetic scenes: dual discrimination on
// (rgb, mask, camera), R1 on real samples every step, pose swapping of the
// conditioning camera, and the full weighted objective on the generator.
TrainResult train_toy_gan(const std::vector<SyntheticScene>& dataset, const DatasetSpec& spec,
                          const RunConfig& config);

struct EditOutputs {
  std::vector<RenderOutput> views;  // one per sweep yaw
  std::vector<double> yaws;
  GeneratedTextures textures;
};

// Hairstyle editing by latent swap: w_face from the face source, w_hair (and
// theta) from the hair source, rendered over a yaw sweep.
EditOutputs edit_hairstyle(const NetParams& params, const SynthesisConfig& cfg,
                           const GeneratorAssets& assets, const VecX& z_face_source,
                           const VecX& z_hair_source, const CameraPose& mapping_camera,
                           double omega, const RunConfig& config, int sweep_views = 5);

// Render one generator sample (textures -> splats -> image) at a camera.
RenderOutput render_generated(const GeneratedTextures& textures, const GeneratorAssets& assets,
                              const CameraPose& camera, int image_size, const RunConfig& config);

}  // namespace gshead
