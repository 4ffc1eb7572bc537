// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/drivers.hpp"

#include "gshead/adam.hpp"
#include "gshead/container.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace gshead {

namespace {

constexpr double kCameraRadius = 340.0;
constexpr double kCameraPitch = 10.0;
constexpr double kFocalNorm = 1.1;

// Per-tensor Adam over a NetParams map, split by the discriminator prefix.
struct NamedAdam {
  double lr;
  std::map<std::string, Adam> state;

  explicit NamedAdam(double lr_) : lr(lr_) {}

  void step(NetParams* params, const GradMap& grads, bool disc_side) {
    for (const auto& [name, g] : grads.tensors) {
      const bool is_disc = name.rfind("disc.", 0) == 0;
      if (is_disc != disc_side) continue;
      auto [it, inserted] = state.try_emplace(name, lr);
      it->second.lr = lr;
      it->second.step(params->at(name).data, g.data);
    }
  }
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

VecX sample_z(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  VecX z(dim);
  for (int i = 0; i < dim; ++i) z[i] = gauss(rng);
  return z;
}

// Slice the combined-set gradients into one part's range.
SetGrads slice_grads(const SetGrads& all, size_t begin, size_t count) {
  SetGrads out(count);
  for (size_t i = 0; i < count; ++i) {
    out.d_position[i] = all.d_position[begin + i];
    out.d_rotation[i] = all.d_rotation[begin + i];
    out.d_scale[i] = all.d_scale[begin + i];
    out.d_color[i] = all.d_color[begin + i];
    out.d_opacity[i] = all.d_opacity[begin + i];
    out.d_label[i] = all.d_label[begin + i];
  }
  return out;
}

double mean_spacing_mm(const TemplateMesh& mesh, int valid_texels) {
  double area = 0.0;
  for (int f = 0; f < mesh.num_faces(); ++f) area += mesh.face_area(f);
  return std::sqrt(area / std::max(1, valid_texels));
}

GaussianTextureMap init_texture(int res, double spacing_mm, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.05);
  GaussianTextureMap tex(res);
  for (int row = 0; row < res; ++row)
    for (int col = 0; col < res; ++col) {
      for (int c = 0; c < 14; ++c) tex.at(row, col, c) = gauss(rng);
      tex.at(row, col, 3) += 1.0;  // near-identity quaternion
      const double log_scale = std::log(std::max(0.5, 0.8 * spacing_mm));
      for (int c = 7; c < 10; ++c) tex.at(row, col, c) += log_scale;
    }
  return tex;
}

}  // namespace

void RunConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (pose_swap_probability < 0.0 || pose_swap_probability > 1.0)
    throw ConfigError("pose swap probability outside [0,1]");
  if (image_size < 8 || texture_resolution < 4) throw ConfigError("degenerate sizes");
  if (learning_rate <= 0.0 || disc_learning_rate <= 0.0) throw ConfigError("bad learning rate");
  weights.validate();
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "seed = " << seed << "\n"
     << "iterations = " << iterations << "\n"
     << "learning_rate = " << learning_rate << "\n"
     << "disc_learning_rate = " << disc_learning_rate << "\n"
     << "image_size = " << image_size << "\n"
     << "texture_resolution = " << texture_resolution << "\n"
     << "num_scenes = " << num_scenes << "\n"
     << "views_per_scene = " << views_per_scene << "\n"
     << "pose_swap_probability = " << pose_swap_probability << "\n"
     << "omega = " << omega << "\n"
     << "checkpoint_every = " << checkpoint_every << "\n"
     << "metrics_every = " << metrics_every << "\n"
     << "fit_support_sigma = " << fit_support_sigma << "\n"
     << "gamma_face = " << gamma_face << "\n"
     << "gamma_hair = " << gamma_hair << "\n"
     << "mesh_softness = " << mesh_softness << "\n"
     << "lambda_rgb = " << weights.rgb << "\n"
     << "lambda_mask = " << weights.mask << "\n"
     << "lambda_seg = " << weights.seg << "\n"
     << "lambda_seg_mesh = " << weights.seg_mesh << "\n"
     << "lambda_pos = " << weights.pos << "\n"
     << "lambda_scale = " << weights.scale << "\n"
     << "lambda_uv = " << weights.uv << "\n"
     << "r1_strength = " << weights.r1 << "\n"
     << "emit_float = " << (emit_float ? 1 : 0) << "\n"
     << "init_from_ground_truth = " << (init_from_ground_truth ? 1 : 0) << "\n";
  return os.str();
}

void RunConfig::apply_pair(const std::string& key, const std::string& value) {
  try {
    if (key == "seed") seed = std::stoull(value);
    else if (key == "iterations") iterations = std::stoi(value);
    else if (key == "learning_rate") learning_rate = std::stod(value);
    else if (key == "disc_learning_rate") disc_learning_rate = std::stod(value);
    else if (key == "image_size") image_size = std::stoi(value);
    else if (key == "texture_resolution") texture_resolution = std::stoi(value);
    else if (key == "num_scenes") num_scenes = std::stoi(value);
    else if (key == "views_per_scene") views_per_scene = std::stoi(value);
    else if (key == "pose_swap_probability") pose_swap_probability = std::stod(value);
    else if (key == "omega") omega = std::stod(value);
    else if (key == "checkpoint_every") checkpoint_every = std::stoi(value);
    else if (key == "metrics_every") metrics_every = std::stoi(value);
    else if (key == "fit_support_sigma") fit_support_sigma = std::stod(value);
    else if (key == "gamma_face") gamma_face = std::stod(value);
    else if (key == "gamma_hair") gamma_hair = std::stod(value);
    else if (key == "mesh_softness") mesh_softness = std::stod(value);
    else if (key == "lambda_rgb") weights.rgb = std::stod(value);
    else if (key == "lambda_mask") weights.mask = std::stod(value);
    else if (key == "lambda_seg") weights.seg = std::stod(value);
    else if (key == "lambda_seg_mesh") weights.seg_mesh = std::stod(value);
    else if (key == "lambda_pos") weights.pos = std::stod(value);
    else if (key == "lambda_scale") weights.scale = std::stod(value);
    else if (key == "lambda_uv") weights.uv = std::stod(value);
    else if (key == "r1_strength") weights.r1 = std::stod(value);
    else if (key == "output_dir") output_dir = value;
    else if (key == "emit_float") emit_float = std::stoi(value) != 0;
    else if (key == "init_from_ground_truth") init_from_ground_truth = std::stoi(value) != 0;
    else throw ConfigError("unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad value for config key " + key + ": " + value);
  }
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
    apply_pair(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

GeneratorAssets make_generator_assets(int texture_resolution, int blend_coeffs) {
  GeneratorAssets assets;
  assets.face_mesh = make_face_sphere(24, 16, 100.0, 0.04, 0.0);
  assets.hair_template = make_hair_template(24, 16, 107.0);

  std::mt19937_64 rng(fnv1a("hair-family"));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<TemplateMesh> family;
  for (int i = 0; i < 16; ++i) {
    TemplateMesh m = assets.hair_template;
    HairStyleParams p;
    p.length = 0.8 + 0.7 * uni(rng);
    p.flare = -0.1 + 0.35 * uni(rng);
    p.fluff = 0.25 * uni(rng);
    m.vertices = deform_hair_template(assets.hair_template, p);
    family.push_back(std::move(m));
  }
  assets.hair_model = build_blend_model(family, blend_coeffs);
  assets.face_rig = build_uv_rig(assets.face_mesh, texture_resolution);
  assets.hair_rig_template = build_uv_rig(assets.hair_template, texture_resolution);
  return assets;
}

// ---------------------------------------------------------------------------
// fit-gaussians

FitGaussiansResult fit_gaussians(const SyntheticScene& scene, const DatasetSpec& spec,
                                 const RunConfig& config) {
  config.validate();
  if (scene.views.size() < 2) throw ConfigError("fit_gaussians needs at least 2 views");
  const int res = config.texture_resolution;
  const int S = scene.views.front().rgb.height;

  const UvRig face_rig = build_uv_rig(scene.face_mesh, res);
  const UvRig hair_rig = build_uv_rig(scene.hair_mesh, res);
  const size_t nf = size_t(face_rig.valid_count());
  const size_t nh = size_t(hair_rig.valid_count());

  GaussianTextureMap face_tex, hair_tex;
  if (config.init_from_ground_truth) {
    if (scene.face_texture.resolution != res)
      throw ConfigError("ground-truth init needs matching texture resolutions");
    face_tex = scene.face_texture;
    hair_tex = scene.hair_texture;
  } else {
    face_tex = init_texture(res, mean_spacing_mm(scene.face_mesh, int(nf)),
                            fnv1a("face-texture", config.seed));
    hair_tex = init_texture(res, mean_spacing_mm(scene.hair_mesh, int(nh)),
                            fnv1a("hair-texture", config.seed));
  }

  RenderOptions ropts;
  ropts.support_sigma = config.fit_support_sigma;

  const size_t n_params = face_tex.data.size() + hair_tex.data.size();
  Adam adam(config.learning_rate);
  VecX params(n_params);
  for (size_t i = 0; i < face_tex.data.size(); ++i) params[i] = face_tex.data[i];
  for (size_t i = 0; i < hair_tex.data.size(); ++i) params[face_tex.data.size() + i] = hair_tex.data[i];

  FitGaussiansResult result;
  const double inv_views = 1.0 / double(scene.views.size());
  const LossWeights& w = config.weights;

  for (int it = 0; it < config.iterations; ++it) {
    for (size_t i = 0; i < face_tex.data.size(); ++i) face_tex.data[i] = params[i];
    for (size_t i = 0; i < hair_tex.data.size(); ++i) hair_tex.data[i] = params[face_tex.data.size() + i];

    GaussianSet set = spawn_gaussians(face_tex, face_rig, scene.face_mesh, config.gamma_face,
                                      PartLabel::Face);
    set.append(spawn_gaussians(hair_tex, hair_rig, scene.hair_mesh, config.gamma_hair,
                               PartLabel::Hair));

    SetGrads grads(set.size());
    double l_rgb = 0.0, l_mask = 0.0, l_seg = 0.0;
    for (const auto& view : scene.views) {
      const RenderOutput out = render(set, view.camera, S, S, Vec3::Zero(), ropts);
      Image d_rgb(S, S, 3), d_mask(S, S, 1), d_seg(S, S, 3);
      l_rgb += inv_views * l1_loss(out.rgb, view.rgb, &d_rgb, w.rgb * inv_views);
      l_mask += inv_views * l1_loss(out.mask, view.mask, &d_mask, w.mask * inv_views);
      l_seg += inv_views * seg_cross_entropy(out.seg, view.seg_classes, &d_seg, w.seg * inv_views);
      RenderGrads up;
      up.d_rgb = &d_rgb;
      up.d_mask = &d_mask;
      up.d_seg = &d_seg;
      const SetGrads sg = render_backward(set, view.camera, S, S, Vec3::Zero(), up, ropts);
      for (size_t i = 0; i < set.size(); ++i) {
        grads.d_position[i] += sg.d_position[i];
        grads.d_rotation[i] += sg.d_rotation[i];
        grads.d_scale[i] += sg.d_scale[i];
        grads.d_color[i] += sg.d_color[i];
        grads.d_opacity[i] += sg.d_opacity[i];
        grads.d_label[i] += sg.d_label[i];
      }
    }

    // Regularizers.
    std::vector<Vec3> extra_d_delta(set.size(), Vec3::Zero());
    const double l_pos = pos_reg(set.deltas, &extra_d_delta, w.pos);
    std::vector<Vec3> scales(set.size());
    for (size_t i = 0; i < set.size(); ++i) scales[i] = set.gaussians[i].scale;
    std::vector<Vec3> d_scales(set.size(), Vec3::Zero());
    const double l_scale = scale_reg(scales, 0.2, 5.0, &d_scales, w.scale);
    for (size_t i = 0; i < set.size(); ++i) grads.d_scale[i] += d_scales[i];

    GaussianTextureMap d_face(res, 0.0), d_hair(res, 0.0);
    const double l_uv =
        uv_tv(face_tex, face_rig, &d_face, w.uv) + uv_tv(hair_tex, hair_rig, &d_hair, w.uv);

    const SetGrads face_grads = slice_grads(grads, 0, nf);
    const SetGrads hair_grads = slice_grads(grads, nf, nh);
    std::vector<Vec3> face_extra(extra_d_delta.begin(), extra_d_delta.begin() + nf);
    std::vector<Vec3> hair_extra(extra_d_delta.begin() + nf, extra_d_delta.end());
    spawn_gaussians_backward(face_tex, face_rig, scene.face_mesh, config.gamma_face, face_grads,
                             &face_extra, &d_face, nullptr);
    spawn_gaussians_backward(hair_tex, hair_rig, scene.hair_mesh, config.gamma_hair, hair_grads,
                             &hair_extra, &d_hair, nullptr);

    const LossReport report = total_loss(0.0, l_rgb, l_mask, l_seg, 0.0, l_pos, l_scale, l_uv, w);
    result.loss_trace.push_back(report.total);
    if (it % config.metrics_every == 0) result.metrics_lines.push_back(report.to_line(it));
    if (!std::isfinite(report.total))
      throw NumericError("fit_gaussians diverged at iteration " + std::to_string(it));

    VecX grad_vec(n_params);
    for (size_t i = 0; i < d_face.data.size(); ++i) grad_vec[i] = d_face.data[i];
    for (size_t i = 0; i < d_hair.data.size(); ++i) grad_vec[d_face.data.size() + i] = d_hair.data[i];
    adam.step(params, grad_vec);
  }

  for (size_t i = 0; i < face_tex.data.size(); ++i) face_tex.data[i] = params[i];
  for (size_t i = 0; i < hair_tex.data.size(); ++i) hair_tex.data[i] = params[face_tex.data.size() + i];
  result.face_texture = face_tex;
  result.hair_texture = hair_tex;

  // Final per-view metrics.
  GaussianSet set = spawn_gaussians(face_tex, face_rig, scene.face_mesh, config.gamma_face,
                                    PartLabel::Face);
  set.append(spawn_gaussians(hair_tex, hair_rig, scene.hair_mesh, config.gamma_hair,
                             PartLabel::Hair));
  char buf[200];
  for (size_t vi = 0; vi < scene.views.size(); ++vi) {
    const auto& view = scene.views[vi];
    const RenderOutput out = render(set, view.camera, S, S, Vec3::Zero(), ropts);
    const double view_psnr = psnr(out.rgb, view.rgb);
    const double view_iou = mask_iou(out.mask, view.mask);
    const double view_acc = seg_accuracy(out.seg, view.seg_classes);
    result.mean_psnr += view_psnr * inv_views;
    result.mean_mask_iou += view_iou * inv_views;
    result.mean_seg_accuracy += view_acc * inv_views;
    std::snprintf(buf, sizeof(buf), "view=%zu yaw=%.17g psnr=%.17g mask_iou=%.17g seg_accuracy=%.17g",
                  vi, view.yaw_deg, view_psnr, view_iou, view_acc);
    result.metrics_lines.push_back(buf);
  }
  std::snprintf(buf, sizeof(buf), "final psnr=%.17g mask_iou=%.17g seg_accuracy=%.17g",
                result.mean_psnr, result.mean_mask_iou, result.mean_seg_accuracy);
  result.metrics_lines.push_back(buf);
  return result;
}

// ---------------------------------------------------------------------------
// toy GAN training

TrainResult train_toy_gan(const std::vector<SyntheticScene>& dataset, const DatasetSpec& spec,
                          const RunConfig& config) {
  config.validate();
  if (dataset.empty()) throw ConfigError("training dataset is empty");

  GeneratorAssets assets = make_generator_assets(config.texture_resolution);

  SynthesisConfig cfg;
  cfg.output_resolution = config.texture_resolution;
  cfg.image_resolution = config.image_size;
  const double spacing =
      mean_spacing_mm(assets.face_mesh, assets.face_rig.valid_count());
  cfg.init_scale_mm = clamp(0.6 * spacing, 0.5, 4.0);
  cfg.validate();

  TrainResult result;
  result.net_config = cfg;
  result.params = init_params(cfg, config.seed);

  const int S = config.image_size;
  RenderOptions ropts;
  ropts.support_sigma = config.fit_support_sigma;

  std::mt19937_64 rng(fnv1a("train", config.seed));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::uniform_int_distribution<int> pick_scene(0, int(dataset.size()) - 1);
  const LossWeights& w = config.weights;

  NamedAdam g_adam(config.learning_rate);
  NamedAdam d_adam(config.disc_learning_rate);
  NetParams last_good = result.params;

  auto sample_view = [&](const SyntheticScene** scene) -> const SyntheticView* {
    const SyntheticScene& s = dataset[size_t(pick_scene(rng))];
    std::uniform_int_distribution<int> pick_view(0, int(s.views.size()) - 1);
    if (scene) *scene = &s;
    return &s.views[size_t(pick_view(rng))];
  };

  auto generate_and_render = [&](const VecX& z, const CameraPose& cond_cam,
                                 const CameraPose& render_cam, GenerateCtx* ctx,
                                 GeneratedTextures* textures, GaussianSet* set,
                                 TemplateMesh* hair_mesh) -> RenderOutput {
    GenerateOptions opts;
    opts.training = true;
    opts.rng = &rng;
    *textures = generate_textures(result.params, cfg, z, cond_cam, opts, ctx);
    *hair_mesh = assets.hair_template;
    hair_mesh->vertices = blend_hair_shape(assets.hair_model, textures->theta);
    *set = spawn_gaussians(textures->face, assets.face_rig, assets.face_mesh, config.gamma_face,
                           PartLabel::Face);
    set->append(spawn_gaussians(textures->hair, assets.hair_rig_template, *hair_mesh,
                                config.gamma_hair, PartLabel::Hair));
    return render(*set, render_cam, S, S, Vec3::Zero(), ropts);
  };

  for (long step = 0; step < config.iterations; ++step) {
    // ---- discriminator step
    const SyntheticView* real = sample_view(nullptr);
    {
      const VecX z = sample_z(rng, cfg.z_dim);
      const bool swap = uni(rng) < config.pose_swap_probability;
      const CameraPose cond_cam = swap ? sample_view(nullptr)->camera : real->camera;

      GenerateCtx gctx;
      GeneratedTextures textures;
      GaussianSet fake_set;
      TemplateMesh hair_mesh;
      const RenderOutput fake =
          generate_and_render(z, cond_cam, real->camera, &gctx, &textures, &fake_set, &hair_mesh);

      DiscCtx ctx_real, ctx_fake;
      const double s_real = discriminator_forward(result.params, cfg, real->rgb, real->mask,
                                                  real->camera, &ctx_real);
      const double s_fake =
          discriminator_forward(result.params, cfg, fake.rgb, fake.mask, real->camera, &ctx_fake);

      std::vector<double> d_real, d_fake;
      adv_loss_d_grad({s_real}, {s_fake}, &d_real, &d_fake);
      GradMap d_grads;
      discriminator_backward(result.params, cfg, ctx_real, d_real[0], &d_grads, nullptr, nullptr);
      discriminator_backward(result.params, cfg, ctx_fake, d_fake[0], &d_grads, nullptr, nullptr);

      // R1 on the real sample: exact input gradient, then a symmetric
      // directional difference for the parameter gradient.
      Image g_rgb(S, S, 3), g_mask(S, S, 1);
      const double r1_value =
          r1_penalty(result.params, cfg, real->rgb, real->mask, real->camera, w.r1, &g_rgb,
                     &g_mask);

      if (w.r1 > 0.0 && r1_value > 0.0) {
        double ginf = 0.0;
        for (double v : g_rgb.data) ginf = std::max(ginf, std::abs(v));
        for (double v : g_mask.data) ginf = std::max(ginf, std::abs(v));
        const double eps = 1e-3 / std::max(1e-12, ginf);
        GradMap plus, minus;
        for (int sign : {+1, -1}) {
          Image rgb_s = real->rgb, mask_s = real->mask;
          for (size_t i = 0; i < rgb_s.data.size(); ++i) rgb_s.data[i] += sign * eps * g_rgb.data[i];
          for (size_t i = 0; i < mask_s.data.size(); ++i)
            mask_s.data[i] += sign * eps * g_mask.data[i];
          DiscCtx ctx_s;
          discriminator_forward(result.params, cfg, rgb_s, mask_s, real->camera, &ctx_s);
          discriminator_backward(result.params, cfg, ctx_s, 1.0, sign > 0 ? &plus : &minus,
                                 nullptr, nullptr);
        }
        for (const auto& [name, gp] : plus.tensors) {
          const VecX diff = w.r1 * (gp.data - minus.at(name).data) / (2.0 * eps);
          accumulate(&d_grads, name, diff, gp.shape);
        }
      }

      d_adam.step(&result.params, d_grads, true);

      const double d_loss = adv_loss_d({s_real}, {s_fake});
      if (!std::isfinite(d_loss) || !std::isfinite(r1_value)) {
        if (!config.output_dir.empty())
          write_checkpoint(config.output_dir + "/ckpt_last_good.bin", last_good);
        throw NumericError("discriminator diverged at step " + std::to_string(step));
      }
      char dbuf[128];
      std::snprintf(dbuf, sizeof(dbuf), "step=%ld phase=d d_adv=%.17g r1=%.17g", step, d_loss,
                    r1_value);
      result.metrics_lines.push_back(dbuf);
    }

    // ---- generator step
    {
      const SyntheticScene* scene = nullptr;
      const SyntheticView* view = sample_view(&scene);
      const VecX z = sample_z(rng, cfg.z_dim);
      const bool swap = uni(rng) < config.pose_swap_probability;
      result.pose_swaps += swap;
      const CameraPose cond_cam = swap ? sample_view(nullptr)->camera : view->camera;

      GenerateCtx gctx;
      GeneratedTextures textures;
      GaussianSet set;
      TemplateMesh hair_mesh;
      const RenderOutput out =
          generate_and_render(z, cond_cam, view->camera, &gctx, &textures, &set, &hair_mesh);
      ++result.generator_steps;
      result.condition_drops += textures.dropped;

      DiscCtx dctx;
      const double s_fake =
          discriminator_forward(result.params, cfg, out.rgb, out.mask, view->camera, &dctx);
      const double g_adv = adv_loss_g({s_fake});
      const std::vector<double> d_score = adv_loss_g_grad({s_fake});

      // Image-space gradients: adversarial through the discriminator plus the
      // weighted reconstruction terms.
      Image d_rgb(S, S, 3), d_mask(S, S, 1), d_seg(S, S, 3);
      discriminator_backward(result.params, cfg, dctx, d_score[0], nullptr, &d_rgb, &d_mask);
      const double l_rgb = l1_loss(out.rgb, view->rgb, &d_rgb, w.rgb);
      const double l_mask = l1_loss(out.mask, view->mask, &d_mask, w.mask);
      const double l_seg = seg_cross_entropy(out.seg, view->seg_classes, &d_seg, w.seg);

      // Mesh segmentation term through the label rasterizer.
      LabeledMeshScene mesh_scene;
      mesh_scene.parts = {assets.face_mesh, hair_mesh};
      const Image mesh_seg =
          render_mesh_labels(mesh_scene, view->camera, S, S, config.mesh_softness);
      Image d_mesh_seg(S, S, 1);
      const double l_seg_mesh =
          seg_mesh_l1(mesh_seg, view->seg_classes, &d_mesh_seg, w.seg_mesh);
      const auto d_mesh_verts = render_mesh_labels_backward(mesh_scene, view->camera, S, S,
                                                            config.mesh_softness, d_mesh_seg);
      VecX d_theta = blend_shape_adjoint(assets.hair_model, d_mesh_verts[1]);

      // Regularizers.
      std::vector<Vec3> extra_d_delta(set.size(), Vec3::Zero());
      const double l_pos = pos_reg(set.deltas, &extra_d_delta, w.pos);
      std::vector<Vec3> scales(set.size());
      for (size_t i = 0; i < set.size(); ++i) scales[i] = set.gaussians[i].scale;
      std::vector<Vec3> d_scales(set.size(), Vec3::Zero());
      const double l_scale = scale_reg(scales, 0.2, 5.0, &d_scales, w.scale);

      RenderGrads up;
      up.d_rgb = &d_rgb;
      up.d_mask = &d_mask;
      up.d_seg = &d_seg;
      SetGrads sgrads = render_backward(set, view->camera, S, S, Vec3::Zero(), up, ropts);
      for (size_t i = 0; i < set.size(); ++i) sgrads.d_scale[i] += d_scales[i];

      const size_t nf = size_t(assets.face_rig.valid_count());
      const size_t nh = size_t(assets.hair_rig_template.valid_count());
      GaussianTextureMap d_face_tex(cfg.output_resolution, 0.0),
          d_hair_tex(cfg.output_resolution, 0.0);
      const double l_uv = uv_tv(textures.face, assets.face_rig, &d_face_tex, w.uv) +
                          uv_tv(textures.hair, assets.hair_rig_template, &d_hair_tex, w.uv);

      const SetGrads face_grads = slice_grads(sgrads, 0, nf);
      const SetGrads hair_grads = slice_grads(sgrads, nf, nh);
      std::vector<Vec3> face_extra(extra_d_delta.begin(), extra_d_delta.begin() + nf);
      std::vector<Vec3> hair_extra(extra_d_delta.begin() + nf, extra_d_delta.end());
      spawn_gaussians_backward(textures.face, assets.face_rig, assets.face_mesh, config.gamma_face,
                               face_grads, &face_extra, &d_face_tex, nullptr);
      MatX d_hair_verts = MatX::Zero(hair_mesh.num_vertices(), 3);
      spawn_gaussians_backward(textures.hair, assets.hair_rig_template, hair_mesh,
                               config.gamma_hair, hair_grads, &hair_extra, &d_hair_tex,
                               &d_hair_verts);
      d_theta += blend_shape_adjoint(assets.hair_model, d_hair_verts);

      GradMap g_grads;
      generate_textures_backward(result.params, cfg, gctx, d_hair_tex, d_face_tex, d_theta,
                                 &g_grads);
      g_adam.step(&result.params, g_grads, false);

      const LossReport report =
          total_loss(g_adv, l_rgb, l_mask, l_seg, l_seg_mesh, l_pos, l_scale, l_uv, w);
      if (!std::isfinite(report.total)) {
        if (!config.output_dir.empty())
          write_checkpoint(config.output_dir + "/ckpt_last_good.bin", last_good);
        throw NumericError("generator diverged at step " + std::to_string(step));
      }
      std::string line = report.to_line(step);
      line += " drop=" + std::to_string(int(textures.dropped)) +
              " swap=" + std::to_string(int(swap));
      result.metrics_lines.push_back(line);
    }

    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      last_good = result.params;
      if (!config.output_dir.empty())
        write_checkpoint(config.output_dir + "/ckpt_" + std::to_string(step + 1) + ".bin",
                         result.params);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// editing and sampling

RenderOutput render_generated(const GeneratedTextures& textures, const GeneratorAssets& assets,
                              const CameraPose& camera, int image_size, const RunConfig& config) {
  TemplateMesh hair_mesh = assets.hair_template;
  hair_mesh.vertices = blend_hair_shape(assets.hair_model, textures.theta);
  GaussianSet set = spawn_gaussians(textures.face, assets.face_rig, assets.face_mesh,
                                    config.gamma_face, PartLabel::Face);
  set.append(spawn_gaussians(textures.hair, assets.hair_rig_template, hair_mesh, config.gamma_hair,
                             PartLabel::Hair));
  RenderOptions ropts;
  ropts.support_sigma = config.fit_support_sigma;
  return render(set, camera, image_size, image_size, Vec3::Zero(), ropts);
}

EditOutputs edit_hairstyle(const NetParams& params, const SynthesisConfig& cfg,
                           const GeneratorAssets& assets, const VecX& z_face_source,
                           const VecX& z_hair_source, const CameraPose& mapping_camera,
                           double omega, const RunConfig& config, int sweep_views) {
  WCode hair_from_face, face_code, hair_code, face_from_hair;
  mapping_forward(params, cfg, z_face_source, mapping_camera, &hair_from_face, &face_code, nullptr);
  mapping_forward(params, cfg, z_hair_source, mapping_camera, &hair_code, &face_from_hair, nullptr);

  GenerateOptions opts;
  opts.omega = omega;
  EditOutputs out;
  out.textures = generate_from_codes(params, cfg, hair_code, face_code, opts);

  for (int k = 0; k < sweep_views; ++k) {
    const double yaw = sweep_views == 1 ? 0.0 : 180.0 * k / (sweep_views - 1);
    const CameraPose cam = make_ring_camera(yaw, kCameraPitch, kCameraRadius, kFocalNorm);
    out.views.push_back(render_generated(out.textures, assets, cam, config.image_size, config));
    out.yaws.push_back(yaw);
  }
  return out;
}

}  // namespace gshead
