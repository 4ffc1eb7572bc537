// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance suite. Each case prints one PASS/FAIL line with the
// measured value against its pinned threshold.

#include "gshead/container.hpp"
#include "gshead/drivers.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>

using namespace gshead;
using namespace gshead::testutil;

namespace {

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s %s (%s)\n", ok ? "PASS" : "FAIL", name, detail.c_str());
}

}  // namespace

TEST_CASE("criterion 1: tiled vs reference renderer equivalence") {
  Stopwatch watch;
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> count(500, 5000);
  RenderOptions opts;
  opts.t_threshold = 0.0;
  double worst = 0.0;
  for (int scene_i = 0; scene_i < 20; ++scene_i) {
    const GaussianSet set = random_scene(rng, count(rng));
    const CameraPose cam = make_test_camera(360.0 * scene_i / 20.0, 5.0 + scene_i);
    const RenderOutput a = render(set, cam, 128, 128, Vec3(0.2, 0.1, 0.3), opts);
    const RenderOutput b = reference_render(set, cam, 128, 128, Vec3(0.2, 0.1, 0.3), opts);
    for (size_t i = 0; i < a.rgb.data.size(); ++i)
      worst = std::max(worst, std::abs(a.rgb.data[i] - b.rgb.data[i]));
    for (size_t i = 0; i < a.mask.data.size(); ++i)
      worst = std::max(worst, std::abs(a.mask.data[i] - b.mask.data[i]));
    for (size_t i = 0; i < a.seg.data.size(); ++i)
      worst = std::max(worst, std::abs(a.seg.data[i] - b.seg.data[i]));
  }
  const double secs = watch.seconds();
  const bool ok = worst <= 1e-5 && secs < 60.0;
  report("criterion-1 rasterizer oracle equivalence", ok,
         "max|diff|=" + std::to_string(worst) + " runtime=" + std::to_string(secs) + "s");
  CHECK(worst <= 1e-5);
  CHECK(secs < 60.0);
}

TEST_CASE("criterion 2: rasterizer analytic gradients vs finite differences") {
  std::mt19937_64 rng(2002);
  std::uniform_int_distribution<int> count(10, 50);
  const int S = 32;
  double worst = 0.0;
  for (int scene_i = 0; scene_i < 10; ++scene_i) {
    GaussianSet set = random_scene(rng, count(rng), 60.0, 0.85);
    const CameraPose cam = make_test_camera(36.0 * scene_i, 12.0);
    const Vec3 bg(0.25, 0.15, 0.05);
    const Image u_rgb = random_image(rng, S, S, 3);
    const Image u_mask = random_image(rng, S, S, 1);
    const Image u_seg = random_image(rng, S, S, 3);
    RenderGrads up;
    up.d_rgb = &u_rgb;
    up.d_mask = &u_mask;
    up.d_seg = &u_seg;
    const SetGrads grads = render_backward(set, cam, S, S, bg, up);

    auto loss = [&]() {
      const RenderOutput out = render(set, cam, S, S, bg);
      double L = 0;
      for (size_t i = 0; i < out.rgb.data.size(); ++i) L += out.rgb.data[i] * u_rgb.data[i];
      for (size_t i = 0; i < out.mask.data.size(); ++i) L += out.mask.data[i] * u_mask.data[i];
      for (size_t i = 0; i < out.seg.data.size(); ++i) L += out.seg.data[i] * u_seg.data[i];
      return L;
    };
    auto probe = [&](double* param, double analytic, double h) {
      const double orig = *param;
      *param = orig + h;
      const double lp = loss();
      *param = orig - h;
      const double lm = loss();
      *param = orig;
      const double fd = (lp - lm) / (2 * h);
      if (std::abs(fd) > 1e-8) worst = std::max(worst, rel_error(fd, analytic));
    };
    // Every parameter channel of a subset of splats, all three output heads.
    for (size_t i = 0; i < set.size(); i += 4) {
      GaussianPrimitive& g = set.gaussians[i];
      for (int k = 0; k < 3; ++k) probe(&g.position[k], grads.d_position[i][k], 1e-3);
      for (int k = 0; k < 4; ++k) probe(&g.rotation[k], grads.d_rotation[i][k], 1e-5);
      for (int k = 0; k < 3; ++k) probe(&g.scale[k], grads.d_scale[i][k], 1e-4);
      for (int k = 0; k < 3; ++k) probe(&g.color[k], grads.d_color[i][k], 1e-5);
      probe(&g.opacity, grads.d_opacity[i], 1e-5);
      for (int k = 0; k < 3; ++k) probe(&g.label[k], grads.d_label[i][k], 1e-5);
    }
  }
  const bool ok = worst <= 1e-3;
  report("criterion-2 rasterizer gradients", ok, "worst_rel_err=" + std::to_string(worst));
  CHECK(worst <= 1e-3);
}

TEST_CASE("criterion 3: poisson round trip on a 500-vertex template") {
  const TemplateMesh mesh = make_hair_template(25, 19, 100.0);  // 25*20 grid + pole
  REQUIRE(mesh.num_vertices() == 501);
  const MeshGradientOperator op(mesh);
  std::mt19937_64 rng(3003);
  std::uniform_real_distribution<double> uni(0.0, 2.0 * M_PI);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const double p0 = uni(rng), p1 = uni(rng), p2 = uni(rng);
    MatX deformed = mesh.vertices;
    for (int i = 0; i < mesh.num_vertices(); ++i) {
      const Vec3 v = mesh.vertex(i) / 100.0;
      deformed(i, 0) += 9.0 * std::sin(v.y() + p0);
      deformed(i, 1) += 7.0 * std::cos(v.z() + p1) * std::sin(v.x() + p2);
      deformed(i, 2) += 8.0 * std::sin(v.x() + v.y() + p2);
    }
    JacobianField field;
    field.jacobians = op.deformation_gradients(deformed);
    const MatX sol = op.poisson_solve(field);
    const Eigen::RowVector3d offset = (deformed - sol).colwise().mean();
    worst = std::max(worst, ((deformed.rowwise() - offset) - sol).cwiseAbs().maxCoeff());
  }
  const bool ok = worst <= 1e-6;
  report("criterion-3 poisson round trip", ok, "max_vertex_err=" + std::to_string(worst));
  CHECK(worst <= 1e-6);
}

TEST_CASE("criterion 4: synthetic hair fit reaches IoU 0.98 within 500 iterations") {
  Stopwatch watch;
  TemplateMesh tmpl = make_hair_template(24, 16, 107.0);
  TemplateMesh target = tmpl;
  target.vertices = deform_hair_template(tmpl, {1.25, 0.2, 0.1});
  tmpl.vertices.rowwise() -= Eigen::RowVector3d(tmpl.vertices.colwise().mean());
  target.vertices.rowwise() -= Eigen::RowVector3d(target.vertices.colwise().mean());

  HairFitConfig cfg;
  cfg.image_width = 256;
  cfg.image_height = 256;
  cfg.max_iterations = 500;

  LabeledMeshScene target_scene;
  target_scene.parts = {target};
  std::vector<FitTarget> targets;
  for (double yaw : {0.0, 90.0, 180.0, 270.0}) {
    FitTarget t;
    t.camera = make_test_camera(yaw);
    t.labels = render_mesh_labels(target_scene, t.camera, 256, 256, cfg.softness_end);
    targets.push_back(std::move(t));
  }
  const HairFitResult res = fit_hair_mesh(tmpl, targets, cfg);

  LabeledMeshScene fitted;
  fitted.parts = {res.mesh};
  double iou = 0.0;
  for (const auto& t : targets) {
    const Image pred = render_mesh_labels(fitted, t.camera, 256, 256, cfg.softness_end);
    size_t inter = 0, uni_count = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
      const bool p = pred.data[i] >= 1.0;
      const bool g = t.labels.data[i] >= 1.0;
      inter += (p && g);
      uni_count += (p || g);
    }
    iou += (uni_count ? double(inter) / double(uni_count) : 1.0) / targets.size();
  }
  const double secs = watch.seconds();
  const bool ok = iou >= 0.98 && secs < 300.0;
  report("criterion-4 synthetic hair fit", ok,
         "iou=" + std::to_string(iou) + " runtime=" + std::to_string(secs) + "s");
  CHECK(iou >= 0.98);
  CHECK(secs < 300.0);
}

TEST_CASE("criterion 5: PCA blend model reconstruction and orthonormality") {
  const TemplateMesh tmpl = make_hair_template(12, 8, 100.0);
  std::mt19937_64 rng(5005);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<TemplateMesh> meshes;
  for (int i = 0; i < 10; ++i) {
    TemplateMesh m = tmpl;
    m.vertices =
        deform_hair_template(tmpl, {0.8 + 0.7 * uni(rng), -0.1 + 0.4 * uni(rng), 0.25 * uni(rng)});
    meshes.push_back(std::move(m));
  }
  const HairBlendModel model = build_blend_model(meshes, 9);

  MatX all(10 * tmpl.num_vertices(), 3);
  for (int i = 0; i < 10; ++i)
    all.middleRows(i * tmpl.num_vertices(), tmpl.num_vertices()) = meshes[i].vertices;
  const double bbox_diag = (all.colwise().maxCoeff() - all.colwise().minCoeff()).norm();

  double worst_rms = 0.0;
  for (const auto& m : meshes) {
    const VecX theta = project_to_coeffs(model, m.vertices);
    const MatX recon = blend_hair_shape(model, theta);
    worst_rms = std::max(
        worst_rms, std::sqrt((recon - m.vertices).squaredNorm() / double(m.vertices.size())));
  }
  const MatX mean_mesh = blend_hair_shape(model, VecX::Zero(9));
  double mean_err = 0.0;
  for (int i = 0; i < tmpl.num_vertices(); ++i)
    for (int k = 0; k < 3; ++k)
      mean_err = std::max(mean_err, std::abs(mean_mesh(i, k) - model.mean_shape[3 * i + k]));
  const double ortho =
      (model.components * model.components.transpose() - MatX::Identity(9, 9)).cwiseAbs().maxCoeff();

  const bool ok = worst_rms <= 1e-5 * bbox_diag && mean_err == 0.0 && ortho <= 1e-6;
  report("criterion-5 pca blend model", ok,
         "recon_rms/diag=" + std::to_string(worst_rms / bbox_diag) +
             " mean_exact_err=" + std::to_string(mean_err) + " ortho=" + std::to_string(ortho));
  CHECK(worst_rms <= 1e-5 * bbox_diag);
  CHECK(mean_err == 0.0);
  CHECK(ortho <= 1e-6);
}

TEST_CASE("criterion 6: loss unit values") {
  const double scale_low = scale_reg({Vec3(0.1, 1.0, 1.0)});
  const double scale_high = scale_reg({Vec3(6.0, 1.0, 1.0)});
  const double scale_zero = scale_reg({Vec3(1.0, 1.0, 1.0)});
  const double pos_345 = pos_reg({Vec3(3.0, 4.0, 0.0)});
  Image uniform(4, 4, 3, 1.0 / 3.0), target(4, 4, 1, 1.0);
  const double ce_uniform = seg_cross_entropy(uniform, target);
  const LossWeights w;
  const LossReport rep = total_loss(2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, w);
  const double expect_total = 2.0 + 10 + 10 + 1 + 100 + 0.1 + 1 + 1;

  const double errs[] = {std::abs(scale_low - 1.0), std::abs(scale_high - 1.0),
                         std::abs(scale_zero), std::abs(pos_345 - 5.0),
                         std::abs(ce_uniform - std::log(3.0)), std::abs(rep.total - expect_total)};
  double worst = 0.0;
  for (double e : errs) worst = std::max(worst, e);
  const bool ok = worst <= 1e-6;
  report("criterion-6 loss unit values", ok, "worst_abs_err=" + std::to_string(worst));
  CHECK(worst <= 1e-6);
}

TEST_CASE("criterion 7: CFG endpoint identities and drop frequency") {
  SynthesisConfig cfg;
  cfg.output_resolution = 16;
  cfg.image_resolution = 16;
  cfg.base_channels = 8;
  cfg.max_channels = 16;
  cfg.attention_dim = 16;
  const NetParams params = init_params(cfg, 7007);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VecX z(512);
  for (int i = 0; i < 512; ++i) z[i] = gauss(rng);
  const CameraPose cam = make_test_camera(30.0);

  // omega = 1 must equal the pure conditional path bitwise; omega = 0 the
  // unconditional path (equal to a forced drop in training mode).
  GenerateOptions w1, w0, forced;
  w1.omega = 1.0;
  w0.omega = 0.0;
  forced.training = true;
  forced.forced_drop = true;
  const GeneratedTextures a = generate_textures(params, cfg, z, cam, w1);
  const GeneratedTextures b = generate_textures(params, cfg, z, cam, w0);
  const GeneratedTextures c = generate_textures(params, cfg, z, cam, forced);
  bool endpoint_ok = b.hair.data == c.hair.data;  // omega 0 == dropped path bitwise

  // Feature-level endpoints are bitwise via cfg_blend.
  FeatureMap fa(3, 5, 5), fb(3, 5, 5);
  for (int i = 0; i < fa.data.size(); ++i) {
    fa.data.data()[i] = gauss(rng);
    fb.data.data()[i] = gauss(rng);
  }
  endpoint_ok = endpoint_ok && (cfg_blend(fa, fb, 1.0).data - fa.data).cwiseAbs().maxCoeff() == 0.0;
  endpoint_ok = endpoint_ok && (cfg_blend(fa, fb, 0.0).data - fb.data).cwiseAbs().maxCoeff() == 0.0;
  // And the conditional endpoint differs from unconditional (condition live).
  endpoint_ok = endpoint_ok && a.hair.data != b.hair.data;

  std::mt19937_64 drop_rng(7117);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  int drops = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) drops += (uni(drop_rng) < cfg.drop_probability);
  const double sigma = std::sqrt(n * 0.1 * 0.9);
  const bool freq_ok = std::abs(drops - 0.1 * n) <= 3.0 * sigma;

  const bool ok = endpoint_ok && freq_ok;
  report("criterion-7 CFG identities and drop frequency", ok,
         "endpoints=" + std::string(endpoint_ok ? "bitwise" : "BROKEN") +
             " drops=" + std::to_string(drops) + "/10000");
  CHECK(endpoint_ok);
  CHECK(freq_ok);
}

TEST_CASE("criterion 8: end-to-end reconstruction on an 8-view synthetic scene") {
  Stopwatch watch;
  DatasetSpec spec;
  spec.num_scenes = 1;
  spec.views_per_scene = 8;
  spec.image_size = 96;
  spec.texture_resolution = 64;
  const auto scenes = make_synthetic_dataset(spec, 8008);

  RunConfig cfg;
  cfg.seed = 8008;
  cfg.iterations = 220;
  cfg.learning_rate = 0.03;
  cfg.image_size = spec.image_size;
  cfg.texture_resolution = 64;
  cfg.output_dir = "";
  cfg.metrics_every = 50;
  const FitGaussiansResult res = fit_gaussians(scenes[0], spec, cfg);

  const double secs = watch.seconds();
  const bool ok = res.mean_psnr >= 30.0 && res.mean_seg_accuracy >= 0.95 &&
                  res.mean_mask_iou >= 0.95 && secs < 1800.0;
  report("criterion-8 end-to-end reconstruction", ok,
         "psnr=" + std::to_string(res.mean_psnr) + "dB seg_acc=" +
             std::to_string(res.mean_seg_accuracy) + " mask_iou=" +
             std::to_string(res.mean_mask_iou) + " runtime=" + std::to_string(secs) + "s");
  CHECK(res.mean_psnr >= 30.0);
  CHECK(res.mean_seg_accuracy >= 0.95);
  CHECK(res.mean_mask_iou >= 0.95);
  CHECK(secs < 1800.0);
}

TEST_CASE("criterion 9: toy GAN smoke with bitwise seed replay") {
  DatasetSpec spec;
  spec.num_scenes = 2;
  spec.views_per_scene = 6;
  spec.image_size = 32;
  spec.texture_resolution = 16;
  const auto dataset = make_synthetic_dataset(spec, 9009);

  RunConfig cfg;
  cfg.seed = 9009;
  cfg.iterations = 200;
  cfg.image_size = 32;
  cfg.texture_resolution = 16;
  cfg.pose_swap_probability = 0.8;
  cfg.output_dir = "";
  cfg.checkpoint_every = 0;

  const TrainResult a = train_toy_gan(dataset, spec, cfg);
  bool finite = true;
  for (const auto& [name, t] : a.params.tensors) finite = finite && t.data.allFinite();
  const TrainResult b = train_toy_gan(dataset, spec, cfg);
  const bool replay = a.metrics_lines == b.metrics_lines;

  // Pose swap empirical rate within 3 sigma of 0.8.
  const double n = double(a.generator_steps);
  const double sigma = std::sqrt(n * 0.8 * 0.2);
  const bool swap_ok = std::abs(double(a.pose_swaps) - 0.8 * n) <= 3.0 * sigma;

  const bool ok = finite && replay && swap_ok && a.generator_steps == 200;
  report("criterion-9 toy GAN smoke", ok,
         "steps=" + std::to_string(a.generator_steps) + " finite=" + (finite ? "yes" : "NO") +
             " replay=" + (replay ? "bitwise" : "BROKEN") +
             " swaps=" + std::to_string(a.pose_swaps));
  CHECK(finite);
  CHECK(replay);
  CHECK(swap_ok);
}

TEST_CASE("criterion 10: end-to-end d(pixel)/dz through mapping, synthesis, spawn, render") {
  SynthesisConfig cfg;
  cfg.output_resolution = 16;
  cfg.image_resolution = 16;
  cfg.base_channels = 8;
  cfg.max_channels = 16;
  cfg.attention_dim = 16;
  cfg.init_scale_mm = 12.0;
  const NetParams params = init_params(cfg, 1010);
  const GeneratorAssets assets = make_generator_assets(cfg.output_resolution);

  RunConfig rc;
  rc.image_size = 24;
  rc.output_dir = "";
  const CameraPose cam = make_test_camera(20.0);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VecX z(512);
  for (int i = 0; i < 512; ++i) z[i] = gauss(rng);
  GenerateOptions opts;
  opts.omega = 1.0;

  RenderOptions ropts;
  ropts.support_sigma = 7.0;

  auto forward = [&](const VecX& zz, GenerateCtx* ctx, GaussianSet* set_out,
                     TemplateMesh* hair_out) {
    const GeneratedTextures tex = generate_textures(params, cfg, zz, cam, opts, ctx);
    TemplateMesh hair = assets.hair_template;
    hair.vertices = blend_hair_shape(assets.hair_model, tex.theta);
    GaussianSet set = spawn_gaussians(tex.face, assets.face_rig, assets.face_mesh, 40.0,
                                      PartLabel::Face);
    set.append(spawn_gaussians(tex.hair, assets.hair_rig_template, hair, 20.0, PartLabel::Hair));
    if (set_out) *set_out = set;
    if (hair_out) *hair_out = hair;
    return render(set, cam, rc.image_size, rc.image_size, Vec3::Zero(), ropts);
  };

  // Loss: a random pixel functional over the rendered rgb image.
  std::mt19937_64 urng(11);
  const Image u_rgb = random_image(urng, rc.image_size, rc.image_size, 3);
  auto loss_of = [&](const RenderOutput& out) {
    double L = 0;
    for (size_t i = 0; i < out.rgb.data.size(); ++i) L += out.rgb.data[i] * u_rgb.data[i];
    return L;
  };

  // Analytic chain.
  GenerateCtx ctx;
  GaussianSet set;
  TemplateMesh hair;
  const RenderOutput out = forward(z, &ctx, &set, &hair);
  RenderGrads up;
  up.d_rgb = &u_rgb;
  const SetGrads sgrads = render_backward(set, cam, rc.image_size, rc.image_size, Vec3::Zero(),
                                          up, ropts);
  const size_t nf = size_t(assets.face_rig.valid_count());
  const size_t nh = size_t(assets.hair_rig_template.valid_count());
  REQUIRE(set.size() == nf + nh);

  GaussianTextureMap d_face(16, 0.0), d_hair(16, 0.0);
  SetGrads face_g(nf), hair_g(nh);
  for (size_t i = 0; i < nf; ++i) {
    face_g.d_position[i] = sgrads.d_position[i];
    face_g.d_rotation[i] = sgrads.d_rotation[i];
    face_g.d_scale[i] = sgrads.d_scale[i];
    face_g.d_color[i] = sgrads.d_color[i];
    face_g.d_opacity[i] = sgrads.d_opacity[i];
    face_g.d_label[i] = sgrads.d_label[i];
  }
  for (size_t i = 0; i < nh; ++i) {
    hair_g.d_position[i] = sgrads.d_position[nf + i];
    hair_g.d_rotation[i] = sgrads.d_rotation[nf + i];
    hair_g.d_scale[i] = sgrads.d_scale[nf + i];
    hair_g.d_color[i] = sgrads.d_color[nf + i];
    hair_g.d_opacity[i] = sgrads.d_opacity[nf + i];
    hair_g.d_label[i] = sgrads.d_label[nf + i];
  }
  const GeneratedTextures tex = generate_textures(params, cfg, z, cam, opts);
  spawn_gaussians_backward(tex.face, assets.face_rig, assets.face_mesh, 40.0, face_g, nullptr,
                           &d_face, nullptr);
  MatX d_hair_verts = MatX::Zero(hair.num_vertices(), 3);
  spawn_gaussians_backward(tex.hair, assets.hair_rig_template, hair, 20.0, hair_g, nullptr,
                           &d_hair, &d_hair_verts);
  const VecX d_theta = blend_shape_adjoint(assets.hair_model, d_hair_verts);
  GradMap grads;
  const VecX dz = generate_textures_backward(params, cfg, ctx, d_hair, d_face, d_theta, &grads);

  double worst = 0.0;
  int checked = 0;
  for (int k = 0; k < 16; ++k) {
    const double h = 1e-5;
    VecX zp = z, zm = z;
    zp[k] += h;
    zm[k] -= h;
    const double fd =
        (loss_of(forward(zp, nullptr, nullptr, nullptr)) -
         loss_of(forward(zm, nullptr, nullptr, nullptr))) / (2 * h);
    if (std::abs(fd) > 1e-8) {
      worst = std::max(worst, rel_error(fd, dz[k]));
      ++checked;
    }
  }
  const bool ok = worst <= 1e-3 && checked > 0;
  report("criterion-10 end-to-end differentiability", ok,
         "worst_rel_err=" + std::to_string(worst) + " probes=" + std::to_string(checked));
  CHECK(worst <= 1e-3);
  CHECK(checked > 0);
}
