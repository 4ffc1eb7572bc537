// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/container.hpp"
#include "gshead/drivers.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace gshead;

namespace {

struct CliState {
  RunConfig config;
  std::string config_file;
  std::string checkpoint;
  std::string net_config_file;
  std::string data_dir;
  std::string gaussians_file;
  uint64_t face_seed = 1;
  uint64_t hair_seed = 2;
  double yaw = 0.0;
  int sweep_views = 5;
  int pca_count = 16;
  int pca_coeffs = 32;
};

void add_common(CLI::App* cmd, CliState* st) {
  cmd->add_option("--config", st->config_file, "config file (key = value lines)");
  cmd->add_option("--out", st->config.output_dir, "output directory");
  cmd->add_option("--seed", st->config.seed, "run seed");
  cmd->add_option("--iterations", st->config.iterations, "iteration budget");
  cmd->add_option("--image-size", st->config.image_size, "render size in pixels");
  cmd->add_option("--texture-res", st->config.texture_resolution, "texture resolution");
  cmd->add_option("--scenes", st->config.num_scenes, "synthetic scene count");
  cmd->add_option("--views", st->config.views_per_scene, "views per scene");
  cmd->add_option("--omega", st->config.omega, "CFG blend factor");
  cmd->add_option("--lr", st->config.learning_rate, "learning rate");
  cmd->add_flag("--emit-float", st->config.emit_float, "write exact float dumps next to PNGs");
  cmd->add_flag("--init-gt", st->config.init_from_ground_truth,
                "initialize textures from the scene ground truth");
}

void prepare_out(const CliState& st) {
  fs::create_directories(st.config.output_dir);
  std::ofstream echo(st.config.output_dir + "/config.txt");
  echo << st.config.echo();
}

void write_metrics(const std::string& dir, const std::vector<std::string>& lines) {
  std::ofstream out(dir + "/metrics.log");
  for (const auto& l : lines) out << l << "\n";
}

DatasetSpec dataset_spec(const RunConfig& cfg) {
  DatasetSpec spec;
  spec.num_scenes = cfg.num_scenes;
  spec.views_per_scene = cfg.views_per_scene;
  spec.image_size = cfg.image_size;
  spec.texture_resolution = cfg.texture_resolution;
  spec.gamma_face = cfg.gamma_face;
  spec.gamma_hair = cfg.gamma_hair;
  spec.mesh_softness = cfg.mesh_softness;
  return spec;
}

void write_view_images(const std::string& prefix, const SyntheticView& view, bool emit_float) {
  write_png_rgb8(prefix + "_rgb.png", view.rgb);
  write_png_gray16(prefix + "_mask.png", view.mask);
  write_png_gray8(prefix + "_seg.png", view.seg_classes, 100.0);
  write_png_gray8(prefix + "_mesh_seg.png", view.mesh_seg, 100.0);
  if (emit_float) {
    write_image_file(prefix + "_rgb.bin", view.rgb);
    write_image_file(prefix + "_mask.bin", view.mask);
    write_image_file(prefix + "_seg.bin", view.seg);
    write_image_file(prefix + "_seg_classes.bin", view.seg_classes);
    write_image_file(prefix + "_mesh_seg.bin", view.mesh_seg);
  }
}

void write_render(const std::string& prefix, const RenderOutput& out, bool emit_float) {
  write_png_rgb8(prefix + "_rgb.png", out.rgb);
  write_png_gray16(prefix + "_mask.png", out.mask);
  Image seg_vis(out.seg.height, out.seg.width, 1);
  for (int y = 0; y < out.seg.height; ++y)
    for (int x = 0; x < out.seg.width; ++x)
      seg_vis.at(y, x, 0) = double(argmax_channel(out.seg, y, x));
  write_png_gray8(prefix + "_seg.png", seg_vis, 100.0);
  if (emit_float) {
    write_image_file(prefix + "_rgb.bin", out.rgb);
    write_image_file(prefix + "_mask.bin", out.mask);
    write_image_file(prefix + "_seg.bin", out.seg);
  }
}

void save_net_config(const std::string& path, const SynthesisConfig& cfg) {
  std::ofstream out(path);
  out << "base_resolution = " << cfg.base_resolution << "\n"
      << "output_resolution = " << cfg.output_resolution << "\n"
      << "base_channels = " << cfg.base_channels << "\n"
      << "max_channels = " << cfg.max_channels << "\n"
      << "attention_tokens = " << cfg.attention_tokens << "\n"
      << "attention_heads = " << cfg.attention_heads << "\n"
      << "attention_dim = " << cfg.attention_dim << "\n"
      << "drop_probability = " << cfg.drop_probability << "\n"
      << "init_scale_mm = " << cfg.init_scale_mm << "\n"
      << "image_resolution = " << cfg.image_resolution << "\n"
      << "disc_base_channels = " << cfg.disc_base_channels << "\n"
      << "disc_max_channels = " << cfg.disc_max_channels << "\n";
}

SynthesisConfig load_net_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open net config: " + path);
  SynthesisConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, line.find(' '));
    const std::string value = line.substr(eq + 1);
    if (key == "base_resolution") cfg.base_resolution = std::stoi(value);
    else if (key == "output_resolution") cfg.output_resolution = std::stoi(value);
    else if (key == "base_channels") cfg.base_channels = std::stoi(value);
    else if (key == "max_channels") cfg.max_channels = std::stoi(value);
    else if (key == "attention_tokens") cfg.attention_tokens = std::stoi(value);
    else if (key == "attention_heads") cfg.attention_heads = std::stoi(value);
    else if (key == "attention_dim") cfg.attention_dim = std::stoi(value);
    else if (key == "drop_probability") cfg.drop_probability = std::stod(value);
    else if (key == "init_scale_mm") cfg.init_scale_mm = std::stod(value);
    else if (key == "image_resolution") cfg.image_resolution = std::stoi(value);
    else if (key == "disc_base_channels") cfg.disc_base_channels = std::stoi(value);
    else if (key == "disc_max_channels") cfg.disc_max_channels = std::stoi(value);
  }
  cfg.validate();
  return cfg;
}

VecX z_from_seed(uint64_t seed, int dim = 512) {
  std::mt19937_64 rng(fnv1a("latent", seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  VecX z(dim);
  for (int i = 0; i < dim; ++i) z[i] = gauss(rng);
  return z;
}

int run_gen_data(CliState& st) {
  prepare_out(st);
  const DatasetSpec spec = dataset_spec(st.config);
  const auto scenes = make_synthetic_dataset(spec, st.config.seed);
  for (size_t si = 0; si < scenes.size(); ++si) {
    const auto& scene = scenes[si];
    const std::string dir = st.config.output_dir + "/scene_" + std::to_string(si);
    fs::create_directories(dir);
    save_obj(scene.face_mesh, dir + "/face.obj");
    save_obj(scene.hair_mesh, dir + "/hair.obj");
    save_obj(scene.hair_template, dir + "/hair_template.obj");
    write_texture_file(dir + "/face_texture.bin", scene.face_texture);
    write_texture_file(dir + "/hair_texture.bin", scene.hair_texture);
    for (size_t vi = 0; vi < scene.views.size(); ++vi) {
      const auto& view = scene.views[vi];
      const std::string prefix = dir + "/view_" + std::to_string(vi);
      const auto flat = view.camera.flatten();
      write_tensor_file(prefix + "_camera.bin", {25}, flat.data());
      write_view_images(prefix, view, true);
    }
  }
  std::cout << "wrote " << scenes.size() << " scenes to " << st.config.output_dir << "\n";
  return 0;
}

int run_fit_hair(CliState& st) {
  prepare_out(st);
  // Synthetic target: a known hairstyle deformation of the template.
  std::mt19937_64 rng(fnv1a("fit-hair", st.config.seed));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  // Deform on the origin-centered sphere frame first, then recenter both
  // meshes so the identity field is a sensible starting point.
  TemplateMesh tmpl = make_hair_template(24, 16, 107.0);
  HairStyleParams style{0.9 + 0.5 * uni(rng), 0.05 + 0.25 * uni(rng), 0.2 * uni(rng)};
  TemplateMesh target_mesh = tmpl;
  target_mesh.vertices = deform_hair_template(tmpl, style);
  tmpl.vertices.rowwise() -= Eigen::RowVector3d(tmpl.vertices.colwise().mean());
  target_mesh.vertices.rowwise() -= Eigen::RowVector3d(target_mesh.vertices.colwise().mean());

  HairFitConfig fit_cfg;
  fit_cfg.max_iterations = st.config.iterations;
  fit_cfg.image_width = st.config.image_size;
  fit_cfg.image_height = st.config.image_size;
  fit_cfg.learning_rate = st.config.learning_rate;

  LabeledMeshScene target_scene;
  target_scene.parts = {target_mesh};
  std::vector<FitTarget> targets;
  const int n_views = std::max(2, st.config.views_per_scene);
  for (int k = 0; k < n_views; ++k) {
    FitTarget t;
    t.camera = make_ring_camera(360.0 * k / n_views, 10.0, 340.0, 1.1);
    t.labels = render_mesh_labels(target_scene, t.camera, fit_cfg.image_width,
                                  fit_cfg.image_height, fit_cfg.softness_end);
    targets.push_back(std::move(t));
  }

  const HairFitResult res = fit_hair_mesh(tmpl, targets, fit_cfg);
  save_obj(res.mesh, st.config.output_dir + "/fitted.obj");
  save_obj(target_mesh, st.config.output_dir + "/target.obj");

  // Silhouette IoU against the targets.
  LabeledMeshScene fitted_scene;
  fitted_scene.parts = {res.mesh};
  double iou = 0.0;
  for (const auto& t : targets) {
    const Image pred = render_mesh_labels(fitted_scene, t.camera, fit_cfg.image_width,
                                          fit_cfg.image_height, fit_cfg.softness_end);
    size_t inter = 0, uni_count = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
      const bool p = pred.data[i] >= 1.0;
      const bool g = t.labels.data[i] >= 1.0;
      inter += (p && g);
      uni_count += (p || g);
    }
    iou += uni_count == 0 ? 1.0 : double(inter) / double(uni_count);
  }
  iou /= double(targets.size());

  std::vector<std::string> lines;
  for (size_t i = 0; i < res.loss_trace.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "step=%zu loss=%.17g", i, res.loss_trace[i]);
    lines.push_back(buf);
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "final loss=%.17g iou=%.17g", res.final_loss, iou);
  lines.push_back(buf);
  write_metrics(st.config.output_dir, lines);
  std::cout << "fit-hair iou=" << iou << "\n";
  return 0;
}

int run_build_pca(CliState& st) {
  prepare_out(st);
  std::mt19937_64 rng(fnv1a("build-pca", st.config.seed));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const TemplateMesh tmpl = make_hair_template(24, 16, 107.0);
  std::vector<TemplateMesh> meshes;
  for (int i = 0; i < st.pca_count; ++i) {
    TemplateMesh m = tmpl;
    HairStyleParams p{0.8 + 0.7 * uni(rng), -0.1 + 0.35 * uni(rng), 0.25 * uni(rng)};
    m.vertices = deform_hair_template(tmpl, p);
    meshes.push_back(std::move(m));
    save_obj(meshes.back(), st.config.output_dir + "/sample_" + std::to_string(i) + ".obj");
  }
  const HairBlendModel model = build_blend_model(meshes, st.pca_coeffs);
  write_blend_model_file(st.config.output_dir + "/hair_model.bin", model, tmpl.num_faces());
  TemplateMesh mean = tmpl;
  mean.vertices = blend_hair_shape(model, VecX::Zero(model.num_coeffs));
  save_obj(mean, st.config.output_dir + "/mean.obj");
  std::cout << "built blend model: coeffs=" << model.num_coeffs
            << " effective_rank=" << model.effective_rank << " sigma=" << model.sigma << "\n";
  return 0;
}

int run_fit_gaussians(CliState& st) {
  prepare_out(st);
  DatasetSpec spec = dataset_spec(st.config);
  spec.num_scenes = 1;
  const auto scenes = make_synthetic_dataset(spec, st.config.seed);
  const auto res = fit_gaussians(scenes[0], spec, st.config);
  write_metrics(st.config.output_dir, res.metrics_lines);
  write_texture_file(st.config.output_dir + "/face_texture.bin", res.face_texture);
  write_texture_file(st.config.output_dir + "/hair_texture.bin", res.hair_texture);

  // Final renders for inspection.
  const UvRig face_rig = build_uv_rig(scenes[0].face_mesh, st.config.texture_resolution);
  const UvRig hair_rig = build_uv_rig(scenes[0].hair_mesh, st.config.texture_resolution);
  GaussianSet set = spawn_gaussians(res.face_texture, face_rig, scenes[0].face_mesh,
                                    st.config.gamma_face, PartLabel::Face);
  set.append(spawn_gaussians(res.hair_texture, hair_rig, scenes[0].hair_mesh,
                             st.config.gamma_hair, PartLabel::Hair));
  write_gaussian_set_file(st.config.output_dir + "/gaussians.bin", set);
  RenderOptions ropts;
  ropts.support_sigma = st.config.fit_support_sigma;
  for (size_t vi = 0; vi < scenes[0].views.size(); ++vi) {
    const auto& view = scenes[0].views[vi];
    const RenderOutput out = render(set, view.camera, st.config.image_size, st.config.image_size,
                                    Vec3::Zero(), ropts);
    write_render(st.config.output_dir + "/fit_view_" + std::to_string(vi), out,
                 st.config.emit_float);
  }
  std::cout << "fit-gaussians psnr=" << res.mean_psnr << " mask_iou=" << res.mean_mask_iou
            << " seg_accuracy=" << res.mean_seg_accuracy << "\n";
  return 0;
}

int run_train_toy(CliState& st) {
  prepare_out(st);
  const DatasetSpec spec = dataset_spec(st.config);
  const auto dataset = make_synthetic_dataset(spec, st.config.seed);
  const TrainResult res = train_toy_gan(dataset, spec, st.config);
  write_metrics(st.config.output_dir, res.metrics_lines);
  write_checkpoint(st.config.output_dir + "/ckpt_final.bin", res.params);
  save_net_config(st.config.output_dir + "/net_config.txt", res.net_config);
  std::cout << "train-toy steps=" << res.generator_steps << " drops=" << res.condition_drops
            << " swaps=" << res.pose_swaps << "\n";
  return 0;
}

NetParams load_trained(CliState& st, SynthesisConfig* cfg) {
  if (st.checkpoint.empty()) throw ConfigError("missing --checkpoint");
  if (!fs::exists(st.checkpoint)) throw ConfigError("checkpoint not found: " + st.checkpoint);
  std::string net_cfg_path = st.net_config_file;
  if (net_cfg_path.empty())
    net_cfg_path = (fs::path(st.checkpoint).parent_path() / "net_config.txt").string();
  *cfg = load_net_config(net_cfg_path);
  return read_checkpoint(st.checkpoint);
}

int run_sample(CliState& st) {
  prepare_out(st);
  SynthesisConfig cfg;
  const NetParams params = load_trained(st, &cfg);
  GeneratorAssets assets = make_generator_assets(cfg.output_resolution);
  const VecX z = z_from_seed(st.config.seed);
  GenerateOptions opts;
  opts.omega = st.config.omega;
  const CameraPose map_cam = make_ring_camera(0.0, 10.0, 340.0, 1.1);
  const GeneratedTextures tex = generate_textures(params, cfg, z, map_cam, opts);
  write_texture_file(st.config.output_dir + "/hair_texture.bin", tex.hair);
  write_texture_file(st.config.output_dir + "/face_texture.bin", tex.face);
  for (int k = 0; k < st.sweep_views; ++k) {
    const double yaw = st.sweep_views == 1 ? 0.0 : 180.0 * k / (st.sweep_views - 1);
    const CameraPose cam = make_ring_camera(yaw, 10.0, 340.0, 1.1);
    const RenderOutput out = render_generated(tex, assets, cam, st.config.image_size, st.config);
    write_render(st.config.output_dir + "/sample_yaw" + std::to_string(int(yaw)), out,
                 st.config.emit_float);
  }
  return 0;
}

int run_edit(CliState& st, const std::vector<double>& omegas) {
  prepare_out(st);
  SynthesisConfig cfg;
  const NetParams params = load_trained(st, &cfg);
  GeneratorAssets assets = make_generator_assets(cfg.output_resolution);
  const CameraPose map_cam = make_ring_camera(0.0, 10.0, 340.0, 1.1);
  for (double omega : omegas) {
    const EditOutputs out =
        edit_hairstyle(params, cfg, assets, z_from_seed(st.face_seed), z_from_seed(st.hair_seed),
                       map_cam, omega, st.config, st.sweep_views);
    char tag[48];
    std::snprintf(tag, sizeof(tag), "omega%.2f", omega);
    write_texture_file(st.config.output_dir + "/" + tag + "_hair_texture.bin", out.textures.hair);
    write_texture_file(st.config.output_dir + "/" + tag + "_face_texture.bin", out.textures.face);
    for (size_t k = 0; k < out.views.size(); ++k) {
      write_render(st.config.output_dir + "/" + tag + "_yaw" + std::to_string(int(out.yaws[k])),
                   out.views[k], st.config.emit_float);
    }
  }
  return 0;
}

int run_render(CliState& st) {
  prepare_out(st);
  if (st.gaussians_file.empty()) throw ConfigError("missing --gaussians");
  const GaussianSet set = read_gaussian_set_file(st.gaussians_file);
  const CameraPose cam = make_ring_camera(st.yaw, 10.0, 340.0, 1.1);
  const RenderOutput out = render(set, cam, st.config.image_size, st.config.image_size,
                                  Vec3::Zero());
  write_render(st.config.output_dir + "/render", out, st.config.emit_float);
  return 0;
}

int run_check_grads(CliState& st) {
  // Aggregates the module finite-difference oracles into one pass/fail run.
  std::mt19937_64 rng(fnv1a("check-grads", st.config.seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  bool all_ok = true;
  auto report = [&](const std::string& name, double worst, double tol) {
    const bool ok = worst <= tol;
    all_ok = all_ok && ok;
    std::cout << (ok ? "PASS" : "FAIL") << " " << name << " worst_rel_err=" << worst
              << " tol=" << tol << "\n";
  };
  auto rel = [](double a, double b) {
    const double d = std::max(std::abs(a), std::abs(b));
    return d == 0.0 ? 0.0 : std::abs(a - b) / d;
  };

  // Renderer gradients on a small random scene.
  {
    GaussianSet set;
    for (int i = 0; i < 12; ++i) {
      GaussianPrimitive g;
      g.position = Vec3(gauss(rng), gauss(rng), gauss(rng)) * 40.0;
      Vec4 q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
      g.rotation = q / q.norm();
      for (int k = 0; k < 3; ++k) g.scale[k] = 2.0 + 4.0 * uni(rng);
      for (int k = 0; k < 3; ++k) g.color[k] = uni(rng);
      g.opacity = 0.1 + 0.7 * uni(rng);
      g.label = label_one_hot(PartLabel::Hair);
      set.gaussians.push_back(g);
      set.anchors.push_back(g.position);
      set.deltas.push_back(Vec3::Zero());
    }
    const CameraPose cam = make_ring_camera(20.0, 10.0, 340.0, 1.1);
    const int S = 24;
    Image u_rgb(S, S, 3), u_mask(S, S, 1), u_seg(S, S, 3);
    for (auto* img : {&u_rgb, &u_mask, &u_seg})
      for (auto& v : img->data) v = gauss(rng);
    RenderGrads up;
    up.d_rgb = &u_rgb;
    up.d_mask = &u_mask;
    up.d_seg = &u_seg;
    const SetGrads grads = render_backward(set, cam, S, S, Vec3::Zero(), up);
    auto loss = [&]() {
      const RenderOutput out = render(set, cam, S, S, Vec3::Zero());
      double L = 0;
      for (size_t i = 0; i < out.rgb.data.size(); ++i) L += out.rgb.data[i] * u_rgb.data[i];
      for (size_t i = 0; i < out.mask.data.size(); ++i) L += out.mask.data[i] * u_mask.data[i];
      for (size_t i = 0; i < out.seg.data.size(); ++i) L += out.seg.data[i] * u_seg.data[i];
      return L;
    };
    double worst = 0.0;
    for (size_t i = 0; i < set.size(); i += 3) {
      for (int k = 0; k < 3; ++k) {
        const double h = 1e-3;
        double* p = &set.gaussians[i].position[k];
        const double orig = *p;
        *p = orig + h;
        const double lp = loss();
        *p = orig - h;
        const double lm = loss();
        *p = orig;
        const double fd = (lp - lm) / (2 * h);
        if (std::abs(fd) > 1e-8) worst = std::max(worst, rel(fd, grads.d_position[i][k]));
      }
    }
    report("splat-renderer", worst, 1e-3);
  }

  // Generator chain d(texture)/dz.
  {
    SynthesisConfig cfg;
    cfg.output_resolution = 8;
    cfg.image_resolution = 8;
    cfg.base_channels = 8;
    cfg.max_channels = 16;
    cfg.attention_dim = 16;
    const NetParams params = init_params(cfg, st.config.seed);
    VecX z(512);
    for (int i = 0; i < 512; ++i) z[i] = gauss(rng);
    const CameraPose cam = make_ring_camera(0.0, 10.0, 340.0, 1.1);
    GenerateOptions opts;
    opts.omega = 0.5;
    GaussianTextureMap u_hair(8), u_face(8);
    for (auto& v : u_hair.data) v = gauss(rng);
    for (auto& v : u_face.data) v = gauss(rng);
    GenerateCtx ctx;
    generate_textures(params, cfg, z, cam, opts, &ctx);
    GradMap grads;
    const VecX dz = generate_textures_backward(params, cfg, ctx, u_hair, u_face, VecX(), &grads);
    auto loss = [&](const VecX& zz) {
      const GeneratedTextures g = generate_textures(params, cfg, zz, cam, opts);
      double L = 0;
      for (size_t i = 0; i < g.hair.data.size(); ++i) L += g.hair.data[i] * u_hair.data[i];
      for (size_t i = 0; i < g.face.data.size(); ++i) L += g.face.data[i] * u_face.data[i];
      return L;
    };
    double worst = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double h = 1e-5;
      VecX zp = z, zm = z;
      zp[k] += h;
      zm[k] -= h;
      const double fd = (loss(zp) - loss(zm)) / (2 * h);
      if (std::abs(fd) > 1e-10) worst = std::max(worst, rel(fd, dz[k]));
    }
    report("generator-net", worst, 1e-3);
  }

  // Mesh silhouette gradients.
  {
    TemplateMesh hair = make_hair_template(14, 8, 100.0);
    hair.vertices = deform_hair_template(hair, {1.1, 0.15, 0.0});
    LabeledMeshScene scene;
    scene.parts = {hair};
    const CameraPose cam = make_ring_camera(20.0, 8.0, 340.0, 1.1);
    const int S = 64;
    Image upstream(S, S, 1);
    for (auto& v : upstream.data) v = gauss(rng);
    const auto d_verts = render_mesh_labels_backward(scene, cam, S, S, 1.5, upstream);
    auto loss = [&](const LabeledMeshScene& sc) {
      const Image img = render_mesh_labels(sc, cam, S, S, 1.5);
      double L = 0;
      for (size_t i = 0; i < img.data.size(); ++i) L += img.data[i] * upstream.data[i];
      return L;
    };
    double worst = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
      const double h = 2e-3;
      LabeledMeshScene sp = scene, sm = scene;
      for (int v = 0; v < sp.parts[0].num_vertices(); ++v) {
        sp.parts[0].vertices(v, axis) += h;
        sm.parts[0].vertices(v, axis) -= h;
      }
      const double fd = (loss(sp) - loss(sm)) / (2 * h);
      const double analytic = d_verts[0].col(axis).sum();
      if (std::abs(fd) > 1e-8) worst = std::max(worst, rel(fd, analytic));
    }
    report("mesh-silhouette", worst, 1e-2);
  }

  if (!all_ok) throw NumericError("gradient checks failed");
  std::cout << "all gradient checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"template-rigged gaussian splatting head pipeline"};
  app.require_subcommand(1);
  CliState st;
  std::function<int(CliState&)> action;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-view dataset");
  add_common(gen, &st);
  gen->callback([&] { action = run_gen_data; });

  auto* fh = app.add_subcommand("fit-hair", "fit the hair template to synthetic silhouettes");
  add_common(fh, &st);
  fh->callback([&] { action = run_fit_hair; });

  auto* pca = app.add_subcommand("build-pca", "build the hair blend-shape model");
  add_common(pca, &st);
  pca->add_option("--count", st.pca_count, "number of family samples");
  pca->add_option("--coeffs", st.pca_coeffs, "number of blend coefficients");
  pca->callback([&] { action = run_build_pca; });

  auto* fg = app.add_subcommand("fit-gaussians", "reconstruct texture maps on a synthetic scene");
  add_common(fg, &st);
  fg->callback([&] { action = run_fit_gaussians; });

  auto* tt = app.add_subcommand("train-toy", "toy-scale adversarial training");
  add_common(tt, &st);
  tt->callback([&] { action = run_train_toy; });

  auto* sa = app.add_subcommand("sample", "sample and render from a checkpoint");
  add_common(sa, &st);
  sa->add_option("--checkpoint", st.checkpoint, "checkpoint file");
  sa->add_option("--net-config", st.net_config_file, "net config file");
  sa->add_option("--sweep-views", st.sweep_views, "number of yaw sweep views");
  sa->callback([&] { action = run_sample; });

  auto* ed = app.add_subcommand("edit", "hairstyle transfer by latent swap");
  add_common(ed, &st);
  ed->add_option("--checkpoint", st.checkpoint, "checkpoint file");
  ed->add_option("--net-config", st.net_config_file, "net config file");
  ed->add_option("--face-seed", st.face_seed, "latent seed for the face source");
  ed->add_option("--hair-seed", st.hair_seed, "latent seed for the hair source");
  ed->add_option("--sweep-views", st.sweep_views, "number of yaw sweep views");
  ed->callback([&] { action = [](CliState& s) { return run_edit(s, {s.config.omega}); }; });

  auto* cs = app.add_subcommand("cfg-sweep", "edit at omega = 0, 0.5, 1");
  add_common(cs, &st);
  cs->add_option("--checkpoint", st.checkpoint, "checkpoint file");
  cs->add_option("--net-config", st.net_config_file, "net config file");
  cs->add_option("--face-seed", st.face_seed, "latent seed for the face source");
  cs->add_option("--hair-seed", st.hair_seed, "latent seed for the hair source");
  cs->add_option("--sweep-views", st.sweep_views, "number of yaw sweep views");
  cs->callback([&] { action = [](CliState& s) { return run_edit(s, {0.0, 0.5, 1.0}); }; });

  auto* re = app.add_subcommand("render", "render a stored gaussian set");
  add_common(re, &st);
  re->add_option("--gaussians", st.gaussians_file, "gaussian set container file");
  re->add_option("--yaw", st.yaw, "camera yaw in degrees");
  re->callback([&] { action = run_render; });

  auto* cg = app.add_subcommand("check-grads", "run the finite-difference gradient suite");
  add_common(cg, &st);
  cg->callback([&] { action = run_check_grads; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!st.config_file.empty()) st.config.apply_file(st.config_file);
    // Flags win over the config file: re-parse to reapply command line values.
    app.clear();
    app.parse(argc, argv);
    return action(st);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const CLI::ParseError&) {
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
