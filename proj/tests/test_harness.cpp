// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/container.hpp"
#include "gshead/drivers.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace gshead;
using namespace gshead::testutil;
namespace fs = std::filesystem;

namespace {

DatasetSpec small_spec() {
  DatasetSpec spec;
  spec.num_scenes = 1;
  spec.views_per_scene = 8;
  spec.image_size = 40;
  spec.texture_resolution = 16;
  spec.sphere_segments = 16;
  spec.sphere_rings = 10;
  return spec;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gshead_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("synthetic dataset is deterministic in the seed") {
  const DatasetSpec spec = small_spec();
  const auto a = make_synthetic_dataset(spec, 42);
  const auto b = make_synthetic_dataset(spec, 42);
  REQUIRE(a.size() == 1);
  CHECK(a[0].face_texture.data == b[0].face_texture.data);
  CHECK(a[0].hair_mesh.vertices == b[0].hair_mesh.vertices);
  REQUIRE(a[0].views.size() == 8);
  for (size_t v = 0; v < 8; ++v) {
    CHECK(a[0].views[v].rgb.data == b[0].views[v].rgb.data);
    CHECK(a[0].views[v].mask.data == b[0].views[v].mask.data);
    CHECK(a[0].views[v].seg.data == b[0].views[v].seg.data);
  }
  const auto c = make_synthetic_dataset(spec, 43);
  CHECK(a[0].face_texture.data != c[0].face_texture.data);
}

TEST_CASE("synthetic views cover front and back yaws on the stated ring") {
  const DatasetSpec spec = small_spec();
  const auto scenes = make_synthetic_dataset(spec, 7);
  int front = 0, back = 0;
  for (size_t k = 0; k < scenes[0].views.size(); ++k) {
    CHECK(scenes[0].views[k].yaw_deg == 45.0 * k);
    const double yaw = scenes[0].views[k].yaw_deg;
    const double wrapped = yaw > 180.0 ? 360.0 - yaw : yaw;
    (wrapped < 90.0 ? front : back) += 1;
  }
  CHECK(front > 0);
  CHECK(back > 0);
}

TEST_CASE("synthetic mask equals the non-background segmentation exactly") {
  const auto scenes = make_synthetic_dataset(small_spec(), 11);
  for (const auto& view : scenes[0].views) {
    for (int y = 0; y < view.mask.height; ++y)
      for (int x = 0; x < view.mask.width; ++x)
        CHECK(view.mask.at(y, x, 0) == 1.0 - view.seg.at(y, x, 0));
  }
}

TEST_CASE("stored scenes re-render bitwise after a float32 round trip") {
  const DatasetSpec spec = small_spec();
  const auto scenes = make_synthetic_dataset(spec, 13);
  const auto& scene = scenes[0];

  TempDir dir;
  write_texture_file(dir.file("face.bin"), scene.face_texture);
  write_texture_file(dir.file("hair.bin"), scene.hair_texture);
  save_obj(scene.face_mesh, dir.file("face.obj"));
  save_obj(scene.hair_mesh, dir.file("hair.obj"));

  SyntheticScene loaded = scene;
  loaded.face_texture = read_texture_file(dir.file("face.bin"));
  loaded.hair_texture = read_texture_file(dir.file("hair.bin"));
  loaded.face_mesh = load_obj(dir.file("face.obj"));
  loaded.hair_mesh = load_obj(dir.file("hair.obj"));
  CHECK(loaded.face_texture.data == scene.face_texture.data);
  CHECK(loaded.face_mesh.vertices == scene.face_mesh.vertices);

  const UvRig face_rig = build_uv_rig(loaded.face_mesh, spec.texture_resolution);
  const UvRig hair_rig = build_uv_rig(loaded.hair_mesh, spec.texture_resolution);
  const SyntheticView again = render_scene_view(loaded, face_rig, hair_rig, spec,
                                                scene.views[2].yaw_deg);
  // Stored images are float32; the re-render must reproduce them bit-exactly.
  for (size_t i = 0; i < again.rgb.data.size(); ++i)
    CHECK(float(again.rgb.data[i]) == float(scene.views[2].rgb.data[i]));
  for (size_t i = 0; i < again.mask.data.size(); ++i)
    CHECK(float(again.mask.data[i]) == float(scene.views[2].mask.data[i]));
}

TEST_CASE("container round trips: tensor, image, texture, gaussian set, checkpoint, model") {
  TempDir dir;
  std::mt19937_64 rng(3);

  Image img = random_image(rng, 6, 5, 3);
  for (auto& v : img.data) v = double(float(v));
  write_image_file(dir.file("img.bin"), img);
  const Image img2 = read_image_file(dir.file("img.bin"));
  CHECK(img2.data == img.data);

  GaussianTextureMap tex(8);
  for (auto& v : tex.data) v = double(float(std::normal_distribution<double>(0, 1)(rng)));
  write_texture_file(dir.file("tex.bin"), tex);
  CHECK(read_texture_file(dir.file("tex.bin")).data == tex.data);

  GaussianSet set = random_scene(rng, 17);
  write_gaussian_set_file(dir.file("set.bin"), set);
  const GaussianSet set2 = read_gaussian_set_file(dir.file("set.bin"));
  REQUIRE(set2.size() == set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    CHECK((set2.gaussians[i].position - set.gaussians[i].position).cwiseAbs().maxCoeff() < 1e-4);
    set2.gaussians[i].validate();
  }

  SynthesisConfig cfg;
  cfg.output_resolution = 8;
  cfg.image_resolution = 8;
  cfg.base_channels = 8;
  cfg.max_channels = 8;
  cfg.attention_dim = 8;
  const NetParams params = init_params(cfg, 5);
  write_checkpoint(dir.file("ckpt.bin"), params);
  const NetParams loaded = read_checkpoint(dir.file("ckpt.bin"));
  REQUIRE(loaded.tensors.size() == params.tensors.size());
  for (const auto& [name, t] : params.tensors) {
    const auto& lt = loaded.at(name);
    CHECK(lt.shape == t.shape);
    for (Eigen::Index i = 0; i < t.data.size(); ++i)
      CHECK(float(lt.data[i]) == float(t.data[i]));
  }

  // Blend model round trip through float32.
  const TemplateMesh tmpl = make_hair_template(8, 5, 100.0);
  std::vector<TemplateMesh> family;
  for (int i = 0; i < 5; ++i) {
    TemplateMesh m = tmpl;
    m.vertices = deform_hair_template(tmpl, {0.9 + 0.1 * i, 0.05 * i, 0.0});
    family.push_back(std::move(m));
  }
  const HairBlendModel model = build_blend_model(family, 4);
  write_blend_model_file(dir.file("model.bin"), model, tmpl.num_faces());
  const HairBlendModel model2 = read_blend_model_file(dir.file("model.bin"));
  CHECK(model2.num_coeffs == model.num_coeffs);
  CHECK(std::abs(model2.sigma - model.sigma) < 1e-6 * model.sigma);
  CHECK(model2.effective_rank == model.effective_rank);
  CHECK((model2.components - model.components).cwiseAbs().maxCoeff() < 1e-6);

  CHECK_THROWS_AS(read_texture_file(dir.file("img.bin")), DataError);
  CHECK_THROWS_AS(read_tensor_file(dir.file("missing.bin"), nullptr, nullptr), DataError);
}

TEST_CASE("obj io round trips meshes with labels and uvs") {
  TempDir dir;
  TemplateMesh mesh = make_face_sphere(10, 6, 90.0);
  save_obj(mesh, dir.file("m.obj"));
  const TemplateMesh loaded = load_obj(dir.file("m.obj"));
  CHECK(loaded.num_vertices() == mesh.num_vertices());
  CHECK(loaded.faces == mesh.faces);
  CHECK(loaded.labels == mesh.labels);
  double max_uv = 0.0;
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k)
      max_uv = std::max(max_uv, (loaded.uvs[f][k] - mesh.uvs[f][k]).norm());
  CHECK(max_uv == 0.0);  // synthetic meshes are float32-exact
  loaded.validate();
}

TEST_CASE("run config file parsing and echo") {
  TempDir dir;
  {
    std::ofstream out(dir.file("run.cfg"));
    out << "# comment line\n";
    out << "seed = 9\n";
    out << "iterations = 77\n";
    out << "lambda_rgb = 5.5\n";
    out << "pose_swap_probability = 0.25\n";
  }
  RunConfig cfg;
  cfg.apply_file(dir.file("run.cfg"));
  CHECK(cfg.seed == 9);
  CHECK(cfg.iterations == 77);
  CHECK(cfg.weights.rgb == 5.5);
  CHECK(cfg.pose_swap_probability == 0.25);
  cfg.validate();

  RunConfig bad;
  CHECK_THROWS_AS(bad.apply_pair("nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(bad.apply_pair("iterations", "abc"), ConfigError);
  bad.pose_swap_probability = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("fit_gaussians from ground-truth textures reconstructs immediately") {
  DatasetSpec spec = small_spec();
  const auto scenes = make_synthetic_dataset(spec, 21);
  RunConfig cfg;
  cfg.iterations = 1;
  cfg.texture_resolution = spec.texture_resolution;
  cfg.image_size = spec.image_size;
  cfg.init_from_ground_truth = true;
  cfg.output_dir = "";
  const auto res = fit_gaussians(scenes[0], spec, cfg);
  CHECK(res.mean_psnr >= 40.0);
  CHECK(res.mean_mask_iou >= 0.99);
}

TEST_CASE("fit_gaussians loss trace best-so-far is monotone and the pos weight dominates") {
  DatasetSpec spec = small_spec();
  spec.views_per_scene = 3;
  const auto scenes = make_synthetic_dataset(spec, 23);
  RunConfig cfg;
  cfg.iterations = 40;
  cfg.learning_rate = 0.03;
  cfg.texture_resolution = spec.texture_resolution;
  cfg.image_size = spec.image_size;
  cfg.output_dir = "";
  const auto res = fit_gaussians(scenes[0], spec, cfg);
  double best = res.loss_trace[0];
  for (double v : res.loss_trace) {
    CHECK(std::isfinite(v));
    best = std::min(best, v);
  }
  CHECK(best <= res.loss_trace[0]);

  // lambda_pos -> huge collapses the deltas toward zero.
  RunConfig heavy = cfg;
  heavy.iterations = 120;
  heavy.weights.pos = 1e6;
  const auto res2 = fit_gaussians(scenes[0], spec, heavy);
  const UvRig face_rig = build_uv_rig(scenes[0].face_mesh, spec.texture_resolution);
  const UvRig hair_rig = build_uv_rig(scenes[0].hair_mesh, spec.texture_resolution);
  const GaussianSet set = spawn_gaussians(res2.face_texture, face_rig, scenes[0].face_mesh,
                                          cfg.gamma_face, PartLabel::Face);
  double max_delta = 0.0;
  for (const auto& d : set.deltas) max_delta = std::max(max_delta, d.norm());
  const GaussianSet base = spawn_gaussians(res2.hair_texture, hair_rig, scenes[0].hair_mesh,
                                           cfg.gamma_hair, PartLabel::Hair);
  for (const auto& d : base.deltas) max_delta = std::max(max_delta, d.norm());
  CHECK(max_delta < 0.5);
}

TEST_CASE("train_toy_gan smoke is finite and bitwise reproducible") {
  DatasetSpec spec = small_spec();
  spec.image_size = 16;
  spec.texture_resolution = 8;
  spec.views_per_scene = 4;
  const auto dataset = make_synthetic_dataset(spec, 31);
  RunConfig cfg;
  cfg.iterations = 8;
  cfg.image_size = 16;
  cfg.texture_resolution = 8;
  cfg.output_dir = "";
  cfg.checkpoint_every = 0;
  const TrainResult a = train_toy_gan(dataset, spec, cfg);
  const TrainResult b = train_toy_gan(dataset, spec, cfg);
  CHECK(a.metrics_lines == b.metrics_lines);
  CHECK(a.generator_steps == 8);
  for (const auto& [name, t] : a.params.tensors) CHECK(t.data.allFinite());

  CHECK_THROWS_AS(train_toy_gan({}, spec, cfg), ConfigError);
}

TEST_CASE("edit_hairstyle branch isolation: face textures depend only on the face source") {
  SynthesisConfig cfg;
  cfg.output_resolution = 8;
  cfg.image_resolution = 16;
  cfg.base_channels = 8;
  cfg.max_channels = 16;
  cfg.attention_dim = 16;
  const NetParams params = init_params(cfg, 77);
  const GeneratorAssets assets = make_generator_assets(cfg.output_resolution);
  RunConfig rc;
  rc.image_size = 16;
  rc.output_dir = "";

  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VecX zf(512), zh1(512), zh2(512);
  for (int i = 0; i < 512; ++i) {
    zf[i] = gauss(rng);
    zh1[i] = gauss(rng);
    zh2[i] = gauss(rng);
  }
  const CameraPose cam = make_test_camera();
  const EditOutputs a = edit_hairstyle(params, cfg, assets, zf, zh1, cam, 1.0, rc, 2);
  const EditOutputs b = edit_hairstyle(params, cfg, assets, zf, zh2, cam, 1.0, rc, 2);
  CHECK(a.textures.face.data == b.textures.face.data);
  CHECK(a.textures.hair.data != b.textures.hair.data);

  // Swap identity: equal sources reproduce plain sampling.
  const EditOutputs c = edit_hairstyle(params, cfg, assets, zf, zf, cam, 1.0, rc, 1);
  GenerateOptions opts;
  opts.omega = 1.0;
  const GeneratedTextures plain = generate_textures(params, cfg, zf, cam, opts);
  CHECK(c.textures.hair.data == plain.hair.data);
  CHECK(c.textures.face.data == plain.face.data);
  CHECK((c.textures.theta - plain.theta).cwiseAbs().maxCoeff() == 0.0);
}
