// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/container.hpp"
#include "gshead/drivers.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace gshead;

namespace {

py::array_t<double> image_to_numpy(const Image& img) {
  py::array_t<double> arr({img.height, img.width, img.channels});
  std::copy(img.data.begin(), img.data.end(), arr.mutable_data());
  return arr;
}

Image numpy_to_image(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3) throw ShapeError("image array must be H x W x C");
  Image img(int(arr.shape(0)), int(arr.shape(1)), int(arr.shape(2)));
  std::copy(arr.data(), arr.data() + arr.size(), img.data.begin());
  return img;
}

GaussianTextureMap numpy_to_texture(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3 || arr.shape(0) != arr.shape(1) || arr.shape(2) != 14)
    throw ShapeError("texture array must be res x res x 14");
  GaussianTextureMap tex(int(arr.shape(0)));
  std::copy(arr.data(), arr.data() + arr.size(), tex.data.begin());
  return tex;
}

py::array_t<double> texture_to_numpy(const GaussianTextureMap& tex) {
  py::array_t<double> arr({tex.resolution, tex.resolution, 14});
  std::copy(tex.data.begin(), tex.data.end(), arr.mutable_data());
  return arr;
}

py::dict output_to_dict(const RenderOutput& out) {
  py::dict d;
  d["rgb"] = image_to_numpy(out.rgb);
  d["mask"] = image_to_numpy(out.mask);
  d["seg"] = image_to_numpy(out.seg);
  d["transmittance"] = image_to_numpy(out.transmittance);
  return d;
}

}  // namespace

PYBIND11_MODULE(_gshead, m) {
  m.doc() = "template-rigged gaussian splatting heads: core operations";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");

  py::enum_<PartLabel>(m, "PartLabel")
      .value("Background", PartLabel::Background)
      .value("Face", PartLabel::Face)
      .value("Hair", PartLabel::Hair);

  py::class_<TemplateMesh>(m, "TemplateMesh")
      .def_property(
          "vertices", [](const TemplateMesh& mesh) { return MatX(mesh.vertices); },
          [](TemplateMesh& mesh, const MatX& v) { mesh.vertices = v; })
      .def_property_readonly("faces", [](const TemplateMesh& mesh) { return mesh.faces; })
      .def_property_readonly("labels", [](const TemplateMesh& mesh) { return VecX(mesh.labels); })
      .def("num_vertices", &TemplateMesh::num_vertices)
      .def("num_faces", &TemplateMesh::num_faces);

  py::class_<CameraPose>(m, "CameraPose")
      .def(py::init<>())
      .def_property(
          "extrinsic", [](const CameraPose& c) { return Mat4(c.extrinsic); },
          [](CameraPose& c, const Mat4& e) { c.extrinsic = e; })
      .def_property(
          "intrinsic", [](const CameraPose& c) { return Mat3(c.intrinsic); },
          [](CameraPose& c, const Mat3& k) { c.intrinsic = k; })
      .def("flatten", [](const CameraPose& c) { return VecX(c.flatten()); })
      .def("validate", &CameraPose::validate);
  m.def("make_ring_camera", &make_ring_camera, py::arg("yaw_deg"), py::arg("pitch_deg"),
        py::arg("radius"), py::arg("focal_norm"));

  py::class_<UvRig>(m, "UvRig").def("valid_count", &UvRig::valid_count);
  m.def("build_uv_rig", &build_uv_rig, py::arg("mesh"), py::arg("resolution"));
  m.def("surface_points", [](const UvRig& rig, const TemplateMesh& mesh) {
    const auto pts = surface_points(rig, mesh);
    MatX out(int(pts.size()), 3);
    for (size_t i = 0; i < pts.size(); ++i) out.row(int(i)) = pts[i].transpose();
    return out;
  });

  py::class_<GaussianSet>(m, "GaussianSet")
      .def("__len__", &GaussianSet::size)
      .def("positions",
           [](const GaussianSet& set) {
             MatX out(int(set.size()), 3);
             for (size_t i = 0; i < set.size(); ++i)
               out.row(int(i)) = set.gaussians[i].position.transpose();
             return out;
           })
      .def("deltas",
           [](const GaussianSet& set) {
             MatX out(int(set.size()), 3);
             for (size_t i = 0; i < set.size(); ++i) out.row(int(i)) = set.deltas[i].transpose();
             return out;
           })
      .def("append", &GaussianSet::append);

  m.def(
      "spawn_gaussians",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& texture,
         const UvRig& rig, const TemplateMesh& mesh, double gamma, PartLabel label) {
        return spawn_gaussians(numpy_to_texture(texture), rig, mesh, gamma, label);
      },
      py::arg("texture"), py::arg("rig"), py::arg("mesh"), py::arg("gamma"), py::arg("label"));

  m.def(
      "render",
      [](const GaussianSet& set, const CameraPose& cam, int w, int h, const Vec3& bg,
         double t_threshold) {
        RenderOptions opts;
        opts.t_threshold = t_threshold;
        return output_to_dict(render(set, cam, w, h, bg, opts));
      },
      py::arg("set"), py::arg("camera"), py::arg("width"), py::arg("height"),
      py::arg("background") = Vec3::Zero().eval(), py::arg("t_threshold") = 1e-4);
  m.def(
      "reference_render",
      [](const GaussianSet& set, const CameraPose& cam, int w, int h, const Vec3& bg) {
        return output_to_dict(reference_render(set, cam, w, h, bg));
      },
      py::arg("set"), py::arg("camera"), py::arg("width"), py::arg("height"),
      py::arg("background") = Vec3::Zero().eval());

  m.def(
      "render_mesh_labels",
      [](const std::vector<TemplateMesh>& parts, const CameraPose& cam, int w, int h,
         double softness) {
        LabeledMeshScene scene;
        scene.parts = parts;
        return image_to_numpy(render_mesh_labels(scene, cam, w, h, softness));
      },
      py::arg("parts"), py::arg("camera"), py::arg("width"), py::arg("height"),
      py::arg("softness") = 1.5);

  py::class_<JacobianField>(m, "JacobianField")
      .def_static("identity", &JacobianField::identity)
      .def_readwrite("translation", &JacobianField::translation)
      .def("set_jacobian",
           [](JacobianField& f, int face, const Mat3& j) { f.jacobians.at(size_t(face)) = j; })
      .def("jacobian", [](const JacobianField& f, int face) { return f.jacobians.at(size_t(face)); });

  py::class_<MeshGradientOperator>(m, "MeshGradientOperator")
      .def(py::init<const TemplateMesh&>())
      .def("num_faces", &MeshGradientOperator::num_faces)
      .def("deformation_gradients", &MeshGradientOperator::deformation_gradients)
      .def("poisson_solve", &MeshGradientOperator::poisson_solve);

  py::class_<HairBlendModel>(m, "HairBlendModel")
      .def_readonly("sigma", &HairBlendModel::sigma)
      .def_readonly("num_coeffs", &HairBlendModel::num_coeffs)
      .def_readonly("effective_rank", &HairBlendModel::effective_rank)
      .def_property_readonly("components",
                             [](const HairBlendModel& model) { return MatX(model.components); });
  m.def("build_blend_model", &build_blend_model, py::arg("meshes"), py::arg("num_coeffs") = 32);
  m.def("blend_hair_shape", &blend_hair_shape, py::arg("model"), py::arg("theta"));
  m.def("project_to_coeffs", &project_to_coeffs, py::arg("model"), py::arg("vertices"));

  m.def("make_face_sphere", &make_face_sphere, py::arg("segments"), py::arg("rings"),
        py::arg("radius"), py::arg("bump_amp") = 0.05, py::arg("bump_phase") = 0.0);
  m.def("make_hair_template", &make_hair_template, py::arg("segments"), py::arg("rings"),
        py::arg("radius"));
  m.def("deform_hair_template", &deform_hair_template, py::arg("template_mesh"),
        py::arg("params"));
  py::class_<HairStyleParams>(m, "HairStyleParams")
      .def(py::init([](double length, double flare, double fluff) {
             return HairStyleParams{length, flare, fluff};
           }),
           py::arg("length") = 1.0, py::arg("flare") = 0.0, py::arg("fluff") = 0.0);

  // Losses.
  m.def("l1_loss", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                      const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
    return l1_loss(numpy_to_image(a), numpy_to_image(b));
  });
  m.def("seg_cross_entropy",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& target) {
          return seg_cross_entropy(numpy_to_image(pred), numpy_to_image(target));
        });
  m.def("pos_reg", [](const MatX& deltas) {
    std::vector<Vec3> v(size_t(deltas.rows()));
    for (int i = 0; i < deltas.rows(); ++i) v[size_t(i)] = deltas.row(i).transpose();
    return pos_reg(v);
  });
  m.def(
      "scale_reg",
      [](const MatX& scales, double s_min, double s_max) {
        std::vector<Vec3> v(size_t(scales.rows()));
        for (int i = 0; i < scales.rows(); ++i) v[size_t(i)] = scales.row(i).transpose();
        return scale_reg(v, s_min, s_max);
      },
      py::arg("scales"), py::arg("s_min") = 0.2, py::arg("s_max") = 5.0);
  m.def("adv_loss_g", &adv_loss_g);
  m.def("adv_loss_d", &adv_loss_d);

  // Generator.
  py::class_<SynthesisConfig>(m, "SynthesisConfig")
      .def(py::init<>())
      .def_readwrite("base_resolution", &SynthesisConfig::base_resolution)
      .def_readwrite("output_resolution", &SynthesisConfig::output_resolution)
      .def_readwrite("base_channels", &SynthesisConfig::base_channels)
      .def_readwrite("max_channels", &SynthesisConfig::max_channels)
      .def_readwrite("attention_tokens", &SynthesisConfig::attention_tokens)
      .def_readwrite("attention_heads", &SynthesisConfig::attention_heads)
      .def_readwrite("attention_dim", &SynthesisConfig::attention_dim)
      .def_readwrite("drop_probability", &SynthesisConfig::drop_probability)
      .def_readwrite("image_resolution", &SynthesisConfig::image_resolution)
      .def("num_levels", &SynthesisConfig::num_levels)
      .def("validate", &SynthesisConfig::validate);

  py::class_<NetParams>(m, "NetParams")
      .def("total_parameters", &NetParams::total_parameters)
      .def("names", [](const NetParams& params) {
        std::vector<std::string> names;
        for (const auto& [name, t] : params.tensors) names.push_back(name);
        return names;
      });
  m.def("init_params", &init_params, py::arg("config"), py::arg("seed"));

  m.def(
      "generate_textures",
      [](const NetParams& params, const SynthesisConfig& cfg, const VecX& z,
         const CameraPose& cam, double omega) {
        GenerateOptions opts;
        opts.omega = omega;
        const GeneratedTextures out = generate_textures(params, cfg, z, cam, opts);
        py::dict d;
        d["hair"] = texture_to_numpy(out.hair);
        d["face"] = texture_to_numpy(out.face);
        d["theta"] = VecX(out.theta);
        return d;
      },
      py::arg("params"), py::arg("config"), py::arg("z"), py::arg("camera"),
      py::arg("omega") = 1.0);
  m.def(
      "discriminator_forward",
      [](const NetParams& params, const SynthesisConfig& cfg,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& rgb,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& mask,
         const CameraPose& cam) {
        return discriminator_forward(params, cfg, numpy_to_image(rgb), numpy_to_image(mask), cam,
                                     nullptr);
      },
      py::arg("params"), py::arg("config"), py::arg("rgb"), py::arg("mask"), py::arg("camera"));

  // Metrics and io.
  m.def("psnr", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                   const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
    return psnr(numpy_to_image(a), numpy_to_image(b));
  });
  m.def("write_texture_file",
        [](const std::string& path,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& tex) {
          write_texture_file(path, numpy_to_texture(tex));
        });
  m.def("read_texture_file",
        [](const std::string& path) { return texture_to_numpy(read_texture_file(path)); });

  m.attr("__version__") = "0.1.0";
}
