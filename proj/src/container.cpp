// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/container.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>

namespace gshead {

namespace {

constexpr char kMagic[4] = {'3', 'D', 'G', 'H'};
constexpr uint32_t kVersion = 1;
enum Kind : uint32_t { kTensor = 1, kTable = 2, kBlendModel = 3 };

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw DataError("cannot open for writing: " + path);
  }
  void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), std::streamsize(n)); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void f32(float v) { bytes(&v, 4); }
  void f32_array(const double* data, size_t n) {
    std::vector<float> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = float(data[i]);
    bytes(buf.data(), 4 * n);
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw DataError("cannot open for reading: " + p);
  }
  void bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), std::streamsize(n));
    if (!in) throw DataError("truncated container file: " + path);
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    return v;
  }
  void f32_array(double* data, size_t n) {
    std::vector<float> buf(n);
    bytes(buf.data(), 4 * n);
    for (size_t i = 0; i < n; ++i) data[i] = double(buf[i]);
  }
};

void write_header(Writer& w, Kind kind) {
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(kind);
}

Kind read_header(Reader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad container magic: " + r.path);
  const uint32_t version = r.u32();
  if (version != kVersion) throw DataError("unsupported container version: " + r.path);
  return Kind(r.u32());
}

}  // namespace

void write_tensor_file(const std::string& path, const std::vector<uint32_t>& dims,
                       const double* data) {
  Writer w(path);
  write_header(w, kTensor);
  w.u32(uint32_t(dims.size()));
  size_t n = 1;
  for (uint32_t d : dims) {
    w.u32(d);
    n *= d;
  }
  w.f32_array(data, n);
}

void read_tensor_file(const std::string& path, std::vector<uint32_t>* dims,
                      std::vector<double>* data) {
  Reader r(path);
  if (read_header(r) != kTensor) throw DataError("not a tensor container: " + path);
  const uint32_t rank = r.u32();
  dims->resize(rank);
  size_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    (*dims)[i] = r.u32();
    n *= (*dims)[i];
  }
  data->resize(n);
  r.f32_array(data->data(), n);
}

void write_image_file(const std::string& path, const Image& img) {
  write_tensor_file(path, {uint32_t(img.height), uint32_t(img.width), uint32_t(img.channels)},
                    img.data.data());
}

Image read_image_file(const std::string& path) {
  std::vector<uint32_t> dims;
  std::vector<double> data;
  read_tensor_file(path, &dims, &data);
  if (dims.size() != 3) throw DataError("image container must have rank 3: " + path);
  Image img{int(dims[0]), int(dims[1]), int(dims[2])};
  img.data = std::move(data);
  return img;
}

void write_texture_file(const std::string& path, const GaussianTextureMap& tex) {
  write_tensor_file(path, {uint32_t(tex.resolution), uint32_t(tex.resolution), 14},
                    tex.data.data());
}

GaussianTextureMap read_texture_file(const std::string& path) {
  std::vector<uint32_t> dims;
  std::vector<double> data;
  read_tensor_file(path, &dims, &data);
  if (dims.size() != 3 || dims[0] != dims[1] || dims[2] != 14)
    throw DataError("texture container must be res x res x 14: " + path);
  GaussianTextureMap tex{int(dims[0])};
  tex.data = std::move(data);
  return tex;
}

void write_gaussian_set_file(const std::string& path, const GaussianSet& set) {
  const size_t n = set.size();
  std::vector<double> rows(n * 23);
  for (size_t i = 0; i < n; ++i) {
    double* r = &rows[i * 23];
    const GaussianPrimitive& g = set.gaussians[i];
    for (int k = 0; k < 3; ++k) r[k] = g.position[k];
    for (int k = 0; k < 4; ++k) r[3 + k] = g.rotation[k];
    for (int k = 0; k < 3; ++k) r[7 + k] = g.scale[k];
    for (int k = 0; k < 3; ++k) r[10 + k] = g.color[k];
    r[13] = g.opacity;
    for (int k = 0; k < 3; ++k) r[14 + k] = g.label[k];
    for (int k = 0; k < 3; ++k) r[17 + k] = set.anchors[i][k];
    for (int k = 0; k < 3; ++k) r[20 + k] = set.deltas[i][k];
  }
  write_tensor_file(path, {uint32_t(n), 23}, rows.data());
}

GaussianSet read_gaussian_set_file(const std::string& path) {
  std::vector<uint32_t> dims;
  std::vector<double> rows;
  read_tensor_file(path, &dims, &rows);
  if (dims.size() != 2 || dims[1] != 23) throw DataError("gaussian set container must be N x 23");
  GaussianSet set;
  const size_t n = dims[0];
  set.gaussians.resize(n);
  set.anchors.resize(n);
  set.deltas.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double* r = &rows[i * 23];
    GaussianPrimitive& g = set.gaussians[i];
    for (int k = 0; k < 3; ++k) g.position[k] = r[k];
    for (int k = 0; k < 4; ++k) g.rotation[k] = r[3 + k];
    // Normalize away float32 rounding so the unit-quaternion invariant holds.
    g.rotation /= g.rotation.norm();
    for (int k = 0; k < 3; ++k) g.scale[k] = r[7 + k];
    for (int k = 0; k < 3; ++k) g.color[k] = r[10 + k];
    g.opacity = r[13];
    for (int k = 0; k < 3; ++k) g.label[k] = r[14 + k];
    for (int k = 0; k < 3; ++k) set.anchors[i][k] = r[17 + k];
    for (int k = 0; k < 3; ++k) set.deltas[i][k] = r[20 + k];
  }
  return set;
}

void write_checkpoint(const std::string& path, const NetParams& params) {
  Writer w(path);
  write_header(w, kTable);
  w.u32(uint32_t(params.tensors.size()));
  for (const auto& [name, t] : params.tensors) {
    w.u32(uint32_t(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(uint32_t(t.shape.size()));
    for (int d : t.shape) w.u32(uint32_t(d));
    w.f32_array(t.data.data(), size_t(t.data.size()));
  }
}

NetParams read_checkpoint(const std::string& path) {
  Reader r(path);
  if (read_header(r) != kTable) throw DataError("not a checkpoint container: " + path);
  NetParams params;
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    long n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = int(r.u32());
      n *= shape[d];
    }
    ParamTensor t;
    t.shape = shape;
    t.data = VecX::Zero(n);
    r.f32_array(t.data.data(), size_t(n));
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

void write_blend_model_file(const std::string& path, const HairBlendModel& model, int num_faces) {
  Writer w(path);
  write_header(w, kBlendModel);
  w.u32(uint32_t(model.num_vertices()));
  w.u32(uint32_t(num_faces));
  w.u32(uint32_t(model.num_coeffs));
  w.f32(float(model.sigma));
  w.f32_array(model.mean_shape.data(), size_t(model.mean_shape.size()));
  // Row-major component rows.
  for (int i = 0; i < model.num_coeffs; ++i) {
    const VecX row = model.components.row(i).transpose();
    w.f32_array(row.data(), size_t(row.size()));
  }
}

HairBlendModel read_blend_model_file(const std::string& path) {
  Reader r(path);
  if (read_header(r) != kBlendModel) throw DataError("not a blend model container: " + path);
  HairBlendModel model;
  const uint32_t V = r.u32();
  (void)r.u32();  // face count, informational
  model.num_coeffs = int(r.u32());
  model.sigma = double(r.f32());
  model.mean_shape = VecX::Zero(3 * V);
  r.f32_array(model.mean_shape.data(), 3 * size_t(V));
  model.components = MatX::Zero(model.num_coeffs, 3 * V);
  VecX row(3 * V);
  model.effective_rank = 0;
  for (int i = 0; i < model.num_coeffs; ++i) {
    r.f32_array(row.data(), 3 * size_t(V));
    model.components.row(i) = row.transpose();
    if (row.norm() > 0.0) model.effective_rank = i + 1;
  }
  return model;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

void png_chunk(std::ofstream& out, const char type[4], const std::vector<unsigned char>& payload) {
  auto be32 = [&](uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                          (unsigned char)(v >> 8), (unsigned char)v};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  be32(uint32_t(payload.size()));
  out.write(type, 4);
  if (!payload.empty()) out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!payload.empty()) crc = crc32(crc, payload.data(), uInt(payload.size()));
  be32(uint32_t(crc));
}

void write_png(const std::string& path, int w, int h, int color_type, int bit_depth,
               const std::vector<unsigned char>& raster, int bytes_per_pixel) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write PNG: " + path);
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr(13);
  ihdr[0] = (unsigned char)(w >> 24);
  ihdr[1] = (unsigned char)(w >> 16);
  ihdr[2] = (unsigned char)(w >> 8);
  ihdr[3] = (unsigned char)w;
  ihdr[4] = (unsigned char)(h >> 24);
  ihdr[5] = (unsigned char)(h >> 16);
  ihdr[6] = (unsigned char)(h >> 8);
  ihdr[7] = (unsigned char)h;
  ihdr[8] = (unsigned char)bit_depth;
  ihdr[9] = (unsigned char)color_type;
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  png_chunk(out, "IHDR", ihdr);

  // Filter byte 0 per scanline.
  const size_t stride = size_t(w) * bytes_per_pixel;
  std::vector<unsigned char> raw((stride + 1) * h);
  for (int y = 0; y < h; ++y) {
    raw[y * (stride + 1)] = 0;
    std::memcpy(&raw[y * (stride + 1) + 1], &raster[y * stride], stride);
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<unsigned char> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw NumericError("PNG compression failed");
  comp.resize(comp_len);
  png_chunk(out, "IDAT", comp);
  png_chunk(out, "IEND", {});
}

}  // namespace

void write_png_rgb8(const std::string& path, const Image& rgb) {
  if (rgb.channels != 3) throw ShapeError("write_png_rgb8 expects 3 channels");
  std::vector<unsigned char> raster(size_t(rgb.width) * rgb.height * 3);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c)
        raster[(size_t(y) * rgb.width + x) * 3 + c] =
            (unsigned char)std::lround(clamp(rgb.at(y, x, c), 0.0, 1.0) * 255.0);
  write_png(path, rgb.width, rgb.height, 2, 8, raster, 3);
}

void write_png_gray16(const std::string& path, const Image& gray) {
  if (gray.channels != 1) throw ShapeError("write_png_gray16 expects 1 channel");
  std::vector<unsigned char> raster(size_t(gray.width) * gray.height * 2);
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) {
      const uint16_t v = (uint16_t)std::lround(clamp(gray.at(y, x, 0), 0.0, 1.0) * 65535.0);
      raster[(size_t(y) * gray.width + x) * 2] = (unsigned char)(v >> 8);
      raster[(size_t(y) * gray.width + x) * 2 + 1] = (unsigned char)(v & 0xff);
    }
  write_png(path, gray.width, gray.height, 0, 16, raster, 2);
}

void write_png_gray8(const std::string& path, const Image& gray, double scale) {
  if (gray.channels != 1) throw ShapeError("write_png_gray8 expects 1 channel");
  std::vector<unsigned char> raster(size_t(gray.width) * gray.height);
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x)
      raster[size_t(y) * gray.width + x] =
          (unsigned char)std::lround(clamp(gray.at(y, x, 0) * scale, 0.0, 255.0));
  write_png(path, gray.width, gray.height, 0, 8, raster, 1);
}

}  // namespace gshead
