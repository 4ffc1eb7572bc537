// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/blend_model.hpp"
#include "gshead/gaussians.hpp"
#include "gshead/image.hpp"
#include "gshead/nets.hpp"
#include "gshead/texture.hpp"

#include <string>

namespace gshead {

// Little-endian binary container. Layout: magic "3DGH", version u32 = 1,
// kind u32, then the kind-specific payload with row-major float32 data.
//   kind 1: tensor        rank u32, dims u32[rank], f32 data
//   kind 2: tensor table  count u32, then per entry: name_len u32, name bytes,
//                         rank u32, dims u32[rank], f32 data
//   kind 3: blend model   V u32, F u32, num_coeffs u32, sigma f32,
//                         mean f32[3V], components f32[num_coeffs * 3V]

void write_tensor_file(const std::string& path, const std::vector<uint32_t>& dims,
                       const double* data);
void read_tensor_file(const std::string& path, std::vector<uint32_t>* dims,
                      std::vector<double>* data);

void write_image_file(const std::string& path, const Image& img);
Image read_image_file(const std::string& path);

void write_texture_file(const std::string& path, const GaussianTextureMap& tex);
GaussianTextureMap read_texture_file(const std::string& path);

// Gaussian sets as an N x 23 tensor: position(3), quaternion(4), scale(3),
// color(3), opacity(1), label(3), anchor(3), delta(3).
void write_gaussian_set_file(const std::string& path, const GaussianSet& set);
GaussianSet read_gaussian_set_file(const std::string& path);

void write_checkpoint(const std::string& path, const NetParams& params);
NetParams read_checkpoint(const std::string& path);

void write_blend_model_file(const std::string& path, const HairBlendModel& model, int num_faces);
HairBlendModel read_blend_model_file(const std::string& path);

// PNG output (zlib-compressed). Values are clamped to the valid range.
void write_png_rgb8(const std::string& path, const Image& rgb);
void write_png_gray16(const std::string& path, const Image& gray);  // [0,1] -> 16 bit
void write_png_gray8(const std::string& path, const Image& gray, double scale);

}  // namespace gshead
