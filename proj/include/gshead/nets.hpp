// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/camera.hpp"
#include "gshead/image.hpp"
#include "gshead/texture.hpp"

#include <map>
#include <optional>
#include <random>
#include <string>

namespace gshead {

// Named parameter tensor; matrices are column-major when viewed through Eigen.
struct ParamTensor {
  std::vector<int> shape;
  VecX data;

  long numel() const { return data.size(); }
};

// All trainable tensors keyed by stable names. std::map ordering makes every
// iteration (updates, serialization) deterministic.
struct NetParams {
  std::map<std::string, ParamTensor> tensors;

  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  void add(const std::string& name, std::vector<int> shape);
  long total_parameters() const;
  void require_finite() const;
};

using GradMap = NetParams;

// Accumulate helper: creates the slot on first touch.
void accumulate(GradMap* grads, const std::string& name, const VecX& g,
                const std::vector<int>& shape);

struct SynthesisConfig {
  int base_resolution = 4;
  int output_resolution = 64;
  int texture_channels = 14;
  int base_channels = 16;  // channels at the finest level
  int max_channels = 64;
  int attention_tokens = 8;  // T, must divide w_dim
  int attention_heads = 4;
  int attention_dim = 64;  // internal query/key/value width
  double drop_probability = 0.10;
  int z_dim = 512;
  int w_dim = 512;
  int mapping_layers = 4;
  int mapping_hidden = 512;
  int theta_dim = 32;
  double init_scale_mm = 3.0;  // decoded splat size at init (raw scale bias)
  int image_resolution = 64;   // discriminator input size
  int disc_base_channels = 16;
  int disc_max_channels = 64;

  int num_levels() const;
  int resolution_at(int level) const { return base_resolution << level; }
  int channels_at(int level) const;
  int disc_channels_at(int level) const;
  void validate() const;
};

// Deterministic parameter initialization: every tensor's values depend only on
// (seed, tensor name), never on creation order.
NetParams init_params(const SynthesisConfig& cfg, uint64_t seed);

// ---- feature maps ----

struct FeatureMap {
  int channels = 0, height = 0, width = 0;
  MatX data;  // channels x (height*width), pixel index p = y*width + x

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(MatX::Zero(c, h * w)) {}
};

// Exact affine CFG blend; the omega endpoints return the inputs bitwise.
FeatureMap cfg_blend(const FeatureMap& x_cond, const FeatureMap& x_uncond, double omega);

// ---- mapping networks ----

struct WCode {
  VecX value;
  enum class Role { Hair, Face } role = Role::Hair;
};

struct MappingCtx {
  VecX input;
  std::vector<VecX> pre;   // pre-activation per trunk layer
  std::vector<VecX> post;  // post-activation per trunk layer
};

// Shared 4-layer trunk on (z, flattened camera) with two linear heads.
void mapping_forward(const NetParams& params, const SynthesisConfig& cfg, const VecX& z,
                     const CameraPose& camera, WCode* w_hair, WCode* w_face, MappingCtx* ctx);
// Returns dL/dz.
VecX mapping_backward(const NetParams& params, const SynthesisConfig& cfg, const MappingCtx& ctx,
                      const VecX& d_w_hair, const VecX& d_w_face, GradMap* grads);

struct GeomCtx {
  VecX input;
  VecX pre;
  VecX post;
};

// Two-layer net mapping w_hair to the blend coefficients.
VecX geometry_mapping(const NetParams& params, const SynthesisConfig& cfg, const WCode& w_hair,
                      GeomCtx* ctx);
VecX geometry_mapping_backward(const NetParams& params, const SynthesisConfig& cfg,
                               const GeomCtx& ctx, const VecX& d_theta, GradMap* grads);

// ---- cross attention ----

struct AttnCtx {
  MatX x;        // query source, C x P
  VecX w_face;
  MatX q, k, v;  // D x P, D x T, D x T
  MatX attn;     // (heads*T) x P row blocks per head
  MatX out;      // D x P, concatenated head outputs
};

// Multi-head attention of per-pixel queries over w_face split into T tokens.
// Returns the residual to add to the feature map.
FeatureMap cross_attention(const NetParams& params, const std::string& prefix,
                           const SynthesisConfig& cfg, const FeatureMap& x, const VecX& w_face,
                           AttnCtx* ctx);
void cross_attention_backward(const NetParams& params, const std::string& prefix,
                              const SynthesisConfig& cfg, const AttnCtx& ctx,
                              const FeatureMap& d_res, GradMap* grads, FeatureMap* d_x,
                              VecX* d_w_face);

// ---- synthesis stack ----

struct BlockCtx {
  FeatureMap x_in;        // after upsampling (conv input)
  VecX style;             // modulation coefficients
  FeatureMap conv_pre;    // pre-activation conv output
  FeatureMap x_post;      // after leaky relu
  bool has_attn = false;
  AttnCtx attn;
  FeatureMap x_out;       // block output (post attention residual)
};

struct StackCtx {
  std::vector<BlockCtx> blocks;
  VecX w;
};

// One full synthesis stack ("hair" or "face"); w_face non-null enables the
// cross-attention residual in every block. Returns the texture-channel output
// at the configured resolution.
FeatureMap synthesis_forward(const NetParams& params, const std::string& stack,
                             const SynthesisConfig& cfg, const VecX& w, const VecX* w_face,
                             StackCtx* ctx);
// d_y is the gradient on the stack output. Accumulates parameter gradients and
// returns gradients on w (and w_face if attended).
void synthesis_backward(const NetParams& params, const std::string& stack,
                        const SynthesisConfig& cfg, const StackCtx& ctx, const FeatureMap& d_y,
                        GradMap* grads, VecX* d_w, VecX* d_w_face);

// ---- discriminator ----

struct DiscCtx {
  FeatureMap input;  // 4 x H x W
  std::vector<FeatureMap> pre;   // pre-activation per conv
  std::vector<FeatureMap> post;  // post-activation per conv
  VecX flat;
  VecX fc_pre, fc_post;
  VecX cam_embed;
  Eigen::Matrix<double, 25, 1> cam_flat;
};

// Strided conv stack on the concatenated (rgb, mask) input with projection
// conditioning on the camera; returns the raw score.
double discriminator_forward(const NetParams& params, const SynthesisConfig& cfg, const Image& rgb,
                             const Image& mask, const CameraPose& camera, DiscCtx* ctx);
// Gradients w.r.t. parameters and, when requested, the input images (for R1).
void discriminator_backward(const NetParams& params, const SynthesisConfig& cfg,
                            const DiscCtx& ctx, double d_score, GradMap* grads, Image* d_rgb,
                            Image* d_mask);

FeatureMap image_to_feature(const Image& rgb, const Image& mask);
GaussianTextureMap feature_to_texture(const FeatureMap& fm);
FeatureMap texture_grad_to_feature(const GaussianTextureMap& d_tex);

// R1 gradient penalty at a (real) sample: strength/2 * |grad_{rgb,mask} score|^2,
// over the concatenated 4-channel input. Optionally returns the input
// gradients it was computed from.
double r1_penalty(const NetParams& params, const SynthesisConfig& cfg, const Image& rgb,
                  const Image& mask, const CameraPose& camera, double strength = 1.0,
                  Image* grad_rgb = nullptr, Image* grad_mask = nullptr);

}  // namespace gshead
