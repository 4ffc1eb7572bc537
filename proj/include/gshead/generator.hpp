// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/nets.hpp"

namespace gshead {

struct GenerateOptions {
  double omega = 1.0;                     // CFG factor at inference
  bool training = false;                  // enables the random condition drop
  std::optional<bool> forced_drop;        // overrides the random draw
  std::mt19937_64* rng = nullptr;         // required when training without forced_drop
};

struct GenerateCtx {
  MappingCtx mapping;
  GeomCtx geom;
  VecX w_hair, w_face;
  StackCtx face_stack;
  StackCtx hair_cond;    // attended run (when it happened)
  StackCtx hair_uncond;  // unconditioned run (when it happened)
  bool ran_cond = false;
  bool ran_uncond = false;
  double omega = 1.0;
  bool dropped = false;
};

struct GeneratedTextures {
  GaussianTextureMap hair;
  GaussianTextureMap face;
  VecX theta;
  bool dropped = false;
};

// Full generator pass: mapping, geometry mapping, the face stack on w_face,
// and the hair stack with CFG blending of conditional / unconditional feature
// maps at every level. During training the condition is nulled with the
// configured probability (the residual is omitted); at inference omega alone
// controls the blend, with bitwise-exact endpoints.
GeneratedTextures generate_textures(const NetParams& params, const SynthesisConfig& cfg,
                                    const VecX& z, const CameraPose& camera,
                                    const GenerateOptions& opts, GenerateCtx* ctx = nullptr);

// Same pass starting from intermediate codes; used for hairstyle editing where
// w_hair and w_face come from different sources.
GeneratedTextures generate_from_codes(const NetParams& params, const SynthesisConfig& cfg,
                                      const WCode& w_hair, const WCode& w_face,
                                      const GenerateOptions& opts, GenerateCtx* ctx = nullptr);

// Backward through generate_textures. Returns dL/dz; gradients on parameters
// accumulate into grads.
VecX generate_textures_backward(const NetParams& params, const SynthesisConfig& cfg,
                                const GenerateCtx& ctx, const GaussianTextureMap& d_hair,
                                const GaussianTextureMap& d_face, const VecX& d_theta,
                                GradMap* grads);

}  // namespace gshead
