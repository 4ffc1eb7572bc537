// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/generator.hpp"

namespace gshead {

GeneratedTextures generate_textures(const NetParams& params, const SynthesisConfig& cfg,
                                    const VecX& z, const CameraPose& camera,
                                    const GenerateOptions& opts, GenerateCtx* ctx) {
  GenerateCtx local;
  GenerateCtx* c = ctx ? ctx : &local;
  WCode w_hair, w_face;
  mapping_forward(params, cfg, z, camera, &w_hair, &w_face, &c->mapping);
  return generate_from_codes(params, cfg, w_hair, w_face, opts, c);
}

GeneratedTextures generate_from_codes(const NetParams& params, const SynthesisConfig& cfg,
                                      const WCode& w_hair, const WCode& w_face,
                                      const GenerateOptions& opts, GenerateCtx* ctx) {
  GenerateCtx local;
  GenerateCtx* c = ctx ? ctx : &local;
  c->omega = opts.omega;
  c->w_hair = w_hair.value;
  c->w_face = w_face.value;

  GeneratedTextures out;
  out.theta = geometry_mapping(params, cfg, w_hair, &c->geom);

  const FeatureMap face_y =
      synthesis_forward(params, "face", cfg, w_face.value, nullptr, &c->face_stack);
  out.face = feature_to_texture(face_y);

  bool dropped = false;
  if (opts.training) {
    if (opts.forced_drop.has_value()) {
      dropped = *opts.forced_drop;
    } else {
      if (!opts.rng) throw ConfigError("training-mode generation needs an rng or a forced drop");
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      dropped = uni(*opts.rng) < cfg.drop_probability;
    }
  }
  c->dropped = dropped;
  out.dropped = dropped;

  FeatureMap hair_y;
  const bool want_cond = !dropped && opts.omega != 0.0;
  const bool want_uncond = dropped || (!opts.training && opts.omega != 1.0);
  c->ran_cond = want_cond;
  c->ran_uncond = want_uncond;
  if (want_cond && want_uncond) {
    const FeatureMap y_cond =
        synthesis_forward(params, "hair", cfg, w_hair.value, &c->w_face, &c->hair_cond);
    const FeatureMap y_uncond =
        synthesis_forward(params, "hair", cfg, w_hair.value, nullptr, &c->hair_uncond);
    hair_y = cfg_blend(y_cond, y_uncond, opts.omega);
  } else if (want_cond) {
    hair_y = synthesis_forward(params, "hair", cfg, w_hair.value, &c->w_face, &c->hair_cond);
  } else {
    hair_y = synthesis_forward(params, "hair", cfg, w_hair.value, nullptr, &c->hair_uncond);
  }
  out.hair = feature_to_texture(hair_y);
  return out;
}

VecX generate_textures_backward(const NetParams& params, const SynthesisConfig& cfg,
                                const GenerateCtx& ctx, const GaussianTextureMap& d_hair,
                                const GaussianTextureMap& d_face, const VecX& d_theta,
                                GradMap* grads) {
  VecX d_w_hair = VecX::Zero(cfg.w_dim);
  VecX d_w_face = VecX::Zero(cfg.w_dim);

  const FeatureMap d_face_y = texture_grad_to_feature(d_face);
  synthesis_backward(params, "face", cfg, ctx.face_stack, d_face_y, grads, &d_w_face, nullptr);

  const FeatureMap d_hair_y = texture_grad_to_feature(d_hair);
  if (ctx.ran_cond && ctx.ran_uncond) {
    FeatureMap d_cond = d_hair_y;
    d_cond.data *= ctx.omega;
    FeatureMap d_uncond = d_hair_y;
    d_uncond.data *= (1.0 - ctx.omega);
    synthesis_backward(params, "hair", cfg, ctx.hair_cond, d_cond, grads, &d_w_hair, &d_w_face);
    synthesis_backward(params, "hair", cfg, ctx.hair_uncond, d_uncond, grads, &d_w_hair, nullptr);
  } else if (ctx.ran_cond) {
    synthesis_backward(params, "hair", cfg, ctx.hair_cond, d_hair_y, grads, &d_w_hair, &d_w_face);
  } else {
    synthesis_backward(params, "hair", cfg, ctx.hair_uncond, d_hair_y, grads, &d_w_hair, nullptr);
  }

  if (d_theta.size() > 0)
    d_w_hair += geometry_mapping_backward(params, cfg, ctx.geom, d_theta, grads);

  return mapping_backward(params, cfg, ctx.mapping, d_w_hair, d_w_face, grads);
}

}  // namespace gshead
