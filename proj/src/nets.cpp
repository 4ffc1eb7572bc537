// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/nets.hpp"

namespace gshead {

namespace {

constexpr double kLeakySlope = 0.2;
constexpr double kDemodEps = 1e-8;

double leaky(double x) { return x >= 0.0 ? x : kLeakySlope * x; }
double leaky_grad(double pre) { return pre >= 0.0 ? 1.0 : kLeakySlope; }

Eigen::Map<MatX> as_matrix(ParamTensor& t) {
  return Eigen::Map<MatX>(t.data.data(), t.shape[0], t.shape.size() > 1 ? t.shape[1] : 1);
}
Eigen::Map<const MatX> as_matrix(const ParamTensor& t) {
  return Eigen::Map<const MatX>(t.data.data(), t.shape[0], t.shape.size() > 1 ? t.shape[1] : 1);
}

}  // namespace

ParamTensor& NetParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("unknown parameter tensor: " + name);
  return it->second;
}

const ParamTensor& NetParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("unknown parameter tensor: " + name);
  return it->second;
}

void NetParams::add(const std::string& name, std::vector<int> shape) {
  long n = 1;
  for (int d : shape) n *= d;
  ParamTensor t;
  t.shape = std::move(shape);
  t.data = VecX::Zero(n);
  tensors.emplace(name, std::move(t));
}

long NetParams::total_parameters() const {
  long n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

void NetParams::require_finite() const {
  for (const auto& [name, t] : tensors)
    if (!t.data.allFinite()) throw NumericError("non-finite parameter tensor: " + name);
}

void accumulate(GradMap* grads, const std::string& name, const VecX& g,
                const std::vector<int>& shape) {
  auto it = grads->tensors.find(name);
  if (it == grads->tensors.end()) {
    ParamTensor t;
    t.shape = shape;
    t.data = g;
    grads->tensors.emplace(name, std::move(t));
  } else {
    it->second.data += g;
  }
}

int SynthesisConfig::num_levels() const {
  int levels = 1, r = base_resolution;
  while (r < output_resolution) {
    r *= 2;
    ++levels;
  }
  return levels;
}

int SynthesisConfig::channels_at(int level) const {
  const int from_top = num_levels() - 1 - level;
  return std::min(max_channels, base_channels << from_top);
}

int SynthesisConfig::disc_channels_at(int level) const {
  return std::min(disc_max_channels, disc_base_channels << level);
}

void SynthesisConfig::validate() const {
  int r = base_resolution;
  while (r < output_resolution) r *= 2;
  if (r != output_resolution) throw ConfigError("output resolution must be base * 2^k");
  if (drop_probability < 0.0 || drop_probability > 1.0)
    throw ConfigError("drop probability outside [0,1]");
  int ir = 4;
  while (ir < image_resolution) ir *= 2;
  if (ir != image_resolution || image_resolution < 8)
    throw ConfigError("image resolution must be 4 * 2^k and at least 8");
  if (attention_tokens < 1 || w_dim % attention_tokens != 0)
    throw ConfigError("attention token count must divide the w dimension");
  if (attention_dim % attention_heads != 0)
    throw ConfigError("attention heads must divide the attention dimension");
}

// ---------------------------------------------------------------------------
// initialization

namespace {

void init_tensor(ParamTensor* t, const std::string& name, uint64_t seed, double std_dev,
                 double mean = 0.0) {
  std::mt19937_64 rng(fnv1a(name, seed ^ 0x9e3779b97f4a7c15ull));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < t->data.size(); ++i) t->data[i] = mean + std_dev * gauss(rng);
}

void add_linear(NetParams* p, const std::string& prefix, int out, int in) {
  p->add(prefix + ".w", {out, in});
  p->add(prefix + ".b", {out});
}

void add_attention(NetParams* p, const std::string& prefix, const SynthesisConfig& cfg,
                   int channels) {
  const int dtok = cfg.w_dim / cfg.attention_tokens;
  add_linear(p, prefix + ".q", cfg.attention_dim, channels);
  p->add(prefix + ".k.w", {cfg.attention_dim, dtok});
  p->add(prefix + ".k.b", {cfg.attention_dim});
  p->add(prefix + ".v.w", {cfg.attention_dim, dtok});
  p->add(prefix + ".v.b", {cfg.attention_dim});
  add_linear(p, prefix + ".o", channels, cfg.attention_dim);
}

}  // namespace

NetParams init_params(const SynthesisConfig& cfg, uint64_t seed) {
  cfg.validate();
  NetParams p;

  // Mapping trunk and heads.
  const int in0 = cfg.z_dim + 25;
  for (int l = 0; l < cfg.mapping_layers; ++l)
    add_linear(&p, "map.trunk" + std::to_string(l), cfg.mapping_hidden,
               l == 0 ? in0 : cfg.mapping_hidden);
  add_linear(&p, "map.head_hair", cfg.w_dim, cfg.mapping_hidden);
  add_linear(&p, "map.head_face", cfg.w_dim, cfg.mapping_hidden);

  // Geometry mapping.
  add_linear(&p, "geom.fc0", cfg.mapping_hidden, cfg.w_dim);
  add_linear(&p, "geom.fc1", cfg.theta_dim, cfg.mapping_hidden);

  // Synthesis stacks.
  for (const std::string stack : {"hair", "face"}) {
    p.add(stack + ".const", {cfg.channels_at(0), cfg.base_resolution, cfg.base_resolution});
    for (int l = 0; l < cfg.num_levels(); ++l) {
      const std::string b = stack + ".b" + std::to_string(l);
      const int cin = cfg.channels_at(std::max(0, l - 1));
      const int cout = cfg.channels_at(l);
      p.add(b + ".conv.w", {cout, cin, 3, 3});
      p.add(b + ".conv.b", {cout});
      p.add(b + ".conv.aw", {cin, cfg.w_dim});
      p.add(b + ".conv.ab", {cin});
      add_linear(&p, b + ".torgb", cfg.texture_channels, cout);
      if (stack == "hair") add_attention(&p, b + ".attn", cfg, cout);
    }
  }

  // Discriminator; depth follows the configured image resolution.
  int res = cfg.image_resolution;
  int depth = 0;
  p.add("disc.from.w", {cfg.disc_channels_at(0), 4, 3, 3});
  p.add("disc.from.b", {cfg.disc_channels_at(0)});
  while (res > 4) {
    const std::string b = "disc.b" + std::to_string(depth);
    p.add(b + ".w", {cfg.disc_channels_at(depth + 1), cfg.disc_channels_at(depth), 3, 3});
    p.add(b + ".b", {cfg.disc_channels_at(depth + 1)});
    res /= 2;
    ++depth;
  }
  const int flat = cfg.disc_channels_at(depth) * 16;
  add_linear(&p, "disc.fc", cfg.w_dim, flat);
  add_linear(&p, "disc.score", 1, cfg.w_dim);
  p.add("disc.cam.w", {cfg.w_dim, 25});

  // Deterministic per-tensor init.
  for (auto& [name, t] : p.tensors) {
    const bool is_bias = t.shape.size() == 1 && name.size() > 2 && name.substr(name.size() - 2) == ".b";
    if (is_bias) {
      init_tensor(&t, name, seed, 0.01);
    } else if (name.substr(name.size() - 3) == ".ab") {
      init_tensor(&t, name, seed, 0.0, 1.0);  // modulation bias starts at 1
    } else if (name.substr(name.size() - 3) == ".aw") {
      init_tensor(&t, name, seed, 0.2 / std::sqrt(double(cfg.w_dim)));
    } else if (name.substr(name.size() - 6) == ".const") {
      init_tensor(&t, name, seed, 1.0);
    } else {
      long fan_in = 1;
      for (size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
      double std_dev = 1.0 / std::sqrt(double(std::max<long>(1, fan_in)));
      // Damped output heads keep the decoded splats near the init bias.
      if (name.find(".torgb.w") != std::string::npos) std_dev *= 0.1;
      init_tensor(&t, name, seed, std_dev);
    }
  }

  // The final ToRGB bias decodes to identity rotation and a configured splat
  // size, so freshly initialized generators spawn well-formed Gaussians.
  const std::string last = ".b" + std::to_string(cfg.num_levels() - 1) + ".torgb.b";
  for (const std::string stack : {"hair", "face"}) {
    VecX& b = p.at(stack + last).data;
    b.setZero();
    b[GaussianTextureMap::kQuat] = 1.0;
    for (int k = 0; k < 3; ++k)
      b[GaussianTextureMap::kScale + k] = std::log(cfg.init_scale_mm);
  }
  return p;
}

// ---------------------------------------------------------------------------
// shared building blocks

namespace {

VecX linear_forward(const NetParams& params, const std::string& prefix, const VecX& x) {
  return as_matrix(params.at(prefix + ".w")) * x + params.at(prefix + ".b").data;
}

VecX linear_backward(const NetParams& params, const std::string& prefix, const VecX& x,
                     const VecX& dy, GradMap* grads) {
  const auto& wt = params.at(prefix + ".w");
  if (grads) {
    MatX dw = dy * x.transpose();
    accumulate(grads, prefix + ".w", Eigen::Map<VecX>(dw.data(), dw.size()), wt.shape);
    accumulate(grads, prefix + ".b", dy, params.at(prefix + ".b").shape);
  }
  return as_matrix(wt).transpose() * dy;
}

// Plain 3x3 convolution, zero padding 1. Weight layout [Cout][Cin][ky][kx].
void conv3x3(const FeatureMap& x, const double* w, const double* bias, int cout, int stride,
             FeatureMap* y) {
  const int cin = x.channels, H = x.height, W = x.width;
  const int oh = (H + stride - 1) / stride, ow = (W + stride - 1) / stride;
  *y = FeatureMap(cout, oh, ow);
  for (int o = 0; o < cout; ++o) {
    const double* wo = w + size_t(o) * cin * 9;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias ? bias[o] : 0.0;
        const int iy0 = oy * stride - 1, ix0 = ox * stride - 1;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= W) continue;
            const double* xp = &x.data(0, iy * W + ix);
            const double* wk = wo + ky * 3 + kx;
            for (int i = 0; i < cin; ++i) acc += wk[i * 9] * xp[i];
          }
        }
        y->data(o, oy * ow + ox) = acc;
      }
    }
  }
}

// Gradients of conv3x3 w.r.t. weights, bias, and input.
void conv3x3_backward(const FeatureMap& x, const double* w, int cout, int stride,
                      const FeatureMap& dy, double* dw, double* db, FeatureMap* dx) {
  const int cin = x.channels, H = x.height, W = x.width;
  const int oh = dy.height, ow = dy.width;
  if (dx) *dx = FeatureMap(cin, H, W);
  for (int o = 0; o < cout; ++o) {
    const double* wo = w + size_t(o) * cin * 9;
    double* dwo = dw ? dw + size_t(o) * cin * 9 : nullptr;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double g = dy.data(o, oy * ow + ox);
        if (g == 0.0) continue;
        if (db) db[o] += g;
        const int iy0 = oy * stride - 1, ix0 = ox * stride - 1;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= W) continue;
            const double* xp = &x.data(0, iy * W + ix);
            double* dxp = dx ? &dx->data(0, iy * W + ix) : nullptr;
            const int k = ky * 3 + kx;
            for (int i = 0; i < cin; ++i) {
              if (dwo) dwo[i * 9 + k] += g * xp[i];
              if (dxp) dxp[i] += g * wo[i * 9 + k];
            }
          }
        }
      }
    }
  }
}

// Bilinear 2x upsampling (half-pixel centers, border clamp).
FeatureMap upsample2x(const FeatureMap& x) {
  const int H = x.height, W = x.width;
  FeatureMap y(x.channels, 2 * H, 2 * W);
  auto taps = [](int oi, int n, int* i0, int* i1, double* w0, double* w1) {
    if (oi % 2 == 0) {
      *i0 = std::max(0, oi / 2 - 1);
      *i1 = oi / 2;
      *w0 = 0.25;
      *w1 = 0.75;
    } else {
      *i0 = oi / 2;
      *i1 = std::min(n - 1, oi / 2 + 1);
      *w0 = 0.75;
      *w1 = 0.25;
    }
  };
  for (int oy = 0; oy < 2 * H; ++oy) {
    int y0, y1;
    double wy0, wy1;
    taps(oy, H, &y0, &y1, &wy0, &wy1);
    for (int ox = 0; ox < 2 * W; ++ox) {
      int x0, x1;
      double wx0, wx1;
      taps(ox, W, &x0, &x1, &wx0, &wx1);
      y.data.col(oy * 2 * W + ox) = wy0 * wx0 * x.data.col(y0 * W + x0) +
                                    wy0 * wx1 * x.data.col(y0 * W + x1) +
                                    wy1 * wx0 * x.data.col(y1 * W + x0) +
                                    wy1 * wx1 * x.data.col(y1 * W + x1);
    }
  }
  return y;
}

FeatureMap upsample2x_backward(const FeatureMap& dy, int H, int W) {
  FeatureMap dx(dy.channels, H, W);
  auto taps = [](int oi, int n, int* i0, int* i1, double* w0, double* w1) {
    if (oi % 2 == 0) {
      *i0 = std::max(0, oi / 2 - 1);
      *i1 = oi / 2;
      *w0 = 0.25;
      *w1 = 0.75;
    } else {
      *i0 = oi / 2;
      *i1 = std::min(n - 1, oi / 2 + 1);
      *w0 = 0.75;
      *w1 = 0.25;
    }
  };
  for (int oy = 0; oy < 2 * H; ++oy) {
    int y0, y1;
    double wy0, wy1;
    taps(oy, H, &y0, &y1, &wy0, &wy1);
    for (int ox = 0; ox < 2 * W; ++ox) {
      int x0, x1;
      double wx0, wx1;
      taps(ox, W, &x0, &x1, &wx0, &wx1);
      const auto g = dy.data.col(oy * 2 * W + ox);
      dx.data.col(y0 * W + x0) += wy0 * wx0 * g;
      dx.data.col(y0 * W + x1) += wy0 * wx1 * g;
      dx.data.col(y1 * W + x0) += wy1 * wx0 * g;
      dx.data.col(y1 * W + x1) += wy1 * wx1 * g;
    }
  }
  return dx;
}

// Modulated 3x3 convolution: per-input-channel scaling by an affine function
// of w, demodulated to unit norm per output channel.
void modconv_forward(const NetParams& params, const std::string& prefix, const FeatureMap& x,
                     const VecX& w512, FeatureMap* y, VecX* style_out) {
  const auto& wt = params.at(prefix + ".w");
  const int cout = wt.shape[0], cin = wt.shape[1];
  const VecX s = as_matrix(params.at(prefix + ".aw")) * w512 + params.at(prefix + ".ab").data;
  if (style_out) *style_out = s;

  VecX wmod(wt.data.size());
  for (int o = 0; o < cout; ++o) {
    double norm2 = kDemodEps;
    for (int i = 0; i < cin; ++i)
      for (int k = 0; k < 9; ++k) {
        const double v = wt.data[size_t(o) * cin * 9 + i * 9 + k] * s[i];
        wmod[size_t(o) * cin * 9 + i * 9 + k] = v;
        norm2 += v * v;
      }
    const double inv = 1.0 / std::sqrt(norm2);
    for (int i = 0; i < cin * 9; ++i) wmod[size_t(o) * cin * 9 + i] *= inv;
  }
  conv3x3(x, wmod.data(), params.at(prefix + ".b").data.data(), cout, 1, y);
}

void modconv_backward(const NetParams& params, const std::string& prefix, const FeatureMap& x,
                      const VecX& w512, const VecX& style, const FeatureMap& dy, GradMap* grads,
                      FeatureMap* dx, VecX* d_w512) {
  const auto& wt = params.at(prefix + ".w");
  const int cout = wt.shape[0], cin = wt.shape[1];

  // Rebuild modulated weights and the per-output norms.
  VecX what(wt.data.size());
  VecX inv_sigma(cout);
  for (int o = 0; o < cout; ++o) {
    double norm2 = kDemodEps;
    for (int i = 0; i < cin * 9; ++i) {
      const double v = wt.data[size_t(o) * cin * 9 + i] * style[i / 9];
      what[size_t(o) * cin * 9 + i] = v;
      norm2 += v * v;
    }
    inv_sigma[o] = 1.0 / std::sqrt(norm2);
  }
  VecX wtilde(wt.data.size());
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin * 9; ++i)
      wtilde[size_t(o) * cin * 9 + i] = what[size_t(o) * cin * 9 + i] * inv_sigma[o];

  VecX d_wtilde = VecX::Zero(wt.data.size());
  VecX d_bias = VecX::Zero(cout);
  conv3x3_backward(x, wtilde.data(), cout, 1, dy, d_wtilde.data(), d_bias.data(), dx);

  // Through the demodulation.
  VecX d_what(wt.data.size());
  for (int o = 0; o < cout; ++o) {
    double dot = 0.0;
    for (int i = 0; i < cin * 9; ++i)
      dot += d_wtilde[size_t(o) * cin * 9 + i] * what[size_t(o) * cin * 9 + i];
    const double s3 = inv_sigma[o] * inv_sigma[o] * inv_sigma[o];
    for (int i = 0; i < cin * 9; ++i)
      d_what[size_t(o) * cin * 9 + i] =
          d_wtilde[size_t(o) * cin * 9 + i] * inv_sigma[o] - what[size_t(o) * cin * 9 + i] * dot * s3;
  }

  VecX d_weight(wt.data.size());
  VecX d_style = VecX::Zero(cin);
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin; ++i)
      for (int k = 0; k < 9; ++k) {
        const size_t idx = size_t(o) * cin * 9 + i * 9 + k;
        d_weight[idx] = d_what[idx] * style[i];
        d_style[i] += d_what[idx] * wt.data[idx];
      }

  if (grads) {
    accumulate(grads, prefix + ".w", d_weight, wt.shape);
    accumulate(grads, prefix + ".b", d_bias, params.at(prefix + ".b").shape);
    MatX daw = d_style * w512.transpose();
    accumulate(grads, prefix + ".aw", Eigen::Map<VecX>(daw.data(), daw.size()),
               params.at(prefix + ".aw").shape);
    accumulate(grads, prefix + ".ab", d_style, params.at(prefix + ".ab").shape);
  }
  if (d_w512) *d_w512 += as_matrix(params.at(prefix + ".aw")).transpose() * d_style;
}

}  // namespace

FeatureMap cfg_blend(const FeatureMap& x_cond, const FeatureMap& x_uncond, double omega) {
  if (x_cond.channels != x_uncond.channels || x_cond.height != x_uncond.height ||
      x_cond.width != x_uncond.width)
    throw ShapeError("cfg_blend shape mismatch");
  if (omega == 1.0) return x_cond;
  if (omega == 0.0) return x_uncond;
  FeatureMap out = x_cond;
  out.data = omega * x_cond.data + (1.0 - omega) * x_uncond.data;
  return out;
}

// ---------------------------------------------------------------------------
// mapping networks

void mapping_forward(const NetParams& params, const SynthesisConfig& cfg, const VecX& z,
                     const CameraPose& camera, WCode* w_hair, WCode* w_face, MappingCtx* ctx) {
  if (z.size() != cfg.z_dim) throw ShapeError("latent z has wrong dimension");
  if (!z.allFinite()) throw NumericError("non-finite latent input");
  VecX input(cfg.z_dim + 25);
  input << z, camera.flatten();
  if (!input.allFinite()) throw NumericError("non-finite mapping input");

  MappingCtx local;
  MappingCtx* c = ctx ? ctx : &local;
  c->input = input;
  c->pre.resize(cfg.mapping_layers);
  c->post.resize(cfg.mapping_layers);
  VecX h = input;
  for (int l = 0; l < cfg.mapping_layers; ++l) {
    c->pre[l] = linear_forward(params, "map.trunk" + std::to_string(l), h);
    c->post[l] = c->pre[l].unaryExpr([](double v) { return leaky(v); });
    h = c->post[l];
  }
  w_hair->value = linear_forward(params, "map.head_hair", h);
  w_hair->role = WCode::Role::Hair;
  w_face->value = linear_forward(params, "map.head_face", h);
  w_face->role = WCode::Role::Face;
}

VecX mapping_backward(const NetParams& params, const SynthesisConfig& cfg, const MappingCtx& ctx,
                      const VecX& d_w_hair, const VecX& d_w_face, GradMap* grads) {
  const VecX& top = ctx.post.back();
  VecX dh = linear_backward(params, "map.head_hair", top, d_w_hair, grads) +
            linear_backward(params, "map.head_face", top, d_w_face, grads);
  for (int l = cfg.mapping_layers - 1; l >= 0; --l) {
    VecX d_pre = dh.cwiseProduct(ctx.pre[l].unaryExpr([](double v) { return leaky_grad(v); }));
    const VecX& x = l == 0 ? ctx.input : ctx.post[l - 1];
    dh = linear_backward(params, "map.trunk" + std::to_string(l), x, d_pre, grads);
  }
  return dh.head(cfg.z_dim);
}

VecX geometry_mapping(const NetParams& params, const SynthesisConfig& cfg, const WCode& w_hair,
                      GeomCtx* ctx) {
  if (w_hair.role != WCode::Role::Hair)
    throw UsageError("geometry mapping expects the hair intermediate latent");
  GeomCtx local;
  GeomCtx* c = ctx ? ctx : &local;
  c->input = w_hair.value;
  c->pre = linear_forward(params, "geom.fc0", w_hair.value);
  c->post = c->pre.unaryExpr([](double v) { return leaky(v); });
  return linear_forward(params, "geom.fc1", c->post);
}

VecX geometry_mapping_backward(const NetParams& params, const SynthesisConfig& cfg,
                               const GeomCtx& ctx, const VecX& d_theta, GradMap* grads) {
  (void)cfg;
  VecX dh = linear_backward(params, "geom.fc1", ctx.post, d_theta, grads);
  VecX d_pre = dh.cwiseProduct(ctx.pre.unaryExpr([](double v) { return leaky_grad(v); }));
  return linear_backward(params, "geom.fc0", ctx.input, d_pre, grads);
}

// ---------------------------------------------------------------------------
// cross attention

FeatureMap cross_attention(const NetParams& params, const std::string& prefix,
                           const SynthesisConfig& cfg, const FeatureMap& x, const VecX& w_face,
                           AttnCtx* ctx) {
  if (w_face.size() != cfg.w_dim) throw ShapeError("w_face has wrong dimension");
  const int P = x.height * x.width;
  const int T = cfg.attention_tokens;
  const int D = cfg.attention_dim;
  const int heads = cfg.attention_heads;
  const int dh = D / heads;
  const int dtok = cfg.w_dim / T;

  MatX tok(dtok, T);
  for (int t = 0; t < T; ++t) tok.col(t) = w_face.segment(t * dtok, dtok);

  AttnCtx local;
  AttnCtx* c = ctx ? ctx : &local;
  c->x = x.data;
  c->w_face = w_face;
  c->q = (as_matrix(params.at(prefix + ".q.w")) * x.data).colwise() +
         VecX(params.at(prefix + ".q.b").data);
  c->k = (as_matrix(params.at(prefix + ".k.w")) * tok).colwise() +
         VecX(params.at(prefix + ".k.b").data);
  c->v = (as_matrix(params.at(prefix + ".v.w")) * tok).colwise() +
         VecX(params.at(prefix + ".v.b").data);

  c->attn = MatX(heads * T, P);
  c->out = MatX(D, P);
  const double scale = 1.0 / std::sqrt(double(dh));
  for (int h = 0; h < heads; ++h) {
    const auto qh = c->q.middleRows(h * dh, dh);
    const auto kh = c->k.middleRows(h * dh, dh);
    const auto vh = c->v.middleRows(h * dh, dh);
    MatX scores = scale * (kh.transpose() * qh);  // T x P
    for (int p = 0; p < P; ++p) {
      VecX col = scores.col(p);
      const double m = col.maxCoeff();
      col = (col.array() - m).exp();
      col /= col.sum();
      c->attn.block(h * T, p, T, 1) = col;
      c->out.block(h * dh, p, dh, 1) = vh * col;
    }
  }

  FeatureMap res(x.channels, x.height, x.width);
  res.data = (as_matrix(params.at(prefix + ".o.w")) * c->out).colwise() +
             VecX(params.at(prefix + ".o.b").data);
  return res;
}

void cross_attention_backward(const NetParams& params, const std::string& prefix,
                              const SynthesisConfig& cfg, const AttnCtx& ctx,
                              const FeatureMap& d_res, GradMap* grads, FeatureMap* d_x,
                              VecX* d_w_face) {
  const int P = int(ctx.x.cols());
  const int T = cfg.attention_tokens;
  const int D = cfg.attention_dim;
  const int heads = cfg.attention_heads;
  const int dh = D / heads;
  const int dtok = cfg.w_dim / T;
  const double scale = 1.0 / std::sqrt(double(dh));

  if (grads) {
    MatX dwo = d_res.data * ctx.out.transpose();
    accumulate(grads, prefix + ".o.w", Eigen::Map<VecX>(dwo.data(), dwo.size()),
               params.at(prefix + ".o.w").shape);
    accumulate(grads, prefix + ".o.b", d_res.data.rowwise().sum(),
               params.at(prefix + ".o.b").shape);
  }
  MatX d_out = as_matrix(params.at(prefix + ".o.w")).transpose() * d_res.data;  // D x P

  MatX d_q = MatX::Zero(D, P);
  MatX d_k = MatX::Zero(D, T);
  MatX d_v = MatX::Zero(D, T);
  for (int h = 0; h < heads; ++h) {
    const auto qh = ctx.q.middleRows(h * dh, dh);
    const auto kh = ctx.k.middleRows(h * dh, dh);
    const auto vh = ctx.v.middleRows(h * dh, dh);
    const auto d_out_h = d_out.middleRows(h * dh, dh);

    // dv = d_out_h * A; per pixel the softmax backward feeds dq and dk.
    MatX d_scores(T, P);
    for (int p = 0; p < P; ++p) {
      const VecX a = ctx.attn.block(h * T, p, T, 1);
      const VecX da = vh.transpose() * d_out_h.col(p);
      const double inner = a.dot(da);
      d_scores.col(p) = a.cwiseProduct(da.array().matrix() -
                                       VecX::Constant(T, inner));
      d_v.middleRows(h * dh, dh) += d_out_h.col(p) * a.transpose();
    }
    d_q.middleRows(h * dh, dh) = scale * (kh * d_scores);
    d_k.middleRows(h * dh, dh) = scale * (qh * d_scores.transpose());
  }

  MatX tok(dtok, T);
  for (int t = 0; t < T; ++t) tok.col(t) = ctx.w_face.segment(t * dtok, dtok);

  if (grads) {
    MatX dwq = d_q * ctx.x.transpose();
    accumulate(grads, prefix + ".q.w", Eigen::Map<VecX>(dwq.data(), dwq.size()),
               params.at(prefix + ".q.w").shape);
    accumulate(grads, prefix + ".q.b", d_q.rowwise().sum(), params.at(prefix + ".q.b").shape);
    MatX dwk = d_k * tok.transpose();
    accumulate(grads, prefix + ".k.w", Eigen::Map<VecX>(dwk.data(), dwk.size()),
               params.at(prefix + ".k.w").shape);
    accumulate(grads, prefix + ".k.b", d_k.rowwise().sum(), params.at(prefix + ".k.b").shape);
    MatX dwv = d_v * tok.transpose();
    accumulate(grads, prefix + ".v.w", Eigen::Map<VecX>(dwv.data(), dwv.size()),
               params.at(prefix + ".v.w").shape);
    accumulate(grads, prefix + ".v.b", d_v.rowwise().sum(), params.at(prefix + ".v.b").shape);
  }

  if (d_x) d_x->data += as_matrix(params.at(prefix + ".q.w")).transpose() * d_q;
  if (d_w_face) {
    const MatX d_tok = as_matrix(params.at(prefix + ".k.w")).transpose() * d_k +
                       as_matrix(params.at(prefix + ".v.w")).transpose() * d_v;
    for (int t = 0; t < T; ++t) d_w_face->segment(t * dtok, dtok) += d_tok.col(t);
  }
}

// ---------------------------------------------------------------------------
// synthesis stack

FeatureMap synthesis_forward(const NetParams& params, const std::string& stack,
                             const SynthesisConfig& cfg, const VecX& w, const VecX* w_face,
                             StackCtx* ctx) {
  if (w.size() != cfg.w_dim) throw ShapeError("w has wrong dimension");
  StackCtx local;
  StackCtx* c = ctx ? ctx : &local;
  c->w = w;
  c->blocks.assign(cfg.num_levels(), BlockCtx{});

  const auto& cst = params.at(stack + ".const");
  FeatureMap x(cst.shape[0], cst.shape[1], cst.shape[2]);
  x.data = Eigen::Map<const MatX>(cst.data.data(), cst.shape[0], cst.shape[1] * cst.shape[2]);

  FeatureMap y;
  for (int l = 0; l < cfg.num_levels(); ++l) {
    BlockCtx& bc = c->blocks[l];
    const std::string b = stack + ".b" + std::to_string(l);
    if (l > 0) x = upsample2x(x);
    bc.x_in = x;
    modconv_forward(params, b + ".conv", x, w, &bc.conv_pre, &bc.style);
    bc.x_post = bc.conv_pre;
    bc.x_post.data = bc.conv_pre.data.unaryExpr([](double v) { return leaky(v); });

    bc.has_attn = (stack == "hair") && (w_face != nullptr);
    if (bc.has_attn) {
      const FeatureMap res = cross_attention(params, b + ".attn", cfg, bc.x_post, *w_face, &bc.attn);
      bc.x_out = bc.x_post;
      bc.x_out.data += res.data;
    } else {
      bc.x_out = bc.x_post;
    }

    FeatureMap rgb(cfg.texture_channels, bc.x_out.height, bc.x_out.width);
    rgb.data = (as_matrix(params.at(b + ".torgb.w")) * bc.x_out.data).colwise() +
               VecX(params.at(b + ".torgb.b").data);
    if (l == 0) {
      y = rgb;
    } else {
      y = upsample2x(y);
      y.data += rgb.data;
    }
    x = bc.x_out;
  }
  return y;
}

void synthesis_backward(const NetParams& params, const std::string& stack,
                        const SynthesisConfig& cfg, const StackCtx& ctx, const FeatureMap& d_y,
                        GradMap* grads, VecX* d_w, VecX* d_w_face) {
  const int levels = cfg.num_levels();
  FeatureMap dy = d_y;                       // gradient flowing down the rgb skip chain
  FeatureMap dx(0, 0, 0);                    // gradient on the feature stream
  if (d_w && d_w->size() == 0) *d_w = VecX::Zero(cfg.w_dim);
  if (d_w_face && d_w_face->size() == 0) *d_w_face = VecX::Zero(cfg.w_dim);

  for (int l = levels - 1; l >= 0; --l) {
    const BlockCtx& bc = ctx.blocks[l];
    const std::string b = stack + ".b" + std::to_string(l);

    // ToRGB contribution at this level.
    if (grads) {
      MatX dwt = dy.data * bc.x_out.data.transpose();
      accumulate(grads, b + ".torgb.w", Eigen::Map<VecX>(dwt.data(), dwt.size()),
                 params.at(b + ".torgb.w").shape);
      accumulate(grads, b + ".torgb.b", dy.data.rowwise().sum(),
                 params.at(b + ".torgb.b").shape);
    }
    FeatureMap d_xout(bc.x_out.channels, bc.x_out.height, bc.x_out.width);
    d_xout.data = as_matrix(params.at(b + ".torgb.w")).transpose() * dy.data;
    if (dx.channels > 0) d_xout.data += dx.data;  // from the next block's conv input

    FeatureMap d_xpost = d_xout;
    if (bc.has_attn)
      cross_attention_backward(params, b + ".attn", cfg, bc.attn, d_xout, grads, &d_xpost,
                               d_w_face);

    FeatureMap d_pre = d_xpost;
    d_pre.data = d_xpost.data.cwiseProduct(
        bc.conv_pre.data.unaryExpr([](double v) { return leaky_grad(v); }));

    FeatureMap d_xin;
    modconv_backward(params, b + ".conv", bc.x_in, ctx.w, bc.style, d_pre, grads, &d_xin, d_w);

    if (l > 0) {
      dx = upsample2x_backward(d_xin, ctx.blocks[l - 1].x_out.height,
                               ctx.blocks[l - 1].x_out.width);
      dy = upsample2x_backward(dy, ctx.blocks[l - 1].x_out.height, ctx.blocks[l - 1].x_out.width);
    } else if (grads) {
      accumulate(grads, stack + ".const",
                 Eigen::Map<VecX>(d_xin.data.data(), d_xin.data.size()),
                 params.at(stack + ".const").shape);
    }
  }
}

// ---------------------------------------------------------------------------
// discriminator

FeatureMap image_to_feature(const Image& rgb, const Image& mask) {
  if (rgb.height != mask.height || rgb.width != mask.width)
    throw ShapeError("rgb and mask sizes differ");
  FeatureMap fm(4, rgb.height, rgb.width);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      const int p = y * rgb.width + x;
      for (int ch = 0; ch < 3; ++ch) fm.data(ch, p) = rgb.at(y, x, ch);
      fm.data(3, p) = mask.at(y, x, 0);
    }
  return fm;
}

GaussianTextureMap feature_to_texture(const FeatureMap& fm) {
  if (fm.channels != GaussianTextureMap::kChannels || fm.height != fm.width)
    throw ShapeError("feature map is not a square 14-channel texture");
  GaussianTextureMap tex(fm.height);
  for (int row = 0; row < fm.height; ++row)
    for (int col = 0; col < fm.width; ++col)
      for (int ch = 0; ch < 14; ++ch) tex.at(row, col, ch) = fm.data(ch, row * fm.width + col);
  return tex;
}

FeatureMap texture_grad_to_feature(const GaussianTextureMap& d_tex) {
  FeatureMap fm(GaussianTextureMap::kChannels, d_tex.resolution, d_tex.resolution);
  for (int row = 0; row < d_tex.resolution; ++row)
    for (int col = 0; col < d_tex.resolution; ++col)
      for (int ch = 0; ch < 14; ++ch)
        fm.data(ch, row * d_tex.resolution + col) = d_tex.at(row, col, ch);
  return fm;
}

double r1_penalty(const NetParams& params, const SynthesisConfig& cfg, const Image& rgb,
                  const Image& mask, const CameraPose& camera, double strength, Image* grad_rgb,
                  Image* grad_mask) {
  DiscCtx ctx;
  discriminator_forward(params, cfg, rgb, mask, camera, &ctx);
  Image g_rgb(rgb.height, rgb.width, 3), g_mask(mask.height, mask.width, 1);
  discriminator_backward(params, cfg, ctx, 1.0, nullptr, &g_rgb, &g_mask);
  double norm2 = 0.0;
  for (double v : g_rgb.data) norm2 += v * v;
  for (double v : g_mask.data) norm2 += v * v;
  if (!std::isfinite(norm2)) throw NumericError("non-finite R1 input gradient");
  if (grad_rgb) *grad_rgb = g_rgb;
  if (grad_mask) *grad_mask = g_mask;
  return 0.5 * strength * norm2;
}

double discriminator_forward(const NetParams& params, const SynthesisConfig& cfg, const Image& rgb,
                             const Image& mask, const CameraPose& camera, DiscCtx* ctx) {
  if (rgb.height != cfg.image_resolution || rgb.width != cfg.image_resolution)
    throw ShapeError("discriminator input size does not match the config");
  DiscCtx local;
  DiscCtx* c = ctx ? ctx : &local;
  c->input = image_to_feature(rgb, mask);
  if (!c->input.data.allFinite()) throw NumericError("non-finite discriminator input");

  int depth = 0;
  c->pre.clear();
  c->post.clear();
  {
    FeatureMap pre;
    conv3x3(c->input, params.at("disc.from.w").data.data(), params.at("disc.from.b").data.data(),
            cfg.disc_channels_at(0), 1, &pre);
    c->pre.push_back(pre);
    FeatureMap post = pre;
    post.data = pre.data.unaryExpr([](double v) { return leaky(v); });
    c->post.push_back(post);
  }
  while (c->post.back().height > 4) {
    const std::string b = "disc.b" + std::to_string(depth);
    FeatureMap pre;
    conv3x3(c->post.back(), params.at(b + ".w").data.data(), params.at(b + ".b").data.data(),
            cfg.disc_channels_at(depth + 1), 2, &pre);
    c->pre.push_back(pre);
    FeatureMap post = pre;
    post.data = pre.data.unaryExpr([](double v) { return leaky(v); });
    c->post.push_back(post);
    ++depth;
  }

  const FeatureMap& last = c->post.back();
  c->flat = Eigen::Map<const VecX>(last.data.data(), last.data.size());
  c->fc_pre = linear_forward(params, "disc.fc", c->flat);
  c->fc_post = c->fc_pre.unaryExpr([](double v) { return leaky(v); });

  c->cam_flat = camera.flatten();
  c->cam_embed = as_matrix(params.at("disc.cam.w")) * VecX(c->cam_flat);
  const double proj = c->fc_post.dot(c->cam_embed) / std::sqrt(double(cfg.w_dim));
  const double base = linear_forward(params, "disc.score", c->fc_post)[0];
  return base + proj;
}

void discriminator_backward(const NetParams& params, const SynthesisConfig& cfg,
                            const DiscCtx& ctx, double d_score, GradMap* grads, Image* d_rgb,
                            Image* d_mask) {
  const double inv_sqrt = 1.0 / std::sqrt(double(cfg.w_dim));
  VecX d_fc_post = VecX::Zero(ctx.fc_post.size());

  // score = w . fc_post + b + fc_post . (E cam) / sqrt(w_dim)
  d_fc_post += linear_backward(params, "disc.score", ctx.fc_post,
                               VecX::Constant(1, d_score), grads);
  d_fc_post += d_score * inv_sqrt * ctx.cam_embed;
  if (grads) {
    MatX d_cam_w = (d_score * inv_sqrt * ctx.fc_post) * ctx.cam_flat.transpose();
    accumulate(grads, "disc.cam.w", Eigen::Map<VecX>(d_cam_w.data(), d_cam_w.size()),
               params.at("disc.cam.w").shape);
  }

  VecX d_fc_pre = d_fc_post.cwiseProduct(
      ctx.fc_pre.unaryExpr([](double v) { return leaky_grad(v); }));
  const VecX d_flat = linear_backward(params, "disc.fc", ctx.flat, d_fc_pre, grads);

  const int depth = int(ctx.pre.size()) - 1;
  FeatureMap d_post = ctx.post.back();
  d_post.data = Eigen::Map<const MatX>(d_flat.data(), d_post.channels,
                                       d_post.height * d_post.width);

  for (int l = depth; l >= 0; --l) {
    FeatureMap d_pre = d_post;
    d_pre.data = d_post.data.cwiseProduct(
        ctx.pre[l].data.unaryExpr([](double v) { return leaky_grad(v); }));
    const std::string name = l == 0 ? "disc.from" : "disc.b" + std::to_string(l - 1);
    const FeatureMap& x = l == 0 ? ctx.input : ctx.post[l - 1];
    const auto& wt = params.at(name + ".w");
    VecX dw = VecX::Zero(wt.data.size());
    VecX db = VecX::Zero(wt.shape[0]);
    FeatureMap dx;
    conv3x3_backward(x, wt.data.data(), wt.shape[0], l == 0 ? 1 : 2, d_pre, dw.data(), db.data(),
                     &dx);
    if (grads) {
      accumulate(grads, name + ".w", dw, wt.shape);
      accumulate(grads, name + ".b", db, params.at(name + ".b").shape);
    }
    d_post = dx;
  }

  if (d_rgb || d_mask) {
    for (int y = 0; y < ctx.input.height; ++y)
      for (int x = 0; x < ctx.input.width; ++x) {
        const int p = y * ctx.input.width + x;
        if (d_rgb)
          for (int ch = 0; ch < 3; ++ch) d_rgb->at(y, x, ch) += d_post.data(ch, p);
        if (d_mask) d_mask->at(y, x, 0) += d_post.data(3, p);
      }
  }
}

}  // namespace gshead
