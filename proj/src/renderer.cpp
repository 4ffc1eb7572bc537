// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/renderer.hpp"

#include <algorithm>
#include <numeric>

namespace gshead {

namespace {

// exp(-q/2) underflows to exactly 0.0 beyond this, so skipping is bitwise
// neutral in both renderers.
constexpr double kQSkip = 1600.0;

Mat3 quat_to_rot(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

struct PixelContrib {
  int splat = 0;  // index into the sorted splat array
  double alpha = 0.0;
  double t_before = 0.0;
  double dx = 0.0;
  double dy = 0.0;
};

std::vector<Splat2D> prepare_splats(const GaussianSet& set, const CameraPose& camera, int img_w,
                                    int img_h, const RenderOptions& opts) {
  std::vector<Splat2D> splats;
  splats.reserve(set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    auto s = project_gaussian(set.gaussians[i], camera, img_w, img_h, opts);
    if (!s) continue;
    s->index = static_cast<int>(i);
    splats.push_back(*s);
  }
  std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
    return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
  });
  return splats;
}

struct TileGrid {
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<int>> lists;  // per tile, sorted-splat indices in depth order
};

TileGrid bin_splats(const std::vector<Splat2D>& splats, int img_w, int img_h,
                    const RenderOptions& opts) {
  TileGrid grid;
  const int ts = RenderOptions::tile_size;
  grid.tiles_x = (img_w + ts - 1) / ts;
  grid.tiles_y = (img_h + ts - 1) / ts;
  grid.lists.assign(static_cast<size_t>(grid.tiles_x) * grid.tiles_y, {});
  for (size_t si = 0; si < splats.size(); ++si) {
    const Splat2D& s = splats[si];
    const double r = s.radius3 * (opts.support_sigma / 3.0);
    const int tx0 = std::max(0, static_cast<int>(std::floor((s.mean.x() - r) / ts)));
    const int tx1 = std::min(grid.tiles_x - 1, static_cast<int>(std::floor((s.mean.x() + r) / ts)));
    const int ty0 = std::max(0, static_cast<int>(std::floor((s.mean.y() - r) / ts)));
    const int ty1 = std::min(grid.tiles_y - 1, static_cast<int>(std::floor((s.mean.y() + r) / ts)));
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        grid.lists[static_cast<size_t>(ty) * grid.tiles_x + tx].push_back(static_cast<int>(si));
  }
  return grid;
}

RenderOutput make_output(int img_w, int img_h) {
  RenderOutput out;
  out.rgb = Image(img_h, img_w, 3);
  out.mask = Image(img_h, img_w, 1);
  out.seg = Image(img_h, img_w, 3);
  out.transmittance = Image(img_h, img_w, 1);
  return out;
}

// Front-to-back compositing of one pixel over a splat index list. Returns the
// final transmittance; optionally records per-splat contributions for the
// backward pass.
template <typename List>
double composite_pixel(const std::vector<Splat2D>& splats, const List& list, double px, double py,
                       double t_threshold, double alpha_clamp, Vec3* rgb, Vec3* seg,
                       std::vector<PixelContrib>* contribs) {
  double T = 1.0;
  for (int si : list) {
    const Splat2D& s = splats[si];
    const double dx = px - s.mean.x();
    const double dy = py - s.mean.y();
    const double q = s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy +
                     s.conic(1, 1) * dy * dy;
    if (q > kQSkip) continue;
    double alpha = s.opacity * std::exp(-0.5 * q);
    if (alpha > alpha_clamp) alpha = alpha_clamp;
    const double w = T * alpha;
    *rgb += w * s.color;
    *seg += w * s.label;
    if (contribs) contribs->push_back({si, alpha, T, dx, dy});
    T -= w;
    if (T < t_threshold) break;
  }
  return T;
}

struct AllIndices {
  int n;
  struct Iter {
    int i;
    int operator*() const { return i; }
    Iter& operator++() { ++i; return *this; }
    bool operator!=(const Iter& o) const { return i != o.i; }
  };
  Iter begin() const { return {0}; }
  Iter end() const { return {n}; }
};

void check_upstream(const RenderGrads& upstream) {
  for (const Image* img : {upstream.d_rgb, upstream.d_mask, upstream.d_seg}) {
    if (img && !all_finite(img->data)) throw NumericError("non-finite upstream gradient image");
  }
}

}  // namespace

std::optional<Splat2D> project_gaussian(const GaussianPrimitive& g, const CameraPose& camera,
                                        int img_w, int img_h, const RenderOptions& opts) {
  const Mat3 Rcam = camera.rotation();
  const Vec3 pc = Rcam * g.position + camera.translation();
  if (pc.z() <= opts.near_plane) return std::nullopt;

  const double fx = camera.intrinsic(0, 0) * img_w;
  const double fy = camera.intrinsic(1, 1) * img_h;
  const double cx = camera.intrinsic(0, 2) * img_w;
  const double cy = camera.intrinsic(1, 2) * img_h;
  const double inv_z = 1.0 / pc.z();

  Splat2D s;
  s.mean = Vec2(fx * pc.x() * inv_z + cx, fy * pc.y() * inv_z + cy);
  s.depth = pc.z();

  const Vec4 qu = g.rotation / g.rotation.norm();
  const Mat3 M = quat_to_rot(qu) * g.scale.asDiagonal();
  const Mat3 sigma = M * M.transpose();

  Eigen::Matrix<double, 2, 3> J;
  J << fx * inv_z, 0.0, -fx * pc.x() * inv_z * inv_z,
      0.0, fy * inv_z, -fy * pc.y() * inv_z * inv_z;
  const Eigen::Matrix<double, 2, 3> A = J * Rcam;
  s.cov2d = A * sigma * A.transpose();
  s.cov2d(0, 0) += 0.3;
  s.cov2d(1, 1) += 0.3;

  const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
  const double det = s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(0, 1);
  const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
  s.radius3 = 3.0 * std::sqrt(lambda_max);

  if (s.mean.x() + s.radius3 < 0.0 || s.mean.x() - s.radius3 > img_w ||
      s.mean.y() + s.radius3 < 0.0 || s.mean.y() - s.radius3 > img_h)
    return std::nullopt;

  s.conic = s.cov2d.inverse();
  s.color = g.color;
  s.label = g.label;
  s.opacity = g.opacity;
  return s;
}

RenderOutput render(const GaussianSet& set, const CameraPose& camera, int img_w, int img_h,
                    const Vec3& background_rgb, const RenderOptions& opts) {
  const std::vector<Splat2D> splats = prepare_splats(set, camera, img_w, img_h, opts);
  const TileGrid grid = bin_splats(splats, img_w, img_h, opts);
  RenderOutput out = make_output(img_w, img_h);

  const int ts = RenderOptions::tile_size;
  for (int ty = 0; ty < grid.tiles_y; ++ty) {
    for (int tx = 0; tx < grid.tiles_x; ++tx) {
      const auto& list = grid.lists[static_cast<size_t>(ty) * grid.tiles_x + tx];
      const int y1 = std::min(img_h, (ty + 1) * ts);
      const int x1 = std::min(img_w, (tx + 1) * ts);
      for (int y = ty * ts; y < y1; ++y) {
        for (int x = tx * ts; x < x1; ++x) {
          Vec3 rgb = Vec3::Zero(), seg = Vec3::Zero();
          const double T = composite_pixel(splats, list, x + 0.5, y + 0.5, opts.t_threshold,
                                           opts.alpha_clamp, &rgb, &seg, nullptr);
          rgb += T * background_rgb;
          seg[0] += T;
          for (int c = 0; c < 3; ++c) {
            out.rgb.at(y, x, c) = rgb[c];
            out.seg.at(y, x, c) = seg[c];
          }
          out.mask.at(y, x, 0) = 1.0 - T;
          out.transmittance.at(y, x, 0) = T;
        }
      }
    }
  }
  return out;
}

RenderOutput reference_render(const GaussianSet& set, const CameraPose& camera, int img_w,
                              int img_h, const Vec3& background_rgb, const RenderOptions& opts) {
  const std::vector<Splat2D> splats = prepare_splats(set, camera, img_w, img_h, opts);
  RenderOutput out = make_output(img_w, img_h);
  const AllIndices all{static_cast<int>(splats.size())};

  for (int y = 0; y < img_h; ++y) {
    for (int x = 0; x < img_w; ++x) {
      Vec3 rgb = Vec3::Zero(), seg = Vec3::Zero();
      const double T =
          composite_pixel(splats, all, x + 0.5, y + 0.5, 0.0, opts.alpha_clamp, &rgb, &seg, nullptr);
      rgb += T * background_rgb;
      seg[0] += T;
      for (int c = 0; c < 3; ++c) {
        out.rgb.at(y, x, c) = rgb[c];
        out.seg.at(y, x, c) = seg[c];
      }
      out.mask.at(y, x, 0) = 1.0 - T;
      out.transmittance.at(y, x, 0) = T;
    }
  }
  return out;
}

SetGrads render_backward(const GaussianSet& set, const CameraPose& camera, int img_w, int img_h,
                         const Vec3& background_rgb, const RenderGrads& upstream,
                         const RenderOptions& opts) {
  check_upstream(upstream);
  const std::vector<Splat2D> splats = prepare_splats(set, camera, img_w, img_h, opts);
  const TileGrid grid = bin_splats(splats, img_w, img_h, opts);

  const size_t n = splats.size();
  std::vector<Vec2> d_mean(n, Vec2::Zero());
  std::vector<Vec3> d_conic(n, Vec3::Zero());  // (d_a, d_b, d_c) of conic [[a,b],[b,c]]
  std::vector<double> d_opacity(n, 0.0);
  std::vector<Vec3> d_color(n, Vec3::Zero());
  std::vector<Vec3> d_label(n, Vec3::Zero());

  std::vector<PixelContrib> contribs;
  contribs.reserve(256);

  const int ts = RenderOptions::tile_size;
  for (int ty = 0; ty < grid.tiles_y; ++ty) {
    for (int tx = 0; tx < grid.tiles_x; ++tx) {
      const auto& list = grid.lists[static_cast<size_t>(ty) * grid.tiles_x + tx];
      const int y1 = std::min(img_h, (ty + 1) * ts);
      const int x1 = std::min(img_w, (tx + 1) * ts);
      for (int y = ty * ts; y < y1; ++y) {
        for (int x = tx * ts; x < x1; ++x) {
          contribs.clear();
          Vec3 rgb = Vec3::Zero(), seg = Vec3::Zero();
          const double t_final = composite_pixel(splats, list, x + 0.5, y + 0.5, opts.t_threshold,
                                                 opts.alpha_clamp, &rgb, &seg, &contribs);
          if (contribs.empty()) continue;

          Vec3 g_rgb = Vec3::Zero(), g_seg = Vec3::Zero();
          double g_mask = 0.0;
          if (upstream.d_rgb)
            for (int c = 0; c < 3; ++c) g_rgb[c] = upstream.d_rgb->at(y, x, c);
          if (upstream.d_seg)
            for (int c = 0; c < 3; ++c) g_seg[c] = upstream.d_seg->at(y, x, c);
          if (upstream.d_mask) g_mask = upstream.d_mask->at(y, x, 0);

          // Suffix accumulators: everything composited behind the current splat.
          Vec3 s_rgb = t_final * background_rgb;
          Vec3 s_seg = Vec3(t_final, 0.0, 0.0);
          for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
            const Splat2D& s = splats[it->splat];
            const double alpha = it->alpha;
            const double T = it->t_before;
            const double w = T * alpha;
            const double inv_om = 1.0 / (1.0 - alpha);

            d_color[it->splat] += w * g_rgb;
            d_label[it->splat] += w * g_seg;

            double d_alpha = g_mask * t_final * inv_om;
            for (int c = 0; c < 3; ++c) {
              d_alpha += g_rgb[c] * (T * s.color[c] - s_rgb[c] * inv_om);
              d_alpha += g_seg[c] * (T * s.label[c] - s_seg[c] * inv_om);
            }

            const double gexp = std::exp(
                -0.5 * (s.conic(0, 0) * it->dx * it->dx + 2.0 * s.conic(0, 1) * it->dx * it->dy +
                        s.conic(1, 1) * it->dy * it->dy));
            if (s.opacity * gexp <= opts.alpha_clamp) {  // clamped alphas carry no gradient
              d_opacity[it->splat] += d_alpha * gexp;
              const double dq = -0.5 * alpha * d_alpha;
              const double ddx = dq * 2.0 * (s.conic(0, 0) * it->dx + s.conic(0, 1) * it->dy);
              const double ddy = dq * 2.0 * (s.conic(0, 1) * it->dx + s.conic(1, 1) * it->dy);
              d_mean[it->splat] -= Vec2(ddx, ddy);
              d_conic[it->splat] +=
                  Vec3(dq * it->dx * it->dx, dq * 2.0 * it->dx * it->dy, dq * it->dy * it->dy);
            }

            s_rgb += w * s.color;
            s_seg += w * s.label;
          }
        }
      }
    }
  }

  // Map image-space gradients back to 3D Gaussian parameters.
  SetGrads grads(set.size());
  const Mat3 Rcam = camera.rotation();
  const double fx = camera.intrinsic(0, 0) * img_w;
  const double fy = camera.intrinsic(1, 1) * img_h;

  for (size_t si = 0; si < n; ++si) {
    const Splat2D& s = splats[si];
    const int gi = s.index;
    const GaussianPrimitive& g = set.gaussians[gi];

    grads.d_color[gi] += d_color[si];
    grads.d_label[gi] += d_label[si];
    grads.d_opacity[gi] += d_opacity[si];

    // conic -> cov2d
    Mat2 dQ;
    dQ << d_conic[si][0], 0.5 * d_conic[si][1], 0.5 * d_conic[si][1], d_conic[si][2];
    const Mat2 dC = -(s.conic * dQ * s.conic);

    const Vec3 pc = Rcam * g.position + camera.translation();
    const double inv_z = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> J;
    J << fx * inv_z, 0.0, -fx * pc.x() * inv_z * inv_z,
        0.0, fy * inv_z, -fy * pc.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> A = J * Rcam;

    const double qnorm = g.rotation.norm();
    const Vec4 qu = g.rotation / qnorm;
    const Mat3 Rq = quat_to_rot(qu);
    const Mat3 M = Rq * g.scale.asDiagonal();
    const Mat3 sigma = M * M.transpose();

    const Mat3 d_sigma = A.transpose() * dC * A;
    const Eigen::Matrix<double, 2, 3> dA = 2.0 * dC * A * sigma;
    const Eigen::Matrix<double, 2, 3> dJ = dA * Rcam.transpose();

    Vec3 d_pc = Vec3::Zero();
    d_pc.x() += d_mean[si].x() * fx * inv_z;
    d_pc.y() += d_mean[si].y() * fy * inv_z;
    d_pc.z() += d_mean[si].x() * (-fx * pc.x() * inv_z * inv_z) +
                d_mean[si].y() * (-fy * pc.y() * inv_z * inv_z);
    d_pc.x() += dJ(0, 2) * (-fx * inv_z * inv_z);
    d_pc.y() += dJ(1, 2) * (-fy * inv_z * inv_z);
    d_pc.z() += dJ(0, 0) * (-fx * inv_z * inv_z) + dJ(1, 1) * (-fy * inv_z * inv_z) +
                dJ(0, 2) * (2.0 * fx * pc.x() * inv_z * inv_z * inv_z) +
                dJ(1, 2) * (2.0 * fy * pc.y() * inv_z * inv_z * inv_z);
    grads.d_position[gi] += Rcam.transpose() * d_pc;

    const Mat3 dM = 2.0 * d_sigma * M;
    Vec3 d_scale;
    Mat3 dRq;
    for (int k = 0; k < 3; ++k) {
      d_scale[k] = Rq.col(k).dot(dM.col(k));
      dRq.col(k) = g.scale[k] * dM.col(k);
    }
    grads.d_scale[gi] += d_scale;

    const double w = qu[0], qx = qu[1], qy = qu[2], qz = qu[3];
    Mat3 dRdw, dRdx, dRdy, dRdz;
    dRdw << 0, -qz, qy, qz, 0, -qx, -qy, qx, 0;
    dRdx << 0, qy, qz, qy, -2 * qx, -w, qz, w, -2 * qx;
    dRdy << -2 * qy, qx, w, qx, 0, qz, -w, qz, -2 * qy;
    dRdz << -2 * qz, -w, qx, w, -2 * qz, qy, qx, qy, 0;
    Vec4 dq_unit(2.0 * dRq.cwiseProduct(dRdw).sum(), 2.0 * dRq.cwiseProduct(dRdx).sum(),
                 2.0 * dRq.cwiseProduct(dRdy).sum(), 2.0 * dRq.cwiseProduct(dRdz).sum());
    grads.d_rotation[gi] += (dq_unit - qu * qu.dot(dq_unit)) / qnorm;
  }
  return grads;
}

}  // namespace gshead
