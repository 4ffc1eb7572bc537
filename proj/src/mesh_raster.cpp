// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/mesh_raster.hpp"

#include <algorithm>
#include <map>

namespace gshead {

namespace {

constexpr double kNearPlane = 0.01;

double smootherstep(double t) {
  t = clamp(t, 0.0, 1.0);
  return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

double smootherstep_deriv(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  return 30.0 * t * t * (t - 1.0) * (t - 1.0);
}

struct ProjectedPart {
  std::vector<Vec2> px;      // projected vertex positions, pixel space
  std::vector<double> inv_z;
  std::vector<bool> valid;   // in front of the near plane
};

struct SilhouetteSegment {
  int part = 0;
  int va = 0, vb = 0;  // vertex indices within the part
  Vec2 a = Vec2::Zero(), b = Vec2::Zero();
  double inv_za = 0.0, inv_zb = 0.0;
  double side = 1.0;   // sign that makes the inside of the silhouette positive
  double label = 0.0;
};

// Chosen blend at one pixel, kept for the backward pass.
struct EdgeHit {
  int segment = -1;
  double dist = 0.0;     // signed distance, positive inside
  double t_seg = 0.0;    // clamped parameter of the closest point
  double value_behind = 0.0;
  double value_edge = 0.0;
};

struct RasterCache {
  Image hard;                     // labels after the z-buffer pass
  Image hard_depth;               // camera-space depth (inf where empty)
  Image hard_part;                // front-most part index (-1 where empty)
  std::vector<Image> part_depth;  // per-part depth buffers
  std::vector<Image> part_label;  // per-part front label buffers
  std::vector<SilhouetteSegment> segments;
  std::vector<EdgeHit> hits;      // per pixel
};

// Label of the front-most part other than `skip_part` at the pixel, or the
// background value 0 when nothing else covers it.
double value_behind_part(const RasterCache& cache, int skip_part, int y, int x) {
  double best_z = std::numeric_limits<double>::infinity();
  double label = 0.0;
  for (size_t pi = 0; pi < cache.part_depth.size(); ++pi) {
    if (int(pi) == skip_part) continue;
    const double z = cache.part_depth[pi].at(y, x, 0);
    if (z < best_z) {
      best_z = z;
      label = cache.part_label[pi].at(y, x, 0);
    }
  }
  return label;
}

ProjectedPart project_part(const TemplateMesh& mesh, const CameraPose& cam, int img_w, int img_h) {
  ProjectedPart p;
  const int nv = mesh.num_vertices();
  p.px.resize(nv);
  p.inv_z.resize(nv);
  p.valid.resize(nv);
  for (int i = 0; i < nv; ++i) {
    const Vec3 v = cam.project_px(mesh.vertex(i), img_w, img_h);
    p.valid[i] = v.z() > kNearPlane;
    p.px[i] = Vec2(v.x(), v.y());
    p.inv_z[i] = p.valid[i] ? 1.0 / v.z() : 0.0;
  }
  return p;
}

double cross2(const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); }

void rasterize_scene(const LabeledMeshScene& scene, const CameraPose& camera, int img_w, int img_h,
                     double softness, RasterCache* cache) {
  const size_t num_parts = scene.parts.size();
  if (num_parts == 0) throw ConfigError("labeled scene has no mesh parts");
  std::vector<ProjectedPart> proj;
  proj.reserve(num_parts);
  for (const auto& part : scene.parts) proj.push_back(project_part(part, camera, img_w, img_h));

  const double inf = std::numeric_limits<double>::infinity();
  cache->hard = Image(img_h, img_w, 1, 0.0);
  cache->hard_depth = Image(img_h, img_w, 1, inf);
  cache->hard_part = Image(img_h, img_w, 1, -1.0);
  cache->part_depth.assign(num_parts, Image(img_h, img_w, 1, inf));
  cache->part_label.assign(num_parts, Image(img_h, img_w, 1, 0.0));

  // Hard z-buffer pass.
  int live_faces = 0;
  for (size_t pi = 0; pi < num_parts; ++pi) {
    const TemplateMesh& mesh = scene.parts[pi];
    const ProjectedPart& pp = proj[pi];
    for (int f = 0; f < mesh.num_faces(); ++f) {
      const int i0 = mesh.faces(f, 0), i1 = mesh.faces(f, 1), i2 = mesh.faces(f, 2);
      if (!pp.valid[i0] || !pp.valid[i1] || !pp.valid[i2]) continue;
      const Vec2 a = pp.px[i0], b = pp.px[i1], c = pp.px[i2];
      const double area2 = cross2(b - a, c - a);
      if (std::abs(area2) < 1e-12) continue;
      ++live_faces;
      const int x0 = std::max(0, int(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
      const int x1 = std::min(img_w - 1, int(std::ceil(std::max({a.x(), b.x(), c.x()}) + 0.5)));
      const int y0 = std::max(0, int(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
      const int y1 = std::min(img_h - 1, int(std::ceil(std::max({a.y(), b.y(), c.y()}) + 0.5)));
      const double inv_area = 1.0 / area2;
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const Vec2 q(x + 0.5, y + 0.5);
          const double w0 = cross2(b - q, c - q) * inv_area;
          const double w1 = cross2(c - q, a - q) * inv_area;
          const double w2 = cross2(a - q, b - q) * inv_area;
          if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
          const double inv_z = w0 * pp.inv_z[i0] + w1 * pp.inv_z[i1] + w2 * pp.inv_z[i2];
          if (inv_z <= 0.0) continue;
          const double z = 1.0 / inv_z;
          // Constant-label faces interpolate exactly.
          const double l0 = mesh.labels[i0], l1 = mesh.labels[i1], l2 = mesh.labels[i2];
          const double lab = (l0 == l1 && l1 == l2) ? l0 : w0 * l0 + w1 * l1 + w2 * l2;
          if (z < cache->part_depth[pi].at(y, x, 0)) {
            cache->part_depth[pi].at(y, x, 0) = z;
            cache->part_label[pi].at(y, x, 0) = lab;
          }
          if (z < cache->hard_depth.at(y, x, 0)) {
            cache->hard_depth.at(y, x, 0) = z;
            cache->hard.at(y, x, 0) = lab;
            cache->hard_part.at(y, x, 0) = double(pi);
          }
        }
      }
    }
  }
  if (live_faces == 0) throw DataError("all mesh faces are degenerate or behind the camera");

  // Collect silhouette segments: boundary edges plus screen-space orientation
  // flips between adjacent faces.
  cache->segments.clear();
  for (size_t pi = 0; pi < num_parts; ++pi) {
    const TemplateMesh& mesh = scene.parts[pi];
    const ProjectedPart& pp = proj[pi];
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (int f = 0; f < mesh.num_faces(); ++f) {
      for (int k = 0; k < 3; ++k) {
        const int u = mesh.faces(f, k), v = mesh.faces(f, (k + 1) % 3);
        edge_faces[{std::min(u, v), std::max(u, v)}].push_back(f);
      }
    }
    auto face_orientation = [&](int f) {
      const Vec2 a = pp.px[mesh.faces(f, 0)], b = pp.px[mesh.faces(f, 1)],
                 c = pp.px[mesh.faces(f, 2)];
      return cross2(b - a, c - a);
    };
    for (const auto& [edge, faces] : edge_faces) {
      const int va = edge.first, vb = edge.second;
      if (!pp.valid[va] || !pp.valid[vb]) continue;
      bool is_sil = false;
      if (faces.size() == 1) {
        is_sil = true;
      } else if (faces.size() == 2) {
        is_sil = face_orientation(faces[0]) * face_orientation(faces[1]) < 0.0;
      }
      if (!is_sil) continue;

      SilhouetteSegment seg;
      seg.part = int(pi);
      seg.va = va;
      seg.vb = vb;
      seg.a = pp.px[va];
      seg.b = pp.px[vb];
      seg.inv_za = pp.inv_z[va];
      seg.inv_zb = pp.inv_z[vb];
      seg.label = mesh.labels[va];
      // Inside direction from an adjacent face's third vertex.
      seg.side = 0.0;
      for (int f : faces) {
        int third = -1;
        for (int k = 0; k < 3; ++k) {
          const int v = mesh.faces(f, k);
          if (v != va && v != vb) third = v;
        }
        if (third < 0 || !pp.valid[third]) continue;
        const double c = cross2(seg.b - seg.a, pp.px[third] - seg.a);
        if (std::abs(c) > 1e-12) {
          seg.side = c > 0.0 ? 1.0 : -1.0;
          break;
        }
      }
      if (seg.side == 0.0) continue;
      if ((seg.b - seg.a).norm() < 1e-12) continue;
      cache->segments.push_back(seg);
    }
  }

  // Bin segments into tiles expanded by the softness band.
  constexpr int ts = 16;
  const int tiles_x = (img_w + ts - 1) / ts;
  const int tiles_y = (img_h + ts - 1) / ts;
  std::vector<std::vector<int>> tile_segs(size_t(tiles_x) * tiles_y);
  for (size_t si = 0; si < cache->segments.size(); ++si) {
    const auto& s = cache->segments[si];
    const double pad = softness + 1.0;
    const int tx0 = std::max(0, int((std::min(s.a.x(), s.b.x()) - pad) / ts));
    const int tx1 = std::min(tiles_x - 1, int((std::max(s.a.x(), s.b.x()) + pad) / ts));
    const int ty0 = std::max(0, int((std::min(s.a.y(), s.b.y()) - pad) / ts));
    const int ty1 = std::min(tiles_y - 1, int((std::max(s.a.y(), s.b.y()) + pad) / ts));
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx) tile_segs[size_t(ty) * tiles_x + tx].push_back(int(si));
  }

  // Soft edge pass: nearest visible silhouette segment within the band.
  cache->hits.assign(size_t(img_h) * img_w, EdgeHit{});
  for (int y = 0; y < img_h; ++y) {
    for (int x = 0; x < img_w; ++x) {
      const auto& cand = tile_segs[size_t(y / ts) * tiles_x + (x / ts)];
      if (cand.empty()) continue;
      const Vec2 q(x + 0.5, y + 0.5);
      const double hard_z = cache->hard_depth.at(y, x, 0);
      const int hard_part = int(cache->hard_part.at(y, x, 0));
      const bool has_hard = std::isfinite(hard_z);

      EdgeHit best;
      double best_abs = softness;
      for (int si : cand) {
        const auto& s = cache->segments[si];
        const Vec2 e = s.b - s.a;
        const double len2 = e.squaredNorm();
        const double t = clamp((q - s.a).dot(e) / len2, 0.0, 1.0);
        const Vec2 closest = s.a + t * e;
        const double dist_abs = (q - closest).norm();
        if (dist_abs >= best_abs) continue;
        // Occlusion: skip edges well behind the front surface at this pixel.
        // The 2% slack keeps a surface's own silhouette visible where the
        // surface curves toward the camera inside the band.
        const double seg_z = 1.0 / ((1.0 - t) * s.inv_za + t * s.inv_zb);
        if (has_hard && hard_z < seg_z * 0.98) continue;
        const double sgn = s.side * cross2(e, q - s.a) >= 0.0 ? 1.0 : -1.0;
        best.segment = si;
        best.dist = sgn * dist_abs;
        best.t_seg = t;
        best.value_edge = s.label;
        best.value_behind = value_behind_part(*cache, s.part, y, x);
        best_abs = dist_abs;
      }
      cache->hits[size_t(y) * img_w + x] = best;
    }
  }
}

}  // namespace

Image render_mesh_labels(const LabeledMeshScene& scene, const CameraPose& camera, int img_w,
                         int img_h, double softness) {
  if (softness <= 0.0) throw ConfigError("softness must be positive");
  RasterCache cache;
  rasterize_scene(scene, camera, img_w, img_h, softness, &cache);

  Image out = cache.hard;
  for (int y = 0; y < img_h; ++y) {
    for (int x = 0; x < img_w; ++x) {
      const EdgeHit& hit = cache.hits[size_t(y) * img_w + x];
      if (hit.segment < 0) continue;
      const double w = smootherstep((hit.dist + softness) / (2.0 * softness));
      out.at(y, x, 0) = (1.0 - w) * hit.value_behind + w * hit.value_edge;
    }
  }
  return out;
}

std::vector<MatX> render_mesh_labels_backward(const LabeledMeshScene& scene,
                                              const CameraPose& camera, int img_w, int img_h,
                                              double softness, const Image& d_image) {
  if (softness <= 0.0) throw ConfigError("softness must be positive");
  if (d_image.height != img_h || d_image.width != img_w)
    throw ShapeError("upstream gradient image size mismatch");
  RasterCache cache;
  rasterize_scene(scene, camera, img_w, img_h, softness, &cache);

  // Pixel-space gradients on projected segment endpoints.
  std::vector<MatX> d_px(scene.parts.size());
  for (size_t pi = 0; pi < scene.parts.size(); ++pi)
    d_px[pi] = MatX::Zero(scene.parts[pi].num_vertices(), 2);

  for (int y = 0; y < img_h; ++y) {
    for (int x = 0; x < img_w; ++x) {
      const EdgeHit& hit = cache.hits[size_t(y) * img_w + x];
      if (hit.segment < 0) continue;
      const double g = d_image.at(y, x, 0);
      if (g == 0.0) continue;
      const double t_ramp = (hit.dist + softness) / (2.0 * softness);
      const double d_dist =
          g * (hit.value_edge - hit.value_behind) * smootherstep_deriv(t_ramp) / (2.0 * softness);
      if (d_dist == 0.0) continue;

      const SilhouetteSegment& s = cache.segments[hit.segment];
      const Vec2 q(x + 0.5, y + 0.5);
      Vec2 da = Vec2::Zero(), db = Vec2::Zero();
      if (hit.t_seg > 0.0 && hit.t_seg < 1.0) {
        // Signed line distance: dist = side * cross(e, q - a) / |e|.
        const Vec2 e = s.b - s.a;
        const double L = e.norm();
        const double c = cross2(e, q - s.a);
        const Vec2 dc_da(s.b.y() - q.y(), q.x() - s.b.x());
        const Vec2 dc_db(q.y() - s.a.y(), s.a.x() - q.x());
        const Vec2 dL_da = -e / L;
        const Vec2 dL_db = e / L;
        da = s.side * (dc_da * L - c * dL_da) / (L * L);
        db = s.side * (dc_db * L - c * dL_db) / (L * L);
      } else if (hit.t_seg == 0.0) {
        const Vec2 r = q - s.a;
        const double n = r.norm();
        if (n > 1e-12) da = -(hit.dist >= 0.0 ? 1.0 : -1.0) * r / n;
      } else {
        const Vec2 r = q - s.b;
        const double n = r.norm();
        if (n > 1e-12) db = -(hit.dist >= 0.0 ? 1.0 : -1.0) * r / n;
      }
      d_px[s.part].row(s.va) += d_dist * da.transpose();
      d_px[s.part].row(s.vb) += d_dist * db.transpose();
    }
  }

  // Pixel-space endpoint gradients back through the perspective projection.
  std::vector<MatX> d_vertices(scene.parts.size());
  const Mat3 Rcam = camera.rotation();
  const double fx = camera.intrinsic(0, 0) * img_w;
  const double fy = camera.intrinsic(1, 1) * img_h;
  for (size_t pi = 0; pi < scene.parts.size(); ++pi) {
    const TemplateMesh& mesh = scene.parts[pi];
    d_vertices[pi] = MatX::Zero(mesh.num_vertices(), 3);
    for (int v = 0; v < mesh.num_vertices(); ++v) {
      const Vec2 gpx = d_px[pi].row(v).transpose();
      if (gpx.x() == 0.0 && gpx.y() == 0.0) continue;
      const Vec3 pc = Rcam * mesh.vertex(v) + camera.translation();
      const double inv_z = 1.0 / pc.z();
      Vec3 d_pc(fx * inv_z * gpx.x(), fy * inv_z * gpx.y(),
                -fx * pc.x() * inv_z * inv_z * gpx.x() - fy * pc.y() * inv_z * inv_z * gpx.y());
      d_vertices[pi].row(v) = (Rcam.transpose() * d_pc).transpose();
    }
  }
  return d_vertices;
}

}  // namespace gshead
