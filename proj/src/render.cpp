#include "ove6d/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ove6d/error.hpp"

namespace ove6d {

std::size_t DepthFrame::nonzero_count() const {
  return static_cast<std::size_t>(std::count_if(depth.begin(), depth.end(), [](float d) { return d > 0; }));
}

std::size_t MaskFrame::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

namespace {

struct ScreenVertex {
  double x, y, inv_z;
  Vec3 cam;
};

// Ownership of pixels lying exactly on an edge: an edge owns them when it points "down" or
// horizontally "left". Adjacent triangles traverse a shared edge in opposite directions, so
// exactly one of them owns the sample.
bool owns_edge(double dx, double dy) { return dy > 0 || (dy == 0 && dx < 0); }

template <typename Fn>
void rasterize(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr, Fn&& on_sample) {
  intr.validate();
  std::vector<ScreenVertex> sv(mesh.vertices.size());
  bool any_in_front = false;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 c = pose.apply(mesh.vertices[i]);
    sv[i].cam = c;
    if (c.z() > kNearClipMm) {
      any_in_front = true;
      sv[i].x = intr.fx * c.x() / c.z() + intr.px;
      sv[i].y = intr.fy * c.y() / c.z() + intr.py;
      sv[i].inv_z = 1.0 / c.z();
    }
  }
  if (!any_in_front) throw EmptyFrameError("object is entirely behind the camera");

  for (const auto& f : mesh.faces) {
    const ScreenVertex* v[3] = {&sv[f[0]], &sv[f[1]], &sv[f[2]]};
    if (v[0]->cam.z() <= kNearClipMm || v[1]->cam.z() <= kNearClipMm || v[2]->cam.z() <= kNearClipMm) continue;
    const Vec3 normal = (v[1]->cam - v[0]->cam).cross(v[2]->cam - v[0]->cam);
    const bool front = normal.dot(v[0]->cam) < 0;

    double area = (v[1]->x - v[0]->x) * (v[2]->y - v[0]->y) - (v[1]->y - v[0]->y) * (v[2]->x - v[0]->x);
    if (area == 0) continue;
    if (area < 0) {
      std::swap(v[1], v[2]);
      area = -area;
    }
    const double min_x = std::min({v[0]->x, v[1]->x, v[2]->x});
    const double max_x = std::max({v[0]->x, v[1]->x, v[2]->x});
    const double min_y = std::min({v[0]->y, v[1]->y, v[2]->y});
    const double max_y = std::max({v[0]->y, v[1]->y, v[2]->y});
    const int u0 = std::max(0, static_cast<int>(std::ceil(min_x)));
    const int u1 = std::min(intr.width - 1, static_cast<int>(std::floor(max_x)));
    const int w0 = std::max(0, static_cast<int>(std::ceil(min_y)));
    const int w1 = std::min(intr.height - 1, static_cast<int>(std::floor(max_y)));
    if (u0 > u1 || w0 > w1) continue;

    // Edge i is opposite vertex i.
    double ex[3], ey[3];
    bool own[3];
    for (int e = 0; e < 3; ++e) {
      const ScreenVertex* a = v[(e + 1) % 3];
      const ScreenVertex* b = v[(e + 2) % 3];
      ex[e] = b->x - a->x;
      ey[e] = b->y - a->y;
      own[e] = owns_edge(ex[e], ey[e]);
    }
    for (int py = w0; py <= w1; ++py) {
      for (int px = u0; px <= u1; ++px) {
        double w[3];
        bool inside = true;
        for (int e = 0; e < 3 && inside; ++e) {
          const ScreenVertex* a = v[(e + 1) % 3];
          w[e] = ex[e] * (py - a->y) - ey[e] * (px - a->x);
          inside = w[e] > 0 || (w[e] == 0 && own[e]);
        }
        if (!inside) continue;
        const double inv_z = (w[0] * v[0]->inv_z + w[1] * v[1]->inv_z + w[2] * v[2]->inv_z) / area;
        const double z = 1.0 / inv_z;
        if (z <= kNearClipMm || z >= kFarClipMm) continue;
        on_sample(px, py, z, front);
      }
    }
  }
}

}  // namespace

DepthFrame render_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr) {
  DepthFrame frame(intr);
  std::vector<double> zbuf(frame.depth.size(), std::numeric_limits<double>::infinity());
  rasterize(mesh, pose, intr, [&](int u, int v, double z, bool) {
    const std::size_t idx = static_cast<std::size_t>(v) * intr.width + u;
    if (z < zbuf[idx]) zbuf[idx] = z;
  });
  for (std::size_t i = 0; i < zbuf.size(); ++i)
    if (std::isfinite(zbuf[i])) frame.depth[i] = static_cast<float>(zbuf[i]);
  return frame;
}

MaskFrame mask_from_depth(const DepthFrame& depth) {
  MaskFrame m(depth.width, depth.height);
  for (std::size_t i = 0; i < depth.depth.size(); ++i) m.bits[i] = depth.depth[i] > 0 ? 1 : 0;
  return m;
}

MaskFrame render_mask(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr) {
  return mask_from_depth(render_depth(mesh, pose, intr));
}

std::vector<int> render_front_hit_count(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr) {
  std::vector<int> hits(static_cast<std::size_t>(intr.width) * intr.height, 0);
  rasterize(mesh, pose, intr, [&](int u, int v, double, bool front) {
    if (front) ++hits[static_cast<std::size_t>(v) * intr.width + u];
  });
  return hits;
}

CameraIntrinsics codebook_intrinsics(double f_base) {
  if (!(f_base > 0)) throw InvalidArgument("f_base must be positive");
  CameraIntrinsics k;
  k.width = k.height = kCodebookResolution;
  k.fx = k.fy = kCodebookResolution * f_base / kCodebookDiameterSpan;
  k.px = k.py = (kCodebookResolution - 1) / 2.0;
  return k;
}

DepthFrame render_codebook_view(const TriangleMesh& mesh, const Rotation& viewpoint, double f_base, double diameter) {
  if (!(diameter > 0)) throw InvalidArgument("diameter must be positive");
  CameraIntrinsics k = codebook_intrinsics(f_base);
  const Pose pose{viewpoint, Vec3(0, 0, f_base * diameter)};
  DepthFrame first = render_depth(mesh, pose, k);
  int umin = k.width, umax = -1, vmin = k.height, vmax = -1;
  for (int v = 0; v < first.height; ++v)
    for (int u = 0; u < first.width; ++u)
      if (first.at(u, v) > 0) {
        umin = std::min(umin, u), umax = std::max(umax, u);
        vmin = std::min(vmin, v), vmax = std::max(vmax, v);
      }
  if (umax < 0) throw EmptyFrameError("codebook view is empty");
  const double center = (kCodebookResolution - 1) / 2.0;
  k.px += center - 0.5 * (umin + umax);
  k.py += center - 0.5 * (vmin + vmax);
  return render_depth(mesh, pose, k);
}

DepthFrame render_codebook_view(const TriangleMesh& mesh, const Rotation& viewpoint, double f_base) {
  return render_codebook_view(mesh, viewpoint, f_base, mesh_diameter(mesh));
}

}  // namespace ove6d
