#pragma once

#include <cstdint>
#include <vector>

#include "ove6d/geometry.hpp"

namespace ove6d {

inline constexpr double kNearClipMm = 1.0;
inline constexpr double kFarClipMm = 10000.0;

/// Canonical codebook render resolution.
inline constexpr int kCodebookResolution = 128;
/// Object diameter spans kCodebookResolution / kCodebookDiameterSpan pixels in a codebook view.
inline constexpr double kCodebookDiameterSpan = 1.5;

/// Metric depth image, millimeters, row-major; 0 marks "no measurement".
struct DepthFrame {
  int width = 0, height = 0;
  std::vector<float> depth;
  CameraIntrinsics intrinsics;

  DepthFrame() = default;
  explicit DepthFrame(const CameraIntrinsics& k)
      : width(k.width), height(k.height), depth(static_cast<std::size_t>(k.width) * k.height, 0.0f), intrinsics(k) {}

  float at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
  float& at(int u, int v) { return depth[static_cast<std::size_t>(v) * width + u]; }
  std::size_t nonzero_count() const;
};

struct MaskFrame {
  int width = 0, height = 0;
  std::vector<std::uint8_t> bits;

  MaskFrame() = default;
  MaskFrame(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
  void set(int u, int v, bool b) { bits[static_cast<std::size_t>(v) * width + u] = b ? 1 : 0; }
  std::size_t count() const;
};

/// Z-buffered rasterization (edge functions, top-left style ownership of shared edges, samples at
/// integer pixel coordinates). Each pixel receives the camera-frame z of the nearest surface.
/// Triangles with a vertex in front of the near plane are skipped; if every vertex is, the call
/// throws EmptyFrameError.
DepthFrame render_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr);

MaskFrame render_mask(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr);

MaskFrame mask_from_depth(const DepthFrame& depth);

/// Per-pixel number of front-facing triangles covering the sample (diagnostics and tests).
std::vector<int> render_front_hit_count(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr);

/// 128x128 intrinsics of a codebook view: the object diameter spans 128/1.5 pixels at distance
/// f_base * diameter.
CameraIntrinsics codebook_intrinsics(double f_base);

/// Camera on the sphere of radius f_base * diameter, looking at the object origin along the
/// viewpoint's optical axis. The principal point is shifted so that the mask bounding box is
/// centered in the image.
DepthFrame render_codebook_view(const TriangleMesh& mesh, const Rotation& viewpoint, double f_base, double diameter);
DepthFrame render_codebook_view(const TriangleMesh& mesh, const Rotation& viewpoint, double f_base = 5.0);

}  // namespace ove6d
