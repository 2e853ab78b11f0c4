#include "ove6d/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "ove6d/error.hpp"

namespace ove6d {

DepthFrame Crop::depth_frame() const {
  CameraIntrinsics k;
  k.width = k.height = size;
  k.fx = k.fy = 1;
  k.px = k.py = (size - 1) / 2.0;
  DepthFrame f(k);
  f.depth = depth;
  return f;
}

CenterEstimate estimate_center(const DepthFrame& depth, const MaskFrame& mask) {
  if (mask.width != depth.width || mask.height != depth.height) throw InvalidArgument("mask and depth sizes differ");
  std::size_t count = 0;
  int umin = depth.width, umax = -1, vmin = depth.height, vmax = -1;
  std::vector<float> values;
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      if (!mask.at(u, v)) continue;
      ++count;
      umin = std::min(umin, u), umax = std::max(umax, u);
      vmin = std::min(vmin, v), vmax = std::max(vmax, v);
      const float z = depth.at(u, v);
      if (z > 0 && std::isfinite(z)) values.push_back(z);
    }
  if (count < static_cast<std::size_t>(kMinMaskPixels))
    throw NoObjectError("mask has " + std::to_string(count) + " pixels, fewer than " + std::to_string(kMinMaskPixels));
  if (values.empty()) throw InvalidDepthError("no valid depth under the mask");
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double dc = *mid;
  const Vec2 c(0.5 * (umin + umax), 0.5 * (vmin + vmax));
  return {dc, c, depth.intrinsics.back_project(c.x(), c.y(), dc)};
}

Crop preprocess(const DepthFrame& depth, const MaskFrame& mask, double diameter, int size, double crop_scale) {
  if (!(diameter > 0)) throw InvalidArgument("diameter must be positive");
  if (size < 1) throw InvalidArgument("crop size must be positive");
  const CenterEstimate ce = estimate_center(depth, mask);
  Crop c;
  c.size = size;
  c.median_depth = ce.median_depth;
  c.center = ce.center;
  c.t_init = ce.t_init;
  c.side_px = crop_scale * depth.intrinsics.fx * diameter / ce.median_depth;
  c.normalized.assign(static_cast<std::size_t>(size) * size, 1.0f);
  c.depth.assign(static_cast<std::size_t>(size) * size, 0.0f);
  const double step = c.side_px / size;
  const double half = (size - 1) / 2.0;
  for (int j = 0; j < size; ++j) {
    const int v = static_cast<int>(std::lround(c.center.y() + (j - half) * step));
    if (v < 0 || v >= depth.height) continue;
    for (int i = 0; i < size; ++i) {
      const int u = static_cast<int>(std::lround(c.center.x() + (i - half) * step));
      if (u < 0 || u >= depth.width || !mask.at(u, v)) continue;
      const float z = depth.at(u, v);
      if (!(z > 0) || !std::isfinite(z)) continue;
      const std::size_t k = static_cast<std::size_t>(j) * size + i;
      c.depth[k] = z;
      c.normalized[k] = static_cast<float>(std::clamp((z - ce.median_depth) / diameter, -1.0, 1.0));
    }
  }
  return c;
}

}  // namespace ove6d
