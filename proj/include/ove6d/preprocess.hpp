#pragma once

#include <vector>

#include "ove6d/render.hpp"

namespace ove6d {

inline constexpr int kMinMaskPixels = 50;
/// Crop side = kCropScale * fx * diameter / median depth.
inline constexpr double kCropScale = 1.5;

/// Network-ready square crop of one masked object.
struct Crop {
  int size = 0;
  /// clamp((z - d_c) / diameter, -1, 1) on the object, +1 elsewhere.
  std::vector<float> normalized;
  /// Raw depth in millimeters on the object, 0 elsewhere.
  std::vector<float> depth;
  double median_depth = 0;
  Vec2 center = Vec2::Zero();
  double side_px = 0;
  /// d_c * K^-1 [c_x, c_y, 1]
  Vec3 t_init = Vec3::Zero();

  DepthFrame depth_frame() const;
};

/// Median depth, box center and initial translation of the masked object, then a nearest-neighbour
/// resample of the crop window to size x size.
/// Throws NoObjectError when the mask has fewer than kMinMaskPixels pixels and InvalidDepthError
/// when no masked pixel carries a depth.
Crop preprocess(const DepthFrame& depth, const MaskFrame& mask, double diameter, int size = kCodebookResolution,
                double crop_scale = kCropScale);

struct CenterEstimate {
  double median_depth;
  Vec2 center;
  Vec3 t_init;
};
/// The translation estimator of preprocess() on its own.
CenterEstimate estimate_center(const DepthFrame& depth, const MaskFrame& mask);

}  // namespace ove6d
