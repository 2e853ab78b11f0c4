#pragma once

#include <filesystem>

#include "ove6d/render.hpp"

namespace ove6d {

/// 16-bit grayscale PNG; stored value = round(depth_mm / depth_scale), saturating at 65535.
/// The sidecar `<file>.json` carries the intrinsics and depth_scale.
void save_depth_png(const DepthFrame& frame, const std::filesystem::path& path, double depth_scale = 1.0);
DepthFrame load_depth_png(const std::filesystem::path& path);

/// A mask is stored as a 16-bit PNG with nonzero = object.
void save_mask_png(const MaskFrame& mask, const std::filesystem::path& path);
MaskFrame load_mask_png(const std::filesystem::path& path);

/// Raw container: "OVDF", u32 width, u32 height, width*height f32 little-endian.
void save_depth_raw(const DepthFrame& frame, const std::filesystem::path& path);
DepthFrame load_depth_raw(const std::filesystem::path& path, const CameraIntrinsics& intr);

/// Intrinsics as a structured-text (JSON) document {fx, fy, px, py, width, height}.
void save_intrinsics(const CameraIntrinsics& k, const std::filesystem::path& path);
CameraIntrinsics load_intrinsics(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& image);

}  // namespace ove6d
