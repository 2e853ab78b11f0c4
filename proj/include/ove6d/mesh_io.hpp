#pragma once

#include <filesystem>

#include "ove6d/geometry.hpp"

namespace ove6d {

/// Reads an OBJ (v/f lines; polygon faces are fan-triangulated) or a binary little-endian PLY
/// holding float/double vertex positions and a face list. The format is chosen by extension.
/// Malformed input throws ParseError carrying the line (OBJ) or byte offset (PLY).
TriangleMesh load_mesh(const std::filesystem::path& path);

/// Writes OBJ or binary little-endian PLY (float32 positions, uint8/int32 face lists).
void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);

}  // namespace ove6d
