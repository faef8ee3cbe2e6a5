#pragma once

#include <filesystem>

#include "roomtwin/geometry.hpp"

namespace roomtwin::ply {

// ASCII or binary_little_endian PLY with `vertex` (x, y, z, optional
// red/green/blue) and `face` (vertex_indices list, optional red/green/blue).
// Polygons are fan-triangulated. Face colors take precedence; otherwise a
// face gets the mean of its vertex colors. uchar colors are scaled to [0, 1].
// Throws FormatError on malformed input.
TriMesh read(const std::filesystem::path& path);

// ASCII PLY with per-face uchar colors.
void write(const std::filesystem::path& path, const TriMesh& mesh);

}  // namespace roomtwin::ply
