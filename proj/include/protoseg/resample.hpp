#pragma once

#include <span>
#include <vector>

#include "protoseg/types.hpp"

namespace protoseg {

/// Bilinear resize of a single-channel row-major grid.
///
/// Sample positions use half-pixel centres: destination index i maps to source
/// coordinate (i + 0.5) * in / out - 0.5, clamped to the valid range. Every
/// output value is a convex combination of at most four inputs.
std::vector<double> resize_bilinear(std::span<const double> src, ImageSize from, ImageSize to);

/// Nearest-neighbour label resize using the same half-pixel centre mapping.
ClassMask resize_nearest(const ClassMask& mask, ImageSize to);

}  // namespace protoseg
