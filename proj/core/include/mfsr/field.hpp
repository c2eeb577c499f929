#pragma once

#include <array>
#include <string>
#include <vector>

#include "mfsr/tensor.hpp"

namespace mfsr {

// Channel order for flow fields is fixed: pressure, temperature, horizontal
// velocity, vertical velocity.
inline constexpr int kChanP = 0;
inline constexpr int kChanT = 1;
inline constexpr int kChanU = 2;
inline constexpr int kChanW = 3;

const std::vector<std::string>& flow_channels();  // {"p","T","u","w"}

// Coordinate axes used throughout: 0 = t, 1 = z, 2 = x.
inline constexpr int kAxisT = 0;
inline constexpr int kAxisZ = 1;
inline constexpr int kAxisX = 2;

// A multi-channel space-time block on a regular grid: data [C, T, Z, X] with
// physical spacing and origin per coordinate axis, so index (it, iz, ix) sits
// at origin[a] + i*spacing[a]. `normalized` marks per-channel standardized
// values (see dataset.hpp); physical and normalized fields must not mix.
struct Field4 {
  std::vector<std::string> channels;
  ad::Tensor data;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  bool normalized = false;

  int n_channels() const { return data.extent(0); }
  int extent(int axis) const { return data.extent(axis + 1); }
  double coord(int axis, int idx) const {
    return origin[static_cast<std::size_t>(axis)] +
           idx * spacing[static_cast<std::size_t>(axis)];
  }
  std::array<double, 3> bbox_lo() const { return origin; }
  std::array<double, 3> bbox_hi() const {
    return {coord(0, extent(0) - 1), coord(1, extent(1) - 1), coord(2, extent(2) - 1)};
  }

  int channel_index(const std::string& name) const;  // throws if missing

  double at(int c, int it, int iz, int ix) const {
    return data.data()[((static_cast<std::ptrdiff_t>(c) * extent(0) + it) * extent(1) + iz) *
                           extent(2) +
                       ix];
  }
  double& at(int c, int it, int iz, int ix) {
    return data.data()[((static_cast<std::ptrdiff_t>(c) * extent(0) + it) * extent(1) + iz) *
                           extent(2) +
                       ix];
  }
};

// Zero-filled flow field with the standard four channels.
Field4 make_flow_field(int nt, int nz, int nx, std::array<double, 3> spacing,
                       std::array<double, 3> origin);

// Contiguous sub-block by start index and extent per (t, z, x) axis. Copies
// the data; spacing kept, origin shifted to the crop's first node.
Field4 crop_window(const Field4& f, std::array<int, 3> start, std::array<int, 3> extents);

// Cell lookup on one axis with clamp-to-last-interior-cell semantics: points
// on the upper boundary land in the final cell with frac 1. A small relative
// tolerance absorbs round-off from coordinate arithmetic; genuinely outside
// points throw.
struct CellLocation {
  int cell;     // lower-vertex index, in [0, extent-2]
  double frac;  // within-cell offset in [0, 1]
};
CellLocation locate_cell(double coord, double origin, double spacing, int extent);

// Plain-valued multilinear interpolation of one channel at a physical point.
double sample_trilinear(const Field4& f, int channel, double t, double z, double x);

}  // namespace mfsr
