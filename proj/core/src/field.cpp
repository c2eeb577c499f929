#include "mfsr/field.hpp"

#include <cmath>
#include <stdexcept>

namespace mfsr {

const std::vector<std::string>& flow_channels() {
  static const std::vector<std::string> names = {"p", "T", "u", "w"};
  return names;
}

int Field4::channel_index(const std::string& name) const {
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("Field4: no channel named '" + name + "'");
}

Field4 make_flow_field(int nt, int nz, int nx, std::array<double, 3> spacing,
                       std::array<double, 3> origin) {
  Field4 f;
  f.channels = flow_channels();
  f.data = ad::Tensor({4, nt, nz, nx});
  f.spacing = spacing;
  f.origin = origin;
  return f;
}

Field4 crop_window(const Field4& f, std::array<int, 3> start, std::array<int, 3> extents) {
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<std::size_t>(a);
    if (extents[ai] < 1 || start[ai] < 0 || start[ai] + extents[ai] > f.extent(a)) {
      throw std::invalid_argument("crop_window: window exceeds field extents");
    }
  }
  Field4 out;
  out.channels = f.channels;
  out.spacing = f.spacing;
  out.normalized = f.normalized;
  for (int a = 0; a < 3; ++a) {
    out.origin[static_cast<std::size_t>(a)] = f.coord(a, start[static_cast<std::size_t>(a)]);
  }
  const int C = f.n_channels();
  out.data = ad::Tensor({C, extents[0], extents[1], extents[2]});
  for (int c = 0; c < C; ++c) {
    for (int it = 0; it < extents[0]; ++it) {
      for (int iz = 0; iz < extents[1]; ++iz) {
        for (int ix = 0; ix < extents[2]; ++ix) {
          out.at(c, it, iz, ix) = f.at(c, start[0] + it, start[1] + iz, start[2] + ix);
        }
      }
    }
  }
  return out;
}

CellLocation locate_cell(double coord, double origin, double spacing, int extent) {
  if (extent < 2) throw std::invalid_argument("locate_cell: axis needs at least 2 nodes");
  if (!(spacing > 0.0)) throw std::invalid_argument("locate_cell: spacing must be positive");
  const double s = (coord - origin) / spacing;
  const double tol = 1e-9 * extent;
  if (s < -tol || s > (extent - 1) + tol) {
    throw std::invalid_argument("locate_cell: point outside field bounding box");
  }
  int cell = static_cast<int>(std::floor(s));
  if (cell < 0) cell = 0;
  if (cell > extent - 2) cell = extent - 2;
  double frac = s - cell;
  if (frac < 0.0) frac = 0.0;
  if (frac > 1.0) frac = 1.0;
  return {cell, frac};
}

double sample_trilinear(const Field4& f, int channel, double t, double z, double x) {
  const CellLocation ct = locate_cell(t, f.origin[0], f.spacing[0], f.extent(0));
  const CellLocation cz = locate_cell(z, f.origin[1], f.spacing[1], f.extent(1));
  const CellLocation cx = locate_cell(x, f.origin[2], f.spacing[2], f.extent(2));
  double acc = 0.0;
  for (int bt = 0; bt < 2; ++bt) {
    const double wt = bt ? ct.frac : 1.0 - ct.frac;
    for (int bz = 0; bz < 2; ++bz) {
      const double wz = bz ? cz.frac : 1.0 - cz.frac;
      for (int bx = 0; bx < 2; ++bx) {
        const double wx = bx ? cx.frac : 1.0 - cx.frac;
        acc += wt * wz * wx * f.at(channel, ct.cell + bt, cz.cell + bz, cx.cell + bx);
      }
    }
  }
  return acc;
}

}  // namespace mfsr
