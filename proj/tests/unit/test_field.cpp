/// @file
/// Field container tests: cropping geometry, cell lookup semantics at
/// boundaries, and multilinear exactness of trilinear sampling.

#include <doctest.h>

#include <cmath>

#include "mfsr/field.hpp"
#include "mfsr/rng.hpp"

using namespace mfsr;

namespace {

// Full multilinear function: trilinear interpolation must reproduce it
// exactly at any interior point.
double multilinear(double t, double z, double x) {
  return 0.7 - 1.3 * t + 0.4 * z + 2.1 * x + 0.6 * t * z - 0.9 * t * x + 1.7 * z * x -
         0.5 * t * z * x;
}

Field4 multilinear_field(int nt, int nz, int nx) {
  Field4 f = make_flow_field(nt, nz, nx, {0.5, 0.25, 0.75}, {1.0, -2.0, 0.5});
  for (int c = 0; c < 4; ++c) {
    for (int it = 0; it < nt; ++it) {
      for (int iz = 0; iz < nz; ++iz) {
        for (int ix = 0; ix < nx; ++ix) {
          f.at(c, it, iz, ix) =
              (c + 1) * multilinear(f.coord(0, it), f.coord(1, iz), f.coord(2, ix));
        }
      }
    }
  }
  return f;
}

}  // namespace

TEST_CASE("flow field channel bookkeeping") {
  Field4 f = make_flow_field(2, 3, 4, {1, 1, 1}, {0, 0, 0});
  CHECK(f.n_channels() == 4);
  CHECK(f.channel_index("u") == kChanU);
  CHECK(f.channel_index("p") == kChanP);
  CHECK_THROWS_AS(f.channel_index("vorticity"), std::invalid_argument);
  CHECK(f.extent(kAxisT) == 2);
  CHECK(f.extent(kAxisZ) == 3);
  CHECK(f.extent(kAxisX) == 4);
}

TEST_CASE("crop_window shifts origin and copies the sub-block") {
  Field4 f = multilinear_field(4, 6, 8);
  Field4 c = crop_window(f, {1, 2, 3}, {2, 3, 4});
  CHECK(c.extent(0) == 2);
  CHECK(c.extent(1) == 3);
  CHECK(c.extent(2) == 4);
  CHECK(c.spacing == f.spacing);
  CHECK(c.origin[0] == doctest::Approx(f.coord(0, 1)));
  CHECK(c.origin[1] == doctest::Approx(f.coord(1, 2)));
  CHECK(c.origin[2] == doctest::Approx(f.coord(2, 3)));
  for (int ch = 0; ch < 4; ++ch)
    for (int it = 0; it < 2; ++it)
      for (int iz = 0; iz < 3; ++iz)
        for (int ix = 0; ix < 4; ++ix)
          CHECK(c.at(ch, it, iz, ix) == f.at(ch, 1 + it, 2 + iz, 3 + ix));

  CHECK_THROWS_AS(crop_window(f, {3, 0, 0}, {2, 2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(crop_window(f, {-1, 0, 0}, {2, 2, 2}), std::invalid_argument);
}

TEST_CASE("locate_cell boundary and tolerance semantics") {
  // 5 nodes at 0, 0.5, 1.0, 1.5, 2.0
  auto c = locate_cell(0.7, 0.0, 0.5, 5);
  CHECK(c.cell == 1);
  CHECK(c.frac == doctest::Approx(0.4));

  // Exact upper boundary: last interior cell, frac 1.
  c = locate_cell(2.0, 0.0, 0.5, 5);
  CHECK(c.cell == 3);
  CHECK(c.frac == 1.0);

  // Round-off slightly past the boundary is absorbed.
  c = locate_cell(2.0 + 1e-12, 0.0, 0.5, 5);
  CHECK(c.cell == 3);
  CHECK(c.frac == 1.0);
  c = locate_cell(-1e-12, 0.0, 0.5, 5);
  CHECK(c.cell == 0);
  CHECK(c.frac == 0.0);

  // Genuinely outside points throw.
  CHECK_THROWS_AS(locate_cell(2.1, 0.0, 0.5, 5), std::invalid_argument);
  CHECK_THROWS_AS(locate_cell(-0.1, 0.0, 0.5, 5), std::invalid_argument);
  CHECK_THROWS_AS(locate_cell(0.5, 0.0, 0.5, 1), std::invalid_argument);
}

TEST_CASE("trilinear sampling is exact on multilinear fields") {
  Field4 f = multilinear_field(3, 4, 5);
  Rng rng(301);
  const auto lo = f.bbox_lo();
  const auto hi = f.bbox_hi();
  double max_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const double t = rng.uniform(lo[0], hi[0]);
    const double z = rng.uniform(lo[1], hi[1]);
    const double x = rng.uniform(lo[2], hi[2]);
    for (int ch = 0; ch < 4; ++ch) {
      const double got = sample_trilinear(f, ch, t, z, x);
      const double want = (ch + 1) * multilinear(t, z, x);
      max_err = std::max(max_err, std::fabs(got - want));
    }
  }
  CHECK(max_err < 1e-10);
}

TEST_CASE("trilinear sampling at grid nodes returns node values") {
  Field4 f = multilinear_field(3, 4, 5);
  for (int it = 0; it < 3; ++it)
    for (int iz = 0; iz < 4; ++iz)
      for (int ix = 0; ix < 5; ++ix) {
        const double got =
            sample_trilinear(f, 2, f.coord(0, it), f.coord(1, iz), f.coord(2, ix));
        CHECK(got == doctest::Approx(f.at(2, it, iz, ix)).epsilon(1e-13));
      }
}
