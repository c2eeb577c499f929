/// @file
/// Continuous decoder tests. The load-bearing oracles: trilinear weights
/// against the per-axis hat product and an exact partition of unity,
/// multilinear fields reproduced exactly by a latent-picking linear head,
/// and full query() derivatives against centered differences of query()
/// values. Plus the interface contracts (errors, shapes, gradients).

#include <array>
#include <cfloat>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mfsr/decoder.hpp"
#include "mfsr/field.hpp"
#include "mfsr/rng.hpp"
#include "mfsr/tensor.hpp"
#include "mfsr/unet.hpp"
#include "test_helpers.hpp"

using namespace mfsr;
using ad::Tensor;
using testing::fill_uniform;

namespace {

// A latent grid built directly (no encoder): data[c, t, z, x] supplied by fn.
template <typename Fn>
LatentContextGrid manual_grid(int n_c, int t, int z, int x, std::array<double, 3> spacing,
                              std::array<double, 3> origin, Fn fn) {
  LatentContextGrid g;
  g.data = Tensor({n_c, t, z, x});
  g.spacing = spacing;
  g.origin = origin;
  for (int c = 0; c < n_c; ++c) {
    for (int it = 0; it < t; ++it) {
      for (int iz = 0; iz < z; ++iz) {
        for (int ix = 0; ix < x; ++ix) {
          g.data.data()[((c * t + it) * z + iz) * x + ix] =
              fn(c, g.coord(0, it), g.coord(1, iz), g.coord(2, ix));
        }
      }
    }
  }
  return g;
}

// Decoder whose single linear layer copies latent column `col` through,
// ignoring the relative coordinates: phi(rel, c) = c[col].
ContinuousDecoder latent_pick_decoder(int n_c, int col) {
  MLPConfig cfg;
  cfg.n_c = n_c;
  cfg.hidden = {};
  cfg.out_dim = 1;
  cfg.act = ad::Activation::Softplus;
  ContinuousDecoder dec(cfg, 1);
  auto params = dec.parameters();
  REQUIRE(params.size() == 2);
  for (int i = 0; i < params[0].tensor.size(); ++i) params[0].tensor.data()[i] = 0.0;
  params[0].tensor.data()[3 + col] = 1.0;
  params[1].tensor.data()[0] = 0.0;
  return dec;
}

}  // namespace

TEST_CASE("trilinear weights match the per-axis hat product") {
  Rng rng(301);
  for (int trial = 0; trial < 200; ++trial) {
    CellRef cell;
    for (int a = 0; a < 3; ++a) {
      cell.lo[a] = rng.uniform(-5.0, 5.0);
      cell.spacing[a] = rng.uniform(0.01, 10.0);
    }
    std::array<double, 3> frac{}, pt{};
    for (int a = 0; a < 3; ++a) {
      frac[a] = rng.uniform();
      pt[a] = cell.lo[a] + frac[a] * cell.spacing[a];
    }
    TrilinearStencil s = trilinear_weights(pt, cell);
    for (int j = 0; j < 8; ++j) {
      const int bt = (j >> 2) & 1, bz = (j >> 1) & 1, bx = j & 1;
      // Recompute the hats in long double from the same cell data.
      const long double ft = (static_cast<long double>(pt[0]) - cell.lo[0]) / cell.spacing[0];
      const long double fz = (static_cast<long double>(pt[1]) - cell.lo[1]) / cell.spacing[1];
      const long double fx = (static_cast<long double>(pt[2]) - cell.lo[2]) / cell.spacing[2];
      const long double expect = (bt ? ft : 1.0L - ft) * (bz ? fz : 1.0L - fz) *
                                 (bx ? fx : 1.0L - fx);
      CHECK(std::fabs(s.weights[j] - static_cast<double>(expect)) <= 1e-14);
      CHECK(s.rel[j][0] == doctest::Approx(static_cast<double>(ft) - bt).epsilon(1e-12));
      CHECK(s.rel[j][1] == doctest::Approx(static_cast<double>(fz) - bz).epsilon(1e-12));
      CHECK(s.rel[j][2] == doctest::Approx(static_cast<double>(fx) - bx).epsilon(1e-12));
      CHECK(s.rel[j][0] >= -1.0);
      CHECK(s.rel[j][0] <= 1.0);
    }
  }
}

TEST_CASE("trilinear weights sum to one within an ulp") {
  Rng rng(302);
  long double worst = 0.0L;
  for (int trial = 0; trial < 100000; ++trial) {
    CellRef cell;
    std::array<double, 3> pt{};
    for (int a = 0; a < 3; ++a) {
      cell.lo[a] = rng.uniform(-100.0, 100.0);
      cell.spacing[a] = rng.uniform(1e-3, 1e3);
      pt[a] = cell.lo[a] + rng.uniform() * cell.spacing[a];
    }
    TrilinearStencil s = trilinear_weights(pt, cell);
    long double sum = 0.0L;
    for (int j = 0; j < 8; ++j) {
      CHECK(s.weights[j] >= 0.0);
      CHECK(s.weights[j] <= 1.0);
      sum += s.weights[j];
    }
    const long double err = sum > 1.0L ? sum - 1.0L : 1.0L - sum;
    if (err > worst) worst = err;
  }
  // 1 ulp at 1.0 is 2^-52 ~ 2.22e-16.
  CHECK(static_cast<double>(worst) <= 2.3e-16);
}

TEST_CASE("trilinear weights: center, vertices, and bad input") {
  CellRef cell{{1.0, 2.0, 3.0}, {2.0, 4.0, 8.0}};

  TrilinearStencil center = trilinear_weights({2.0, 4.0, 7.0}, cell);
  for (int j = 0; j < 8; ++j) CHECK(center.weights[j] == 0.125);

  // Vertex (bt, bz, bx) = (1, 0, 1) -> j = 5 is an exact indicator.
  TrilinearStencil v = trilinear_weights({3.0, 2.0, 11.0}, cell);
  for (int j = 0; j < 8; ++j) CHECK(v.weights[j] == (j == 5 ? 1.0 : 0.0));

  CHECK_THROWS_AS(trilinear_weights({0.0, 4.0, 7.0}, cell), std::invalid_argument);
  CHECK_THROWS_AS(trilinear_weights({2.0, 4.0, 11.1}, cell), std::invalid_argument);
  CellRef degenerate{{0.0, 0.0, 0.0}, {1.0, 0.0, 1.0}};
  CHECK_THROWS_AS(trilinear_weights({0.5, 0.0, 0.5}, degenerate), std::invalid_argument);
}

TEST_CASE("decoder construction: layer plumbing and the relu ban") {
  MLPConfig cfg;
  cfg.n_c = 5;
  cfg.hidden = {7, 6};
  cfg.out_dim = 4;
  ContinuousDecoder dec(cfg, 8);
  // (3+5)->7->6->4 with weights and biases.
  CHECK(param_count(dec.parameters()) == (8 * 7 + 7) + (7 * 6 + 6) + (6 * 4 + 4));
  CHECK(dec.parameters()[0].name == "mlp/l0/w");
  CHECK(dec.parameters()[5].name == "mlp/l2/b");

  Tensor in({10, 8});
  Rng rng(2);
  fill_uniform(in, rng);
  Tensor out = dec.forward(in);
  CHECK(out.extent(0) == 10);
  CHECK(out.extent(1) == 4);

  ContinuousDecoder copy = dec.clone();
  copy.parameters()[0].tensor.data()[0] += 1.0;
  CHECK(copy.parameters()[0].tensor.data()[0] != dec.parameters()[0].tensor.data()[0]);

  cfg.act = ad::Activation::Relu;
  CHECK_THROWS_AS(ContinuousDecoder(cfg, 8), std::invalid_argument);
  cfg.act = ad::Activation::Swish;
  cfg.hidden = {0};
  CHECK_THROWS_AS(ContinuousDecoder(cfg, 8), std::invalid_argument);
}

TEST_CASE("tensor and jet forward passes agree on values") {
  MLPConfig cfg;
  cfg.n_c = 4;
  cfg.hidden = {9, 9};
  cfg.out_dim = 3;
  for (auto act : {ad::Activation::Swish, ad::Activation::Softplus}) {
    cfg.act = act;
    ContinuousDecoder dec(cfg, 21);
    Tensor in({6, 7});
    Rng rng(3);
    fill_uniform(in, rng);

    ad::Jet jin;
    jin.v = in;
    for (auto& d : jin.d1) d = Tensor({6, 7});
    Tensor value = dec.forward(in);
    ad::Jet jet = dec.forward(jin);
    for (int i = 0; i < value.size(); ++i) CHECK(jet.v.data()[i] == value.data()[i]);
  }
}

TEST_CASE("multilinear fields decode exactly, including derivatives") {
  // g is multilinear per axis, so the trilinear interpolant of its nodal
  // values is g itself; a latent-picking decoder must reproduce it and its
  // first derivatives exactly, with vanishing zz/xx curvature.
  const double a0 = 0.3, bt = -0.8, cz = 0.55, dx = 1.2;
  const double etz = -0.4, ftx = 0.9, hzx = -0.25, ktzx = 0.6;
  auto g = [&](double t, double z, double x) {
    return a0 + bt * t + cz * z + dx * x + etz * t * z + ftx * t * x + hzx * z * x +
           ktzx * t * z * x;
  };
  auto gt = [&](double t, double z, double x) {
    (void)t;
    return bt + etz * z + ftx * x + ktzx * z * x;
  };
  auto gz = [&](double t, double z, double x) {
    (void)z;
    return cz + etz * t + hzx * x + ktzx * t * x;
  };
  auto gx = [&](double t, double z, double x) {
    (void)x;
    return dx + ftx * t + hzx * z + ktzx * t * z;
  };

  LatentContextGrid grid =
      manual_grid(2, 3, 4, 5, {0.5, 0.25, 0.2}, {-1.0, 2.0, 0.3},
                  [&](int c, double t, double z, double x) {
                    return c == 1 ? g(t, z, x) : 123.0;  // decoy channel 0
                  });
  ContinuousDecoder dec = latent_pick_decoder(2, 1);

  QueryBatch qb;
  Rng rng(404);
  for (int i = 0; i < 200; ++i) {
    qb.points.push_back({rng.uniform(-1.0, 0.0), rng.uniform(2.0, 2.75),
                         rng.uniform(0.3, 1.1)});
  }
  DecodedSample s = query(grid, dec, qb, true);
  REQUIRE(s.has_derivs);
  for (std::size_t i = 0; i < qb.points.size(); ++i) {
    const auto& p = qb.points[i];
    CHECK(s.y.data()[i] == doctest::Approx(g(p[0], p[1], p[2])).epsilon(1e-12));
    CHECK(s.d1[0].data()[i] == doctest::Approx(gt(p[0], p[1], p[2])).epsilon(1e-9));
    CHECK(s.d1[1].data()[i] == doctest::Approx(gz(p[0], p[1], p[2])).epsilon(1e-9));
    CHECK(s.d1[2].data()[i] == doctest::Approx(gx(p[0], p[1], p[2])).epsilon(1e-9));
    CHECK(std::fabs(s.d2_zz.data()[i]) <= 1e-9);
    CHECK(std::fabs(s.d2_xx.data()[i]) <= 1e-9);
  }
}

TEST_CASE("query derivatives match finite differences of query values") {
  const std::array<double, 3> spacing = {0.3, 0.07, 0.11};
  const std::array<double, 3> origin = {0.5, -0.2, 2.0};
  Rng lrng(55);
  LatentContextGrid grid = manual_grid(3, 3, 4, 4, spacing, origin,
                                       [&](int, double, double, double) {
                                         return lrng.uniform(-1.0, 1.0);
                                       });

  MLPConfig cfg;
  cfg.n_c = 3;
  cfg.hidden = {8, 8};
  cfg.out_dim = 2;
  for (auto act : {ad::Activation::Swish, ad::Activation::Softplus}) {
    cfg.act = act;
    ContinuousDecoder dec(cfg, 5);

    // Points parked well inside a random cell so the centered stencils never
    // cross a cell face (the blend is only C0 across faces).
    Rng rng(66);
    QueryBatch qb;
    for (int i = 0; i < 12; ++i) {
      const int it = rng.uniform_int(0, 1), iz = rng.uniform_int(0, 2),
                ix = rng.uniform_int(0, 2);
      qb.points.push_back({origin[0] + (it + rng.uniform(0.2, 0.8)) * spacing[0],
                           origin[1] + (iz + rng.uniform(0.2, 0.8)) * spacing[1],
                           origin[2] + (ix + rng.uniform(0.2, 0.8)) * spacing[2]});
    }
    DecodedSample s = query(grid, dec, qb, true);
    DecodedSample plain = query(grid, dec, qb, false);
    REQUIRE_FALSE(plain.has_derivs);
    for (int i = 0; i < s.y.size(); ++i) CHECK(s.y.data()[i] == plain.y.data()[i]);

    auto value_at = [&](std::array<double, 3> p, int col) {
      QueryBatch one;
      one.points.push_back(p);
      return query(grid, dec, one, false).y.data()[col];
    };

    double worst1 = 0.0, worst2 = 0.0;
    for (std::size_t i = 0; i < qb.points.size(); ++i) {
      for (int c = 0; c < cfg.out_dim; ++c) {
        for (int a = 0; a < 3; ++a) {
          const double h = 1e-4 * spacing[a];
          auto pp = qb.points[i], pm = qb.points[i];
          pp[a] += h;
          pm[a] -= h;
          const double fd = (value_at(pp, c) - value_at(pm, c)) / (2.0 * h);
          const double an = s.d1[a].data()[i * 2 + c];
          worst1 = std::max(worst1,
                            std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-6}));
        }
        for (int a : {kAxisZ, kAxisX}) {
          const double h = 1e-4 * spacing[a];
          auto pp = qb.points[i], pm = qb.points[i];
          pp[a] += h;
          pm[a] -= h;
          const double f0 = value_at(qb.points[i], c);
          const double fd = (value_at(pp, c) - 2.0 * f0 + value_at(pm, c)) / (h * h);
          const double an = (a == kAxisZ ? s.d2_zz : s.d2_xx).data()[i * 2 + c];
          worst2 = std::max(worst2,
                            std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-4}));
        }
      }
    }
    INFO("first-derivative worst rel ", worst1, ", second ", worst2);
    CHECK(worst1 < 1e-3);
    CHECK(worst2 < 1e-3);
  }
}

TEST_CASE("decoded values are continuous across cell faces") {
  Rng lrng(91);
  const std::array<double, 3> spacing = {0.4, 0.07, 0.13};
  const std::array<double, 3> origin = {0.0, 1.0, -2.0};
  LatentContextGrid grid = manual_grid(2, 5, 5, 5, spacing, origin,
                                       [&](int, double, double, double) {
                                         return lrng.uniform(-1.0, 1.0);
                                       });
  MLPConfig cfg;
  cfg.n_c = 2;
  cfg.hidden = {6};
  cfg.out_dim = 1;
  ContinuousDecoder dec(cfg, 30);

  for (int a = 0; a < 3; ++a) {
    std::array<double, 3> face = {origin[0] + 1.3 * spacing[0], origin[1] + 2.4 * spacing[1],
                                  origin[2] + 1.6 * spacing[2]};
    face[a] = origin[a] + 2.0 * spacing[a];  // interior grid plane on axis a
    auto lo = face, hi = face;
    const double d = 1e-8 * spacing[a];
    lo[a] -= d;
    hi[a] += d;
    QueryBatch qb;
    qb.points = {lo, face, hi};
    DecodedSample s = query(grid, dec, qb, false);
    CHECK(std::fabs(s.y.data()[0] - s.y.data()[1]) <= 1e-6);
    CHECK(std::fabs(s.y.data()[2] - s.y.data()[1]) <= 1e-6);
  }
}

TEST_CASE("query input validation") {
  Rng lrng(8);
  LatentContextGrid grid = manual_grid(2, 2, 2, 2, {1, 1, 1}, {0, 0, 0},
                                       [&](int, double, double, double) {
                                         return lrng.uniform(-1.0, 1.0);
                                       });
  MLPConfig cfg;
  cfg.n_c = 2;
  cfg.hidden = {4};
  cfg.out_dim = 1;
  ContinuousDecoder dec(cfg, 3);

  QueryBatch empty;
  CHECK_THROWS_AS(query(grid, dec, empty, false), std::invalid_argument);

  QueryBatch outside;
  outside.points.push_back({0.5, 0.5, 0.9});
  CHECK_NOTHROW(query(grid, dec, outside, false));
  outside.points.push_back({0.5, 0.5, 1.0 + 1e-6});
  CHECK_THROWS_AS(query(grid, dec, outside, false), std::invalid_argument);

  MLPConfig wrong = cfg;
  wrong.n_c = 3;
  ContinuousDecoder mismatched(wrong, 3);
  QueryBatch ok;
  ok.points.push_back({0.5, 0.5, 0.5});
  CHECK_THROWS_AS(query(grid, mismatched, ok, false), std::invalid_argument);

  ok.targets = Tensor({1, 2});  // out_dim is 1
  CHECK_THROWS_AS(query(grid, dec, ok, false), std::invalid_argument);
  ok.targets = Tensor({1, 1});
  CHECK_NOTHROW(query(grid, dec, ok, false));
}

TEST_CASE("superresolve covers the bounding box at any resolution") {
  UNetConfig ucfg;
  ucfg.in_channels = 4;
  ucfg.n_c = 5;
  ucfg.depth = 1;
  ucfg.base_width = 4;
  ContextGenerator gen(ucfg, 44);
  MLPConfig mcfg;
  mcfg.n_c = 5;
  mcfg.hidden = {8};
  mcfg.out_dim = 4;
  ContinuousDecoder dec(mcfg, 45);

  Field4 lr = make_flow_field(4, 6, 8, {0.5, 0.25, 0.125}, {2.0, 0.0, -1.0});
  Rng rng(46);
  fill_uniform(lr.data, rng);
  lr.normalized = true;

  Field4 hr = superresolve(gen, dec, lr, {7, 9, 5});
  CHECK(hr.channels == lr.channels);
  CHECK(hr.extent(0) == 7);
  CHECK(hr.extent(1) == 9);
  CHECK(hr.extent(2) == 5);
  CHECK(hr.normalized);
  CHECK(hr.origin == lr.origin);
  for (int a = 0; a < 3; ++a) {
    CHECK(hr.coord(a, 0) == doctest::Approx(lr.bbox_lo()[a]));
    CHECK(hr.coord(a, hr.extent(a) - 1) == doctest::Approx(lr.bbox_hi()[a]).epsilon(1e-12));
  }
  for (int i = 0; i < hr.data.size(); ++i) CHECK(std::isfinite(hr.data.data()[i]));

  CHECK_THROWS_AS(superresolve(gen, dec, lr, {0, 4, 4}), std::invalid_argument);
  MLPConfig bad = mcfg;
  bad.out_dim = 3;
  CHECK_THROWS_AS(superresolve(gen, ContinuousDecoder(bad, 1), lr, {4, 4, 4}),
                  std::invalid_argument);
}

TEST_CASE("superresolve grids nest across compatible resolutions") {
  // Node i of n sits at lo + span*i/(n-1), so resolution 2n-1 contains every
  // node of resolution n at even indices -- bitwise, including the decode.
  UNetConfig ucfg;
  ucfg.in_channels = 4;
  ucfg.n_c = 4;
  ucfg.depth = 1;
  ucfg.base_width = 4;
  ContextGenerator gen(ucfg, 52);
  MLPConfig mcfg;
  mcfg.n_c = 4;
  mcfg.hidden = {8};
  mcfg.out_dim = 4;
  ContinuousDecoder dec(mcfg, 53);

  Field4 lr = make_flow_field(2, 4, 4, {0.5, 0.21, 0.37}, {-0.3, 1.1, 0.9});
  Rng rng(54);
  fill_uniform(lr.data, rng);

  Field4 coarse = superresolve(gen, dec, lr, {3, 3, 3});
  Field4 fine = superresolve(gen, dec, lr, {5, 5, 5});
  for (int c = 0; c < 4; ++c) {
    for (int t = 0; t < 3; ++t) {
      for (int z = 0; z < 3; ++z) {
        for (int x = 0; x < 3; ++x) {
          CHECK(coarse.at(c, t, z, x) == fine.at(c, 2 * t, 2 * z, 2 * x));
        }
      }
    }
  }
}

TEST_CASE("gradients flow from a query loss into decoder and encoder") {
  UNetConfig ucfg;
  ucfg.in_channels = 4;
  ucfg.n_c = 4;
  ucfg.depth = 1;
  ucfg.base_width = 4;
  ContextGenerator gen(ucfg, 71);
  MLPConfig mcfg;
  mcfg.n_c = 4;
  mcfg.hidden = {6};
  mcfg.out_dim = 4;
  ContinuousDecoder dec(mcfg, 72);

  Field4 lr = make_flow_field(2, 4, 4, {0.5, 0.25, 0.25}, {0.0, 0.0, 0.0});
  Rng rng(73);
  fill_uniform(lr.data, rng);

  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    for (auto& p : gen.parameters()) p.tensor.zero_grad();
    for (auto& p : dec.parameters()) p.tensor.zero_grad();

    LatentContextGrid grid = gen.encode(lr);
    QueryBatch qb;
    qb.points = {{0.2, 0.3, 0.4}, {0.4, 0.6, 0.5}, {0.1, 0.2, 0.7}};
    DecodedSample s = query(grid, dec, qb, true);
    Tensor loss = ad::add(ad::mean(s.y),
                          ad::add(ad::mean(s.d1[kAxisT]), ad::mean(s.d2_zz)));
    tape.backward(loss);
  }

  auto grad_norm = [](const std::vector<NamedParam>& ps, const char* needle) {
    double n = 0.0;
    for (const auto& p : ps) {
      if (p.name.find(needle) == std::string::npos) continue;
      REQUIRE(p.tensor.grad_data() != nullptr);
      for (int i = 0; i < p.tensor.size(); ++i) {
        REQUIRE(std::isfinite(p.tensor.grad_data()[i]));
        n += std::fabs(p.tensor.grad_data()[i]);
      }
    }
    return n;
  };
  CHECK(grad_norm(dec.parameters(), "mlp/l0/w") > 0.0);
  CHECK(grad_norm(dec.parameters(), "mlp/l1/w") > 0.0);
  CHECK(grad_norm(gen.parameters(), "unet/head/w") > 0.0);
  CHECK(grad_norm(gen.parameters(), "unet/enc0/c2/w") > 0.0);
}

TEST_CASE("finite-difference check of query gradients w.r.t. parameters") {
  // End-to-end reverse-mode oracle: derivative-of-derivative losses included.
  Rng lrng(17);
  LatentContextGrid grid = manual_grid(2, 2, 3, 3, {0.5, 0.5, 0.5}, {0, 0, 0},
                                       [&](int, double, double, double) {
                                         return lrng.uniform(-1.0, 1.0);
                                       });
  grid.data.set_requires_grad();
  MLPConfig cfg;
  cfg.n_c = 2;
  cfg.hidden = {5};
  cfg.out_dim = 2;
  ContinuousDecoder dec(cfg, 19);

  QueryBatch qb;
  qb.points = {{0.3, 0.6, 0.8}, {0.45, 0.9, 0.2}, {0.1, 0.4, 0.9}};

  std::vector<Tensor> params = {grid.data};
  for (auto& p : dec.parameters()) params.push_back(p.tensor);
  auto loss = [&] {
    DecodedSample s = query(grid, dec, qb, true);
    Tensor sum = ad::add(ad::mean(s.y), ad::mean(s.d1[kAxisZ]));
    sum = ad::add(sum, ad::mean(s.d2_xx));
    return sum;
  };
  auto res = testing::check_gradients(loss, params, 1e-5);
  INFO("max rel err ", res.max_rel, " over ", res.directions, " directions");
  CHECK(res.ok(2e-4));
}
