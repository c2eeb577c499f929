#include "mfsr/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace mfsr {

using ad::Jet;
using ad::Tensor;

namespace {

TrilinearStencil stencil_from_frac(const std::array<double, 3>& frac) {
  TrilinearStencil s;
  for (int j = 0; j < 8; ++j) {
    const int bt = (j >> 2) & 1, bz = (j >> 1) & 1, bx = j & 1;
    const double wt = bt ? frac[0] : 1.0 - frac[0];
    const double wz = bz ? frac[1] : 1.0 - frac[1];
    const double wx = bx ? frac[2] : 1.0 - frac[2];
    s.weights[static_cast<std::size_t>(j)] = wt * wz * wx;
    s.rel[static_cast<std::size_t>(j)] = {frac[0] - bt, frac[1] - bz, frac[2] - bx};
  }

  // Pin the partition of unity: replace the largest weight with one minus the
  // compensated (Neumaier) sum of the rest.
  int k = 0;
  for (int j = 1; j < 8; ++j) {
    if (s.weights[static_cast<std::size_t>(j)] > s.weights[static_cast<std::size_t>(k)]) k = j;
  }
  double sum = 0.0, comp = 0.0;
  for (int j = 0; j < 8; ++j) {
    if (j == k) continue;
    const double v = s.weights[static_cast<std::size_t>(j)];
    const double t = sum + v;
    comp += std::fabs(sum) >= std::fabs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  s.weights[static_cast<std::size_t>(k)] = 1.0 - (sum + comp);
  return s;
}

}  // namespace

TrilinearStencil trilinear_weights(const std::array<double, 3>& point, const CellRef& cell) {
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<std::size_t>(a);
    if (!(cell.spacing[ai] > 0.0)) {
      throw std::invalid_argument("trilinear_weights: spacing must be positive");
    }
    double f = (point[ai] - cell.lo[ai]) / cell.spacing[ai];
    const double tol = 1e-9;
    if (f < -tol || f > 1.0 + tol) {
      throw std::invalid_argument("trilinear_weights: point outside cell");
    }
    frac[ai] = f < 0.0 ? 0.0 : (f > 1.0 ? 1.0 : f);
  }
  return stencil_from_frac(frac);
}

ContinuousDecoder::ContinuousDecoder(const MLPConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.n_c < 1 || cfg.out_dim < 1) {
    throw std::invalid_argument("ContinuousDecoder: invalid dimensions");
  }
  if (cfg.act == ad::Activation::Relu) {
    throw std::invalid_argument(
        "ContinuousDecoder: relu is not twice differentiable; use swish or softplus");
  }
  Rng rng(seed);
  int n_in = cfg.in_dim();
  for (int h : cfg.hidden) {
    if (h < 1) throw std::invalid_argument("ContinuousDecoder: invalid hidden width");
    layers_.push_back(make_linear(h, n_in, rng));
    n_in = h;
  }
  layers_.push_back(make_linear(cfg.out_dim, n_in, rng));
}

Tensor ContinuousDecoder::forward(const Tensor& in) const {
  Tensor h = in;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    h = ad::unary(ad::linear(h, layers_[l].w, layers_[l].b),
                  ad::activation_unary(cfg_.act, 0));
  }
  return ad::linear(h, layers_.back().w, layers_.back().b);
}

Jet ContinuousDecoder::forward(const Jet& in) const {
  Jet h = in;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    h = ad::jet_activation(ad::jet_linear(h, layers_[l].w, layers_[l].b), cfg_.act);
  }
  return ad::jet_linear(h, layers_.back().w, layers_.back().b);
}

std::vector<NamedParam> ContinuousDecoder::parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    out.push_back({"mlp/l" + std::to_string(l) + "/w", layers_[l].w});
    out.push_back({"mlp/l" + std::to_string(l) + "/b", layers_[l].b});
  }
  return out;
}

ContinuousDecoder ContinuousDecoder::clone() const {
  ContinuousDecoder c;
  c.cfg_ = cfg_;
  for (const auto& l : layers_) c.layers_.push_back({l.w.clone(), l.b.clone()});
  return c;
}

DecodedSample query(const LatentContextGrid& grid, const ContinuousDecoder& mlp,
                    const QueryBatch& batch, bool want_derivs) {
  const int N = static_cast<int>(batch.points.size());
  if (N < 1) throw std::invalid_argument("query: empty point batch");
  const int n_c = grid.data.extent(0);
  const int m = mlp.config().out_dim;
  if (mlp.config().n_c != n_c) {
    throw std::invalid_argument("query: decoder latent width does not match grid");
  }
  if (batch.targets.defined() &&
      (batch.targets.rank() != 2 || batch.targets.extent(0) != N ||
       batch.targets.extent(1) != m)) {
    throw std::invalid_argument("query: targets must be [N, out_dim]");
  }
  const int T = grid.extent(0), Z = grid.extent(1), X = grid.extent(2);
  const int rows = N * 8;

  // Per-(point, vertex) stencil data.
  std::vector<int> flat_idx(static_cast<std::size_t>(rows));
  Tensor rel({rows, 3});
  std::vector<double> w(static_cast<std::size_t>(rows));
  std::array<std::vector<double>, 3> dw;
  if (want_derivs) {
    for (auto& d : dw) d.assign(static_cast<std::size_t>(rows), 0.0);
  }

  for (int i = 0; i < N; ++i) {
    const auto& pt = batch.points[static_cast<std::size_t>(i)];
    const CellLocation ct = locate_cell(pt[0], grid.origin[0], grid.spacing[0], T);
    const CellLocation cz = locate_cell(pt[1], grid.origin[1], grid.spacing[1], Z);
    const CellLocation cx = locate_cell(pt[2], grid.origin[2], grid.spacing[2], X);
    const std::array<double, 3> fr = {ct.frac, cz.frac, cx.frac};
    const TrilinearStencil st = stencil_from_frac(fr);
    for (int j = 0; j < 8; ++j) {
      const int bt = (j >> 2) & 1, bz = (j >> 1) & 1, bx = j & 1;
      const int r = i * 8 + j;
      flat_idx[static_cast<std::size_t>(r)] =
          ((ct.cell + bt) * Z + (cz.cell + bz)) * X + (cx.cell + bx);
      for (int a = 0; a < 3; ++a) {
        rel.data()[r * 3 + a] = st.rel[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)];
      }
      w[static_cast<std::size_t>(r)] = st.weights[static_cast<std::size_t>(j)];
      if (want_derivs) {
        // d(weight)/d(coord_a) = +/- (1/spacing_a) * product of other hats.
        const double ht = bt ? fr[0] : 1.0 - fr[0];
        const double hz = bz ? fr[1] : 1.0 - fr[1];
        const double hx = bx ? fr[2] : 1.0 - fr[2];
        const double gt = (bt ? 1.0 : -1.0) / grid.spacing[0];
        const double gz = (bz ? 1.0 : -1.0) / grid.spacing[1];
        const double gx = (bx ? 1.0 : -1.0) / grid.spacing[2];
        dw[0][static_cast<std::size_t>(r)] = gt * hz * hx;
        dw[1][static_cast<std::size_t>(r)] = ht * gz * hx;
        dw[2][static_cast<std::size_t>(r)] = ht * hz * gx;
      }
    }
  }

  Tensor latents = ad::gather_latents(grid.data, flat_idx);  // [rows, n_c]

  DecodedSample out;
  if (!want_derivs) {
    Tensor phi = mlp.forward(ad::concat_cols(rel, latents));
    out.y = ad::reduce_groups(phi, w, 8);
    return out;
  }

  // Jet input: rel coordinates seeded with d1 = 1/spacing so every derivative
  // downstream is already in physical units; latents are constants in (t,z,x).
  Jet in;
  in.v = ad::concat_cols(rel, latents);
  for (int a = 0; a < 3; ++a) {
    Tensor seed({rows, 3});
    for (int r = 0; r < rows; ++r) {
      seed.data()[r * 3 + a] = 1.0 / grid.spacing[static_cast<std::size_t>(a)];
    }
    in.d1[static_cast<std::size_t>(a)] = ad::concat_cols(seed, Tensor({rows, n_c}));
  }
  in.d2[Jet::kZZ] = Tensor({rows, 3 + n_c});
  in.d2[Jet::kXX] = Tensor({rows, 3 + n_c});

  Jet phi = mlp.forward(in);

  out.y = ad::reduce_groups(phi.v, w, 8);
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<std::size_t>(a);
    // d/da [ sum_j w_j phi_j ] = sum_j (w_j dphi_j + dw_j phi_j)
    out.d1[ai] = ad::add(ad::reduce_groups(phi.d1[ai], w, 8),
                         ad::reduce_groups(phi.v, dw[ai], 8));
  }
  // Weights are per-axis linear, so their pure second derivatives vanish:
  // d2/da2 = sum_j (w_j phi''_j + 2 dw_j phi'_j).
  out.d2_zz = ad::add(ad::reduce_groups(phi.d2[Jet::kZZ], w, 8),
                      ad::mul_scalar(ad::reduce_groups(phi.d1[kAxisZ], dw[kAxisZ], 8), 2.0));
  out.d2_xx = ad::add(ad::reduce_groups(phi.d2[Jet::kXX], w, 8),
                      ad::mul_scalar(ad::reduce_groups(phi.d1[kAxisX], dw[kAxisX], 8), 2.0));
  out.has_derivs = true;
  return out;
}

Field4 superresolve(const ContextGenerator& gen, const ContinuousDecoder& mlp,
                    const Field4& lr, const std::array<int, 3>& target_res) {
  for (int n : target_res) {
    if (n < 1) throw std::invalid_argument("superresolve: target resolution must be >= 1");
  }
  if (mlp.config().out_dim != lr.n_channels()) {
    throw std::invalid_argument("superresolve: decoder out_dim != field channels");
  }
  ad::NoTapeScope inference;

  const LatentContextGrid grid = gen.encode(lr);

  std::array<std::vector<double>, 3> coords;
  Field4 out;
  out.channels = lr.channels;
  out.origin = lr.origin;
  out.normalized = lr.normalized;
  for (int a = 0; a < 3; ++a) {
    const auto ai = static_cast<std::size_t>(a);
    const int n = target_res[ai];
    const double span = (lr.extent(a) - 1) * lr.spacing[ai];
    coords[ai].resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      coords[ai][static_cast<std::size_t>(i)] =
          lr.origin[ai] + (n > 1 ? (span * i) / (n - 1) : 0.0);
    }
    out.spacing[ai] = n > 1 ? span / (n - 1) : lr.spacing[ai];
  }
  const int nt = target_res[0], nz = target_res[1], nx = target_res[2];
  const int m = lr.n_channels();
  out.data = Tensor({m, nt, nz, nx});

  // Chunked decode keeps the per-query working set small.
  const int kChunk = 4096;
  std::vector<std::array<double, 3>> pts;
  std::vector<int> locs;  // flat (t,z,x) output offsets
  pts.reserve(kChunk);
  locs.reserve(kChunk);
  auto flush = [&] {
    if (pts.empty()) return;
    QueryBatch qb;
    qb.points = pts;
    qb.window_ref = "superresolve";
    DecodedSample s = query(grid, mlp, qb, false);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (int c = 0; c < m; ++c) {
        out.data.data()[static_cast<std::ptrdiff_t>(c) * nt * nz * nx + locs[i]] =
            s.y.data()[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)];
      }
    }
    pts.clear();
    locs.clear();
  };

  for (int it = 0; it < nt; ++it) {
    for (int iz = 0; iz < nz; ++iz) {
      for (int ix = 0; ix < nx; ++ix) {
        pts.push_back({coords[0][static_cast<std::size_t>(it)],
                       coords[1][static_cast<std::size_t>(iz)],
                       coords[2][static_cast<std::size_t>(ix)]});
        locs.push_back((it * nz + iz) * nx + ix);
        if (static_cast<int>(pts.size()) == kChunk) flush();
      }
    }
  }
  flush();
  return out;
}

}  // namespace mfsr
