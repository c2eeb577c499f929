#include "mfsr/simulate.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mfsr/dft.hpp"
#include "mfsr/errors.hpp"
#include "mfsr/log.hpp"
#include "mfsr/physics.hpp"
#include "mfsr/rng.hpp"

namespace mfsr {

int SimConfig::steps() const { return static_cast<int>(std::llround(t_final / dt)); }

int SimConfig::frames() const { return steps() / snapshot_every + 1; }

void SimConfig::validate() const {
  if (nx < 8 || nz < 8) throw std::invalid_argument("SimConfig: nx and nz must be >= 8");
  if (nx % 2 != 0) throw std::invalid_argument("SimConfig: nx must be even");
  if (!(lx > 0.0) || !(lz > 0.0)) throw std::invalid_argument("SimConfig: domain lengths");
  if (!(dt > 0.0) || !(t_final >= 0.0)) throw std::invalid_argument("SimConfig: time setup");
  if (snapshot_every < 1) throw std::invalid_argument("SimConfig: snapshot_every >= 1");
  if (!(perturb_amp >= 0.0)) throw std::invalid_argument("SimConfig: perturb_amp >= 0");
  PhysicsParams par(ra, pr);
  const double dx = lx / nx, dz = lz / nz;
  // Explicit diffusion bound for the 5-point stencil. The AB2 stability
  // region meets the negative real axis at -1, so the limit is half the
  // forward-Euler one: dt * kappa * (4/dx^2 + 4/dz^2) <= 1.
  const double kappa = std::max(par.p_star(), par.r_star());
  const double dt_diff = 1.0 / (4.0 * kappa * (1.0 / (dx * dx) + 1.0 / (dz * dz)));
  if (dt > dt_diff) {
    throw std::invalid_argument("SimConfig: dt " + std::to_string(dt) +
                                " exceeds the diffusive stability bound " +
                                std::to_string(dt_diff));
  }
}

SimConfig desk_sim_config() {
  SimConfig cfg;  // defaults are the desk preset: 32x128, 64 frames, Ra = 1e5
  return cfg;
}

namespace {

// Tridiagonal solve (Thomas); b is the diagonal, a sub-, c super-diagonal.
// All inputs are overwritten scratch copies held by the caller.
void thomas(std::vector<double>& a, std::vector<double>& b, std::vector<double>& c,
            std::vector<double>& rhs) {
  const std::size_t n = b.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = a[i] / b[i - 1];
    b[i] -= m * c[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= b[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) {
    rhs[i] = (rhs[i] - c[i] * rhs[i + 1]) / b[i];
  }
}

}  // namespace

std::vector<double> poisson_xperiodic_zneumann(const std::vector<double>& f, int nz, int nx,
                                               double dz, double dx) {
  if (static_cast<int>(f.size()) != nz * nx) {
    throw std::invalid_argument("poisson: rhs size mismatch");
  }
  const int half = nx / 2;
  Dft dft(nx);

  // Row-wise forward transforms: spectra laid out [k][iz].
  std::vector<double> fre(static_cast<std::size_t>(half + 1) * nz);
  std::vector<double> fim(fre.size());
  {
    std::vector<double> re(half + 1), im(half + 1);
    for (int iz = 0; iz < nz; ++iz) {
      dft.forward(f.data() + static_cast<std::size_t>(iz) * nx, re.data(), im.data());
      for (int k = 0; k <= half; ++k) {
        fre[static_cast<std::size_t>(k) * nz + iz] = re[k];
        fim[static_cast<std::size_t>(k) * nz + iz] = im[k];
      }
    }
  }

  const double idz2 = 1.0 / (dz * dz);
  std::vector<double> a(nz), b(nz), c(nz), rhs(nz);
  for (int k = 0; k <= half; ++k) {
    const double lam = (2.0 * std::cos(2.0 * M_PI * k / nx) - 2.0) / (dx * dx);
    for (int part = 0; part < 2; ++part) {
      double* spec = (part == 0 ? fre.data() : fim.data()) + static_cast<std::size_t>(k) * nz;
      for (int iz = 0; iz < nz; ++iz) {
        a[iz] = idz2;
        c[iz] = idz2;
        b[iz] = lam - 2.0 * idz2;
        rhs[iz] = spec[iz];
      }
      // Homogeneous Neumann: fold the ghost rows into the wall diagonals.
      b[0] += idz2;
      b[nz - 1] += idz2;
      a[0] = c[nz - 1] = 0.0;
      if (k == 0) {
        // Singular mode: project out the compatibility defect and gauge-fix
        // the last unknown to zero; the dropped equation is then implied.
        double mean = 0.0;
        for (int iz = 0; iz < nz; ++iz) mean += rhs[iz];
        mean /= nz;
        for (int iz = 0; iz < nz; ++iz) rhs[iz] -= mean;
        a[nz - 1] = 0.0;
        b[nz - 1] = 1.0;
        rhs[nz - 1] = 0.0;
        c[nz - 2] = 0.0;  // decouple the gauge row (its value is already 0)
      }
      thomas(a, b, c, rhs);
      for (int iz = 0; iz < nz; ++iz) spec[iz] = rhs[iz];
    }
  }

  std::vector<double> phi(static_cast<std::size_t>(nz) * nx);
  {
    std::vector<double> re(half + 1), im(half + 1);
    for (int iz = 0; iz < nz; ++iz) {
      for (int k = 0; k <= half; ++k) {
        re[k] = fre[static_cast<std::size_t>(k) * nz + iz];
        im[k] = fim[static_cast<std::size_t>(k) * nz + iz];
      }
      dft.inverse(re.data(), im.data(), phi.data() + static_cast<std::size_t>(iz) * nx);
    }
  }
  double mean = 0.0;
  for (double v : phi) mean += v;
  mean /= static_cast<double>(phi.size());
  for (double& v : phi) v -= mean;
  return phi;
}

namespace {

// Solver scratch state on the staggered grid:
//   u[iz*nx + ix]   at (ix*dx,        (iz+1/2)*dz), iz in [0, nz)
//   w[iz*nx + ix]   at ((ix+1/2)*dx,  iz*dz),       iz in [0, nz]
//   th, p (centers) at ((ix+1/2)*dx,  (iz+1/2)*dz)
// th is the temperature deviation from the conduction profile 1 - z.
struct RbState {
  int nz, nx;
  double dx, dz;
  std::vector<double> u, w, th, p;

  RbState(int nz_, int nx_, double dx_, double dz_)
      : nz(nz_),
        nx(nx_),
        dx(dx_),
        dz(dz_),
        u(static_cast<std::size_t>(nz) * nx, 0.0),
        w(static_cast<std::size_t>(nz + 1) * nx, 0.0),
        th(static_cast<std::size_t>(nz) * nx, 0.0),
        p(static_cast<std::size_t>(nz) * nx, 0.0) {}

  int ixp(int ix) const { return ix + 1 == nx ? 0 : ix + 1; }
  int ixm(int ix) const { return ix == 0 ? nx - 1 : ix - 1; }
  double& at(std::vector<double>& q, int iz, int ix) const {
    return q[static_cast<std::size_t>(iz) * nx + ix];
  }
  double at(const std::vector<double>& q, int iz, int ix) const {
    return q[static_cast<std::size_t>(iz) * nx + ix];
  }
};

struct RbRhs {
  std::vector<double> fu, fw, fth;
};

// Advective + diffusive + buoyancy tendencies (everything except pressure).
void tendencies(const RbState& s, const PhysicsParams& par, RbRhs& out) {
  const int nz = s.nz, nx = s.nx;
  const double idx = 1.0 / s.dx, idz = 1.0 / s.dz;
  const double idx2 = idx * idx, idz2 = idz * idz;
  out.fu.assign(s.u.size(), 0.0);
  out.fw.assign(s.w.size(), 0.0);
  out.fth.assign(s.th.size(), 0.0);

  for (int iz = 0; iz < nz; ++iz) {
    for (int ix = 0; ix < nx; ++ix) {
      const int xp = s.ixp(ix), xm = s.ixm(ix);
      const double uc = s.at(s.u, iz, ix);
      // No-slip ghosts reflect u so the wall value vanishes.
      const double uup = iz + 1 < nz ? s.at(s.u, iz + 1, ix) : -uc;
      const double udn = iz > 0 ? s.at(s.u, iz - 1, ix) : -uc;
      const double wbar = 0.25 * (s.at(s.w, iz, xm) + s.at(s.w, iz, ix) +
                                  s.at(s.w, iz + 1, xm) + s.at(s.w, iz + 1, ix));
      const double dudx = 0.5 * idx * (s.at(s.u, iz, xp) - s.at(s.u, iz, xm));
      const double dudz = 0.5 * idz * (uup - udn);
      const double lap = idx2 * (s.at(s.u, iz, xp) - 2.0 * uc + s.at(s.u, iz, xm)) +
                         idz2 * (uup - 2.0 * uc + udn);
      s.at(out.fu, iz, ix) = -(uc * dudx + wbar * dudz) + par.r_star() * lap;
    }
  }

  for (int iz = 1; iz < nz; ++iz) {  // wall rows stay zero
    for (int ix = 0; ix < nx; ++ix) {
      const int xp = s.ixp(ix), xm = s.ixm(ix);
      const double wc = s.at(s.w, iz, ix);
      const double ubar = 0.25 * (s.at(s.u, iz - 1, ix) + s.at(s.u, iz - 1, xp) +
                                  s.at(s.u, iz, ix) + s.at(s.u, iz, xp));
      const double dwdx = 0.5 * idx * (s.at(s.w, iz, xp) - s.at(s.w, iz, xm));
      const double dwdz = 0.5 * idz * (s.at(s.w, iz + 1, ix) - s.at(s.w, iz - 1, ix));
      const double lap = idx2 * (s.at(s.w, iz, xp) - 2.0 * wc + s.at(s.w, iz, xm)) +
                         idz2 * (s.at(s.w, iz + 1, ix) - 2.0 * wc + s.at(s.w, iz - 1, ix));
      const double buoy = 0.5 * (s.at(s.th, iz - 1, ix) + s.at(s.th, iz, ix));
      s.at(out.fw, iz, ix) = -(ubar * dwdx + wc * dwdz) + buoy + par.r_star() * lap;
    }
  }

  for (int iz = 0; iz < nz; ++iz) {
    for (int ix = 0; ix < nx; ++ix) {
      const int xp = s.ixp(ix), xm = s.ixm(ix);
      const double tc = s.at(s.th, iz, ix);
      // Dirichlet ghosts: deviation temperature vanishes on both plates.
      const double tup = iz + 1 < nz ? s.at(s.th, iz + 1, ix) : -tc;
      const double tdn = iz > 0 ? s.at(s.th, iz - 1, ix) : -tc;
      const double ucen = 0.5 * (s.at(s.u, iz, ix) + s.at(s.u, iz, xp));
      const double wcen = 0.5 * (s.at(s.w, iz, ix) + s.at(s.w, iz + 1, ix));
      const double dtdx = 0.5 * idx * (s.at(s.th, iz, xp) - s.at(s.th, iz, xm));
      const double dtdz = 0.5 * idz * (tup - tdn);
      const double lap = idx2 * (s.at(s.th, iz, xp) - 2.0 * tc + s.at(s.th, iz, xm)) +
                         idz2 * (tup - 2.0 * tc + tdn);
      // +wcen: advection against the conduction gradient d(1-z)/dz = -1.
      s.at(out.fth, iz, ix) = -(ucen * dtdx + wcen * dtdz) + wcen + par.p_star() * lap;
    }
  }
}

void store_frame(const RbState& s, Field4& out, int frame) {
  const int nz = s.nz, nx = s.nx;
  double pmean = 0.0;
  std::vector<double> pcell(static_cast<std::size_t>(nz) * nx);
  for (int iz = 0; iz < nz; ++iz) {
    const double zc = (iz + 0.5) * s.dz;
    for (int ix = 0; ix < nx; ++ix) {
      // Restore the hydrostatic part absorbed into the projection pressure:
      // dP/dz = 1 - z  =>  P = z - z^2/2.
      const double v = s.at(s.p, iz, ix) + (zc - 0.5 * zc * zc);
      pcell[static_cast<std::size_t>(iz) * nx + ix] = v;
      pmean += v;
    }
  }
  pmean /= static_cast<double>(pcell.size());
  for (int iz = 0; iz < nz; ++iz) {
    const double zc = (iz + 0.5) * s.dz;
    for (int ix = 0; ix < nx; ++ix) {
      out.at(kChanP, frame, iz, ix) = pcell[static_cast<std::size_t>(iz) * nx + ix] - pmean;
      out.at(kChanT, frame, iz, ix) = s.at(s.th, iz, ix) + (1.0 - zc);
      out.at(kChanU, frame, iz, ix) = 0.5 * (s.at(s.u, iz, ix) + s.at(s.u, iz, s.ixp(ix)));
      out.at(kChanW, frame, iz, ix) = 0.5 * (s.at(s.w, iz, ix) + s.at(s.w, iz + 1, ix));
    }
  }
}

}  // namespace

Field4 simulate_rb(const SimConfig& cfg, SimStats* stats) {
  cfg.validate();
  const int nz = cfg.nz, nx = cfg.nx;
  const double dx = cfg.lx / nx, dz = cfg.lz / nz;
  const PhysicsParams par(cfg.ra, cfg.pr);
  RbState s(nz, nx, dx, dz);

  // Conduction state plus a seeded interior temperature perturbation.
  Rng rng(cfg.seed);
  for (double& v : s.th) v = cfg.perturb_amp * rng.uniform(-1.0, 1.0);

  const int steps = cfg.steps();
  const int frames = cfg.frames();
  Field4 out = make_flow_field(frames, nz, nx, {cfg.dt * cfg.snapshot_every, dz, dx},
                               {0.0, 0.5 * dz, 0.5 * dx});
  store_frame(s, out, 0);

  RbRhs rhs, prev;
  std::vector<double> div(static_cast<std::size_t>(nz) * nx);
  SimStats local;
  log_info("simulate_rb: " + std::to_string(nz) + "x" + std::to_string(nx) + ", " +
           std::to_string(steps) + " steps, Ra " + std::to_string(cfg.ra));

  for (int step = 1; step <= steps; ++step) {
    // Advective CFL guard on the current state.
    double umax = 0.0, wmax = 0.0;
    for (double v : s.u) umax = std::max(umax, std::fabs(v));
    for (double v : s.w) wmax = std::max(wmax, std::fabs(v));
    const double cfl = cfg.dt * (umax / dx + wmax / dz);
    local.max_cfl = std::max(local.max_cfl, cfl);
    if (cfl > 1.0) {
      throw NumericError("simulate_rb: CFL " + std::to_string(cfl) + " > 1 at step " +
                         std::to_string(step) + "; reduce dt");
    }

    tendencies(s, par, rhs);
    const bool have_prev = step > 1;
    auto advance = [&](std::vector<double>& q, const std::vector<double>& f,
                       const std::vector<double>& fp) {
      if (have_prev) {
        for (std::size_t i = 0; i < q.size(); ++i) {
          q[i] += cfg.dt * (1.5 * f[i] - 0.5 * fp[i]);
        }
      } else {
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += cfg.dt * f[i];
      }
    };
    advance(s.u, rhs.fu, prev.fu);
    advance(s.w, rhs.fw, prev.fw);
    advance(s.th, rhs.fth, prev.fth);
    std::swap(prev, rhs);

    // Projection: remove the divergence of the predicted velocity.
    for (int iz = 0; iz < nz; ++iz) {
      for (int ix = 0; ix < nx; ++ix) {
        div[static_cast<std::size_t>(iz) * nx + ix] =
            (s.at(s.u, iz, s.ixp(ix)) - s.at(s.u, iz, ix)) / dx +
            (s.at(s.w, iz + 1, ix) - s.at(s.w, iz, ix)) / dz;
      }
    }
    for (double& v : div) v /= cfg.dt;
    std::vector<double> phi = poisson_xperiodic_zneumann(div, nz, nx, dz, dx);
    for (int iz = 0; iz < nz; ++iz) {
      for (int ix = 0; ix < nx; ++ix) {
        s.at(s.u, iz, ix) -=
            cfg.dt * (phi[static_cast<std::size_t>(iz) * nx + ix] -
                      phi[static_cast<std::size_t>(iz) * nx + s.ixm(ix)]) /
            dx;
      }
    }
    for (int iz = 1; iz < nz; ++iz) {
      for (int ix = 0; ix < nx; ++ix) {
        s.at(s.w, iz, ix) -= cfg.dt *
                             (phi[static_cast<std::size_t>(iz) * nx + ix] -
                              phi[static_cast<std::size_t>(iz - 1) * nx + ix]) /
                             dz;
      }
    }
    s.p = std::move(phi);

    for (int iz = 0; iz < nz; ++iz) {
      for (int ix = 0; ix < nx; ++ix) {
        const double d = (s.at(s.u, iz, s.ixp(ix)) - s.at(s.u, iz, ix)) / dx +
                         (s.at(s.w, iz + 1, ix) - s.at(s.w, iz, ix)) / dz;
        local.max_divergence = std::max(local.max_divergence, std::fabs(d));
      }
    }

    if (step % cfg.snapshot_every == 0) {
      const int frame = step / cfg.snapshot_every;
      if (frame < frames) store_frame(s, out, frame);
      for (double v : s.th) {
        if (!std::isfinite(v)) {
          throw NumericError("simulate_rb: non-finite temperature at step " +
                             std::to_string(step));
        }
      }
      for (double v : s.u) {
        if (!std::isfinite(v)) {
          throw NumericError("simulate_rb: non-finite velocity at step " +
                             std::to_string(step));
        }
      }
      log_debug("simulate_rb: step " + std::to_string(step) + ", cfl " +
                std::to_string(local.max_cfl));
    }
  }

  if (stats) *stats = local;
  log_info("simulate_rb: done, max divergence " + std::to_string(local.max_divergence) +
           ", max CFL " + std::to_string(local.max_cfl));
  return out;
}

}  // namespace mfsr
