#pragma once

#include <cstdint>
#include <vector>

#include "mfsr/field.hpp"

namespace mfsr {

// Desk-scale Rayleigh-Benard run description. The box is [0, lx] x [0, lz]
// with a hot bottom plate (T = 1) and a cold top plate (T = 0), periodic in
// x and no-slip in z. Fields are stored at cell centers, so z runs over
// (iz + 1/2) * lz / nz and likewise in x.
struct SimConfig {
  double ra = 1e5;
  double pr = 1.0;
  int nx = 128;
  int nz = 32;
  double lx = 4.0;
  double lz = 1.0;
  double t_final = 50.4;
  double dt = 5e-3;
  int snapshot_every = 160;  // steps between stored frames (frame 0 = initial state)
  std::uint64_t seed = 0;
  double perturb_amp = 0.05;  // initial temperature perturbation amplitude

  int steps() const;   // time steps implied by t_final / dt
  int frames() const;  // stored frames, including the initial state
  void validate() const;
};

// The 32x128, 64-frame Ra = 1e5 configuration used by the evaluation runs.
SimConfig desk_sim_config();

// Cell-centered Poisson solve: lap(phi) = f with periodic x and homogeneous
// Neumann z, via a DFT in x and a tridiagonal solve per wavenumber in z.
// f is [nz * nx] row-major; the returned phi has zero mean (gauge choice;
// the k = 0 compatibility defect of f is projected out).
std::vector<double> poisson_xperiodic_zneumann(const std::vector<double>& f, int nz, int nx,
                                               double dz, double dx);

// Per-run diagnostics: worst post-projection divergence and advective CFL
// number seen across all steps.
struct SimStats {
  double max_divergence = 0.0;
  double max_cfl = 0.0;
};

// Second-order finite-difference MAC solver for the Rayleigh-Benard system:
// explicit Adams-Bashforth advection/diffusion/buoyancy with a pressure
// projection each step. Evolves the temperature deviation from the
// conduction profile, so the quiescent conduction state is preserved
// exactly. Returns the stored frames as a [p, T, u, w] flow field.
Field4 simulate_rb(const SimConfig& cfg, SimStats* stats = nullptr);

}  // namespace mfsr
