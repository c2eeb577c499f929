#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mfsr/tensor.hpp"

namespace mfsr {

// Nondimensional Rayleigh-Bénard parameter group. The derived coefficients
// are always recomputed from (Ra, Pr) so they can never go stale:
//   p_star = (Ra·Pr)^(-1/2)   (thermal diffusion coefficient)
//   r_star = (Ra/Pr)^(-1/2)   (momentum diffusion coefficient)
struct PhysicsParams {
  double ra = 1e5;
  double pr = 1.0;

  PhysicsParams() = default;
  PhysicsParams(double ra_, double pr_);

  double p_star() const { return 1.0 / std::sqrt(ra * pr); }
  double r_star() const { return std::sqrt(pr / ra); }
  // Effective kinematic viscosity used by the turbulence metrics.
  double nu_eff() const { return r_star(); }
};

// Pointwise channel state: value, first derivatives over (t, z, x), and the
// two spatial second derivatives that appear in the diffusion terms.
struct ScalarDerivs {
  double v = 0.0;
  std::array<double, 3> d1{0.0, 0.0, 0.0};
  double zz = 0.0;
  double xx = 0.0;
};

struct ResidualVector {
  double continuity;
  double momentum_x;
  double momentum_z;
  double temperature;
};

// Plain-valued residuals, the oracle-friendly form:
//   continuity:  du/dx + dw/dz
//   momentum_x:  du/dt + u du/dx + w du/dz + dp/dx - r_star (u_zz + u_xx)
//   momentum_z:  dw/dt + u dw/dx + w dw/dz + dp/dz - T - r_star (w_zz + w_xx)
//   temperature: dT/dt + u dT/dx + w dT/dz - p_star (T_zz + T_xx)
ResidualVector rb_residuals_point(const ScalarDerivs& p, const ScalarDerivs& T,
                                  const ScalarDerivs& u, const ScalarDerivs& w,
                                  const PhysicsParams& params);

// Batched taped form: per-channel [N] columns in physical units. Indexed by
// the kChan* constants of field.hpp.
struct FieldJets {
  std::array<ad::Tensor, 4> v;
  std::array<std::array<ad::Tensor, 3>, 4> d1;
  std::array<ad::Tensor, 4> zz;
  std::array<ad::Tensor, 4> xx;
};

struct ResidualBatch {
  ad::Tensor continuity;
  ad::Tensor momentum_x;
  ad::Tensor momentum_z;
  ad::Tensor temperature;
};

// Optional manufactured source: [N, 4] (one column per equation, same order
// as ResidualBatch) subtracted from the residuals. Undefined means zero,
// which is the physical case.
ResidualBatch rb_residuals(const FieldJets& jets, const PhysicsParams& params,
                           const ad::Tensor& source = ad::Tensor());

// PDE registry. Only "rayleigh_benard_2d" ships, but callers can register
// additional residual operators under new ids.
using ResidualOp =
    std::function<ResidualBatch(const FieldJets&, const PhysicsParams&, const ad::Tensor&)>;

ResidualOp residual_operator(const std::string& pde_id);  // throws on unknown id
void register_residual_operator(const std::string& pde_id, ResidualOp op);
std::vector<std::string> registered_pde_ids();

}  // namespace mfsr
