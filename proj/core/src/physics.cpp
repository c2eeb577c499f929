#include "mfsr/physics.hpp"

#include <map>
#include <mutex>
#include <stdexcept>

#include "mfsr/field.hpp"

namespace mfsr {

PhysicsParams::PhysicsParams(double ra_, double pr_) : ra(ra_), pr(pr_) {
  if (!(ra > 0.0) || !(pr > 0.0)) {
    throw std::invalid_argument("PhysicsParams: Ra and Pr must be positive");
  }
}

ResidualVector rb_residuals_point(const ScalarDerivs& p, const ScalarDerivs& T,
                                  const ScalarDerivs& u, const ScalarDerivs& w,
                                  const PhysicsParams& params) {
  const double rs = params.r_star();
  const double ps = params.p_star();
  ResidualVector r;
  r.continuity = u.d1[kAxisX] + w.d1[kAxisZ];
  r.momentum_x = u.d1[kAxisT] + u.v * u.d1[kAxisX] + w.v * u.d1[kAxisZ] + p.d1[kAxisX] -
                 rs * (u.zz + u.xx);
  r.momentum_z = w.d1[kAxisT] + u.v * w.d1[kAxisX] + w.v * w.d1[kAxisZ] + p.d1[kAxisZ] -
                 T.v - rs * (w.zz + w.xx);
  r.temperature = T.d1[kAxisT] + u.v * T.d1[kAxisX] + w.v * T.d1[kAxisZ] -
                  ps * (T.zz + T.xx);
  return r;
}

namespace {

using ad::add;
using ad::add_weighted;
using ad::column;
using ad::mul;
using ad::sub;
using ad::Tensor;

// adv(f) = u df/dx + w df/dz
Tensor advection(const FieldJets& j, int chan) {
  const auto c = static_cast<std::size_t>(chan);
  return add(mul(j.v[kChanU], j.d1[c][kAxisX]), mul(j.v[kChanW], j.d1[c][kAxisZ]));
}

Tensor laplacian(const FieldJets& j, int chan) {
  const auto c = static_cast<std::size_t>(chan);
  return add(j.zz[c], j.xx[c]);
}

}  // namespace

ResidualBatch rb_residuals(const FieldJets& jets, const PhysicsParams& params,
                           const ad::Tensor& source) {
  for (int c = 0; c < 4; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (!jets.v[ci].defined() || !jets.zz[ci].defined() || !jets.xx[ci].defined()) {
      throw std::invalid_argument("rb_residuals: missing channel derivatives");
    }
  }
  const double rs = params.r_star();
  const double ps = params.p_star();

  ResidualBatch r;
  r.continuity = add(jets.d1[kChanU][kAxisX], jets.d1[kChanW][kAxisZ]);

  Tensor mx = add(jets.d1[kChanU][kAxisT], advection(jets, kChanU));
  mx = add(mx, jets.d1[kChanP][kAxisX]);
  r.momentum_x = add_weighted(mx, 1.0, laplacian(jets, kChanU), -rs);

  Tensor mz = add(jets.d1[kChanW][kAxisT], advection(jets, kChanW));
  mz = add(mz, sub(jets.d1[kChanP][kAxisZ], jets.v[kChanT]));
  r.momentum_z = add_weighted(mz, 1.0, laplacian(jets, kChanW), -rs);

  Tensor te = add(jets.d1[kChanT][kAxisT], advection(jets, kChanT));
  r.temperature = add_weighted(te, 1.0, laplacian(jets, kChanT), -ps);

  if (source.defined()) {
    const int n = r.continuity.size();
    if (source.rank() != 2 || source.extent(0) != n || source.extent(1) != 4) {
      throw std::invalid_argument("rb_residuals: source must be [N, 4]");
    }
    r.continuity = sub(r.continuity, column(source, 0));
    r.momentum_x = sub(r.momentum_x, column(source, 1));
    r.momentum_z = sub(r.momentum_z, column(source, 2));
    r.temperature = sub(r.temperature, column(source, 3));
  }
  return r;
}

namespace {

std::map<std::string, ResidualOp>& registry() {
  static std::map<std::string, ResidualOp> ops = {
      {"rayleigh_benard_2d",
       [](const FieldJets& j, const PhysicsParams& p, const ad::Tensor& s) {
         return rb_residuals(j, p, s);
       }},
  };
  return ops;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

ResidualOp residual_operator(const std::string& pde_id) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  auto it = registry().find(pde_id);
  if (it == registry().end()) {
    throw std::invalid_argument("residual_operator: unknown pde id '" + pde_id + "'");
  }
  return it->second;
}

void register_residual_operator(const std::string& pde_id, ResidualOp op) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  registry()[pde_id] = std::move(op);
}

std::vector<std::string> registered_pde_ids() {
  std::lock_guard<std::mutex> lock(registry_mutex());
  std::vector<std::string> ids;
  for (const auto& [id, op] : registry()) ids.push_back(id);
  return ids;
}

}  // namespace mfsr
