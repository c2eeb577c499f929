#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mfsr/rng.hpp"
#include "mfsr/tensor.hpp"

namespace mfsr {

// Checkpointable parameter handle: tensors are shared, so mutating through a
// parameter list mutates the owning model.
struct NamedParam {
  std::string name;
  ad::Tensor tensor;
};

struct ConvParam {
  ad::Tensor w;
  ad::Tensor b;
};

struct NormParam {
  ad::Tensor gamma;
  ad::Tensor beta;
};

struct LinearParam {
  ad::Tensor w;
  ad::Tensor b;
};

// Kaiming-uniform fan-in initialization: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
inline void kaiming_uniform(ad::Tensor& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  double* p = w.data();
  for (int i = 0; i < w.size(); ++i) p[i] = rng.uniform(-bound, bound);
}

inline ConvParam make_conv(int c_out, int c_in, int k, Rng& rng) {
  ConvParam p;
  p.w = ad::Tensor({c_out, c_in, k, k, k});
  kaiming_uniform(p.w, c_in * k * k * k, rng);
  p.b = ad::Tensor({c_out});
  p.w.set_requires_grad();
  p.b.set_requires_grad();
  return p;
}

inline NormParam make_norm(int c) {
  NormParam p;
  p.gamma = ad::Tensor({c}, 1.0);
  p.beta = ad::Tensor({c}, 0.0);
  p.gamma.set_requires_grad();
  p.beta.set_requires_grad();
  return p;
}

inline LinearParam make_linear(int n_out, int n_in, Rng& rng) {
  LinearParam p;
  p.w = ad::Tensor({n_out, n_in});
  kaiming_uniform(p.w, n_in, rng);
  p.b = ad::Tensor({n_out});
  p.w.set_requires_grad();
  p.b.set_requires_grad();
  return p;
}

inline long param_count(const std::vector<NamedParam>& params) {
  long n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

}  // namespace mfsr
