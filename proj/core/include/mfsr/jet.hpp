#pragma once

#include <array>

#include "mfsr/tensor.hpp"

namespace mfsr::ad {

// Forward-mode second-order element over the coordinates (t, z, x): a value
// together with its first derivatives and the symmetric second-derivative
// matrix. Components are tensors, so one Jet carries a whole batch of query
// points, and because components are built from tape ops they remain
// differentiable w.r.t. network parameters — reverse-mode through
// forward-mode, which is how equation residuals receive gradients.
//
// Second derivatives use the symmetric packing (tt, tz, tx, zz, zx, xx).
// A d2 slot may be left undefined, meaning "not propagated": ops fill an
// output slot only when every operand defines it. First derivatives are
// always all three. This lets the decoder carry just the (zz, xx) pair the
// residuals need while scalar jets carry the full matrix.
struct Jet {
  Tensor v;
  std::array<Tensor, 3> d1;
  std::array<Tensor, 6> d2;

  static constexpr int kTT = 0, kTZ = 1, kTX = 2, kZZ = 3, kZX = 4, kXX = 5;
  static int sym_index(int i, int j);

  // Scalar accessors (size-1 components).
  double value() const { return v.item(); }
  double deriv1(int axis) const { return d1[static_cast<std::size_t>(axis)].item(); }
  double deriv2(int i, int j) const {
    return d2[static_cast<std::size_t>(sym_index(i, j))].item();
  }
};

// Constant with the shape of v: all derivatives zero (full d2 set).
Jet jet_constant(const Tensor& v);

// Scalar coordinate seed: value v, unit first derivative along `axis`.
Jet jet_var(double v, int axis);

Jet jet_add(const Jet& a, const Jet& b);
Jet jet_sub(const Jet& a, const Jet& b);
Jet jet_mul(const Jet& a, const Jet& b);  // full product rule
Jet jet_scale(const Jet& a, double c);
Jet jet_add_const(const Jet& a, double c);

inline Jet operator+(const Jet& a, const Jet& b) { return jet_add(a, b); }
inline Jet operator-(const Jet& a, const Jet& b) { return jet_sub(a, b); }
inline Jet operator*(const Jet& a, const Jet& b) { return jet_mul(a, b); }

// Affine layer on a batched jet [R, n_in] -> [R, n_out]; the bias enters the
// value component only.
Jet jet_linear(const Jet& x, const Tensor& w, const Tensor& b);

enum class Activation { Swish, Softplus, Relu };

// Elementwise activation via the chain rule:
//   y'' = f''(x) x'_i x'_j + f'(x) x''_ij.
// Relu is rejected: its second derivative does not exist at the kink, so it
// cannot appear on any path feeding equation residuals.
Jet jet_activation(const Jet& x, Activation act);

// Column concatenation of batched jets, componentwise.
Jet jet_concat_cols(const Jet& a, const Jet& b);

Unary activation_unary(Activation act, int deriv_order);

}  // namespace mfsr::ad
