#include "mfsr/jet.hpp"

#include <stdexcept>

namespace mfsr::ad {

namespace {

// Row/col of each packed slot.
constexpr int kSymI[6] = {0, 0, 0, 1, 1, 2};
constexpr int kSymJ[6] = {0, 1, 2, 1, 2, 2};

void require_jet(const Jet& a, const char* op) {
  if (!a.v.defined()) throw std::invalid_argument(std::string(op) + ": undefined jet value");
  for (int k = 0; k < 3; ++k) {
    if (!a.d1[static_cast<std::size_t>(k)].defined()) {
      throw std::invalid_argument(std::string(op) + ": jet d1 components must all be defined");
    }
  }
}

}  // namespace

int Jet::sym_index(int i, int j) {
  if (i > j) std::swap(i, j);
  if (i < 0 || j > 2) throw std::invalid_argument("Jet::sym_index: axis out of range");
  // (0,0)=0 (0,1)=1 (0,2)=2 (1,1)=3 (1,2)=4 (2,2)=5
  return i == 0 ? j : (i == 1 ? 2 + j : 5);
}

Jet jet_constant(const Tensor& v) {
  Jet out;
  out.v = v;
  for (auto& d : out.d1) d = Tensor(v.shape());
  for (auto& d : out.d2) d = Tensor(v.shape());
  return out;
}

Jet jet_var(double v, int axis) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("jet_var: axis out of range");
  Jet out = jet_constant(Tensor::scalar(v));
  out.d1[static_cast<std::size_t>(axis)] = Tensor::scalar(1.0);
  return out;
}

Jet jet_add(const Jet& a, const Jet& b) {
  require_jet(a, "jet_add");
  require_jet(b, "jet_add");
  Jet out;
  out.v = add(a.v, b.v);
  for (int k = 0; k < 3; ++k) {
    out.d1[static_cast<std::size_t>(k)] =
        add(a.d1[static_cast<std::size_t>(k)], b.d1[static_cast<std::size_t>(k)]);
  }
  for (int m = 0; m < 6; ++m) {
    const auto& am = a.d2[static_cast<std::size_t>(m)];
    const auto& bm = b.d2[static_cast<std::size_t>(m)];
    if (am.defined() && bm.defined()) out.d2[static_cast<std::size_t>(m)] = add(am, bm);
  }
  return out;
}

Jet jet_sub(const Jet& a, const Jet& b) {
  require_jet(a, "jet_sub");
  require_jet(b, "jet_sub");
  Jet out;
  out.v = sub(a.v, b.v);
  for (int k = 0; k < 3; ++k) {
    out.d1[static_cast<std::size_t>(k)] =
        sub(a.d1[static_cast<std::size_t>(k)], b.d1[static_cast<std::size_t>(k)]);
  }
  for (int m = 0; m < 6; ++m) {
    const auto& am = a.d2[static_cast<std::size_t>(m)];
    const auto& bm = b.d2[static_cast<std::size_t>(m)];
    if (am.defined() && bm.defined()) out.d2[static_cast<std::size_t>(m)] = sub(am, bm);
  }
  return out;
}

Jet jet_mul(const Jet& a, const Jet& b) {
  require_jet(a, "jet_mul");
  require_jet(b, "jet_mul");
  Jet out;
  out.v = mul(a.v, b.v);
  for (int k = 0; k < 3; ++k) {
    const auto& ak = a.d1[static_cast<std::size_t>(k)];
    const auto& bk = b.d1[static_cast<std::size_t>(k)];
    out.d1[static_cast<std::size_t>(k)] = add(mul(ak, b.v), mul(a.v, bk));
  }
  for (int m = 0; m < 6; ++m) {
    const auto& am = a.d2[static_cast<std::size_t>(m)];
    const auto& bm = b.d2[static_cast<std::size_t>(m)];
    if (!am.defined() || !bm.defined()) continue;
    const int i = kSymI[m], j = kSymJ[m];
    // (ab)'' = a'' b + a'_i b'_j + a'_j b'_i + a b''
    Tensor term = add(mul(am, b.v), mul(a.v, bm));
    term = add(term, mul(a.d1[static_cast<std::size_t>(i)], b.d1[static_cast<std::size_t>(j)]));
    term = add(term, mul(a.d1[static_cast<std::size_t>(j)], b.d1[static_cast<std::size_t>(i)]));
    out.d2[static_cast<std::size_t>(m)] = term;
  }
  return out;
}

Jet jet_scale(const Jet& a, double c) {
  require_jet(a, "jet_scale");
  Jet out;
  out.v = mul_scalar(a.v, c);
  for (int k = 0; k < 3; ++k) {
    out.d1[static_cast<std::size_t>(k)] = mul_scalar(a.d1[static_cast<std::size_t>(k)], c);
  }
  for (int m = 0; m < 6; ++m) {
    const auto& am = a.d2[static_cast<std::size_t>(m)];
    if (am.defined()) out.d2[static_cast<std::size_t>(m)] = mul_scalar(am, c);
  }
  return out;
}

Jet jet_add_const(const Jet& a, double c) {
  require_jet(a, "jet_add_const");
  Jet out = a;
  out.v = add_scalar(a.v, c);
  return out;
}

Jet jet_linear(const Jet& x, const Tensor& w, const Tensor& b) {
  require_jet(x, "jet_linear");
  Jet out;
  out.v = linear(x.v, w, b);
  for (int k = 0; k < 3; ++k) {
    out.d1[static_cast<std::size_t>(k)] = linear(x.d1[static_cast<std::size_t>(k)], w, Tensor());
  }
  for (int m = 0; m < 6; ++m) {
    const auto& xm = x.d2[static_cast<std::size_t>(m)];
    if (xm.defined()) out.d2[static_cast<std::size_t>(m)] = linear(xm, w, Tensor());
  }
  return out;
}

Unary activation_unary(Activation act, int deriv_order) {
  switch (act) {
    case Activation::Swish:
      return deriv_order == 0 ? Unary::Swish
                              : (deriv_order == 1 ? Unary::SwishD1 : Unary::SwishD2);
    case Activation::Softplus:
      return deriv_order == 0 ? Unary::Softplus
                              : (deriv_order == 1 ? Unary::SoftplusD1 : Unary::SoftplusD2);
    case Activation::Relu:
      if (deriv_order == 0) return Unary::Relu;
      throw std::invalid_argument("relu has no smooth derivatives");
  }
  throw std::invalid_argument("unknown activation");
}

Jet jet_activation(const Jet& x, Activation act) {
  require_jet(x, "jet_activation");
  if (act == Activation::Relu) {
    throw std::invalid_argument(
        "jet_activation: relu is not twice differentiable; equation residuals "
        "require softplus or swish");
  }
  const Unary f0 = activation_unary(act, 0);
  const Unary f1 = activation_unary(act, 1);
  const Unary f2 = activation_unary(act, 2);

  Jet out;
  out.v = unary(x.v, f0);
  const Tensor fp = unary(x.v, f1);
  out.d1[0] = mul(fp, x.d1[0]);
  out.d1[1] = mul(fp, x.d1[1]);
  out.d1[2] = mul(fp, x.d1[2]);

  bool any_d2 = false;
  for (const auto& m : x.d2) any_d2 = any_d2 || m.defined();
  if (any_d2) {
    const Tensor fpp = unary(x.v, f2);
    for (int m = 0; m < 6; ++m) {
      const auto& xm = x.d2[static_cast<std::size_t>(m)];
      if (!xm.defined()) continue;
      const int i = kSymI[m], j = kSymJ[m];
      out.d2[static_cast<std::size_t>(m)] =
          add(mul(fpp, mul(x.d1[static_cast<std::size_t>(i)], x.d1[static_cast<std::size_t>(j)])),
              mul(fp, xm));
    }
  }
  return out;
}

Jet jet_concat_cols(const Jet& a, const Jet& b) {
  require_jet(a, "jet_concat_cols");
  require_jet(b, "jet_concat_cols");
  Jet out;
  out.v = concat_cols(a.v, b.v);
  for (int k = 0; k < 3; ++k) {
    out.d1[static_cast<std::size_t>(k)] =
        concat_cols(a.d1[static_cast<std::size_t>(k)], b.d1[static_cast<std::size_t>(k)]);
  }
  for (int m = 0; m < 6; ++m) {
    const auto& am = a.d2[static_cast<std::size_t>(m)];
    const auto& bm = b.d2[static_cast<std::size_t>(m)];
    if (am.defined() && bm.defined()) {
      out.d2[static_cast<std::size_t>(m)] = concat_cols(am, bm);
    }
  }
  return out;
}

}  // namespace mfsr::ad
