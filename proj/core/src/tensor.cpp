#include "mfsr/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>

#include "mfsr/errors.hpp"

namespace mfsr::ad {

namespace {

int checked_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must be non-empty");
  long long n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= e;
  }
  if (n > (1LL << 31)) throw std::invalid_argument("tensor too large");
  return static_cast<int>(n);
}

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << "]";
  return out.str();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<int> shape, double fill) {
  const int n = checked_numel(shape);
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) {
  const int n = checked_numel(shape);
  if (n != static_cast<int>(values.size())) {
    throw std::invalid_argument("tensor init: value count does not match shape");
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

double Tensor::item() const {
  require_defined(*this, "item");
  if (size() != 1) throw std::invalid_argument("item: tensor is not a scalar");
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  } else {
    impl_->grad.clear();
  }
  return *this;
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  require_defined(*this, "clone");
  Tensor out(impl_->shape, impl_->data);
  if (impl_->requires_grad) out.set_requires_grad(true);
  return out;
}

void Tensor::assert_finite(const std::string& what) const {
  require_defined(*this, "assert_finite");
  for (double v : impl_->data) {
    if (!std::isfinite(v)) throw NumericError(what + ": non-finite value encountered");
  }
}

// ---------------------------------------------------------------------------
// Tape

std::uint64_t Tape::next_epoch() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

void Tape::reset() {
  nodes_.clear();
  epoch_ = next_epoch();
}

bool Tape::differentiable(const Tensor& t) const {
  if (!t.defined()) return false;
  const TensorImpl& im = *t.impl();
  return im.requires_grad || (im.epoch == epoch_ && im.node >= 0);
}

int Tape::ensure_node(const Tensor& t) {
  if (!t.defined()) return -1;
  TensorImpl& im = *t.impl();
  if (im.epoch == epoch_ && im.node >= 0) return im.node;
  if (!im.requires_grad) return -1;
  // First use of a parameter leaf this generation: its backward flushes the
  // accumulated adjoint into the persistent .grad buffer.
  const int id = static_cast<int>(nodes_.size());
  std::shared_ptr<TensorImpl> impl = t.impl();
  nodes_.push_back(Node{{}, [impl](Tape&, const std::vector<double>& adj) {
                          double* g = impl->grad.data();
                          for (std::size_t i = 0; i < adj.size(); ++i) g[i] += adj[i];
                        }});
  im.node = id;
  im.epoch = epoch_;
  return id;
}

void Tape::record(Tensor& out, BackwardFn fn) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, std::move(fn)});
  out.impl()->node = id;
  out.impl()->epoch = epoch_;
}

std::vector<double>& Tape::adjoint(int node, int size) {
  Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.adj.empty()) n.adj.assign(static_cast<std::size_t>(size), 0.0);
  return n.adj;
}

void Tape::accumulate(int node, int size, const double* contrib) {
  std::vector<double>& a = adjoint(node, size);
  for (int i = 0; i < size; ++i) a[static_cast<std::size_t>(i)] += contrib[i];
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  const TensorImpl& im = *loss.impl();
  if (im.epoch != epoch_ || im.node < 0) {
    throw std::invalid_argument("backward: loss was not produced under this tape");
  }
  for (Node& n : nodes_) n.adj.clear();
  adjoint(im.node, 1)[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.adj.empty()) n.back(*this, n.adj);
  }
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }
void set_active_tape(Tape* tape) { g_active_tape = tape; }

void backward(const Tensor& loss) {
  if (g_active_tape == nullptr) {
    throw std::invalid_argument("backward: no active tape");
  }
  g_active_tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Scalar math helpers

double sigmoid_val(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_val(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double swish_val(double x) { return x * sigmoid_val(x); }

namespace {

// Derivative chain for sigmoid: s' = s(1-s), s'' = s'(1-2s), s''' = s''(1-2s) - 2s'^2.

double unary_value(Unary kind, double x) {
  switch (kind) {
    case Unary::Relu:
      return x > 0.0 ? x : 0.0;
    case Unary::Softplus:
      return softplus_val(x);
    case Unary::SoftplusD1:
      return sigmoid_val(x);
    case Unary::SoftplusD2: {
      const double s = sigmoid_val(x);
      return s * (1.0 - s);
    }
    case Unary::Swish:
      return swish_val(x);
    case Unary::SwishD1: {
      const double s = sigmoid_val(x);
      const double s1 = s * (1.0 - s);
      return s + x * s1;
    }
    case Unary::SwishD2: {
      const double s = sigmoid_val(x);
      const double s1 = s * (1.0 - s);
      const double s2 = s1 * (1.0 - 2.0 * s);
      return 2.0 * s1 + x * s2;
    }
    case Unary::Abs:
      return std::fabs(x);
    case Unary::Square:
      return x * x;
  }
  throw std::invalid_argument("unary: unknown kind");
}

double unary_deriv(Unary kind, double x) {
  switch (kind) {
    case Unary::Relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Unary::Softplus:
      return sigmoid_val(x);
    case Unary::SoftplusD1: {
      const double s = sigmoid_val(x);
      return s * (1.0 - s);
    }
    case Unary::SoftplusD2: {
      const double s = sigmoid_val(x);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    case Unary::Swish: {
      const double s = sigmoid_val(x);
      return s + x * s * (1.0 - s);
    }
    case Unary::SwishD1: {
      const double s = sigmoid_val(x);
      const double s1 = s * (1.0 - s);
      const double s2 = s1 * (1.0 - 2.0 * s);
      return 2.0 * s1 + x * s2;
    }
    case Unary::SwishD2: {
      const double s = sigmoid_val(x);
      const double s1 = s * (1.0 - s);
      const double s2 = s1 * (1.0 - 2.0 * s);
      const double s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
      return 3.0 * s2 + x * s3;
    }
    case Unary::Abs:
      return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    case Unary::Square:
      return 2.0 * x;
  }
  throw std::invalid_argument("unary: unknown kind");
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape(a, b, "add");
  const int n = a.size();
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(a) || tp->differentiable(b))) {
    const int na = tp->ensure_node(a);
    const int nb = tp->ensure_node(b);
    tp->record(out, [na, nb, n](Tape& t, const std::vector<double>& adj) {
      if (na >= 0) t.accumulate(na, n, adj.data());
      if (nb >= 0) t.accumulate(nb, n, adj.data());
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape(a, b, "sub");
  const int n = a.size();
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) po[i] = pa[i] - pb[i];

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(a) || tp->differentiable(b))) {
    const int na = tp->ensure_node(a);
    const int nb = tp->ensure_node(b);
    tp->record(out, [na, nb, n](Tape& t, const std::vector<double>& adj) {
      if (na >= 0) t.accumulate(na, n, adj.data());
      if (nb >= 0) {
        std::vector<double>& g = t.adjoint(nb, n);
        for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] -= adj[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape(a, b, "mul");
  const int n = a.size();
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) po[i] = pa[i] * pb[i];

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(a) || tp->differentiable(b))) {
    const int na = tp->ensure_node(a);
    const int nb = tp->ensure_node(b);
    auto ia = a.impl();
    auto ib = b.impl();
    tp->record(out, [na, nb, n, ia, ib](Tape& t, const std::vector<double>& adj) {
      if (na >= 0) {
        std::vector<double>& g = t.adjoint(na, n);
        const double* vb = ib->data.data();
        for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += adj[static_cast<std::size_t>(i)] * vb[i];
      }
      if (nb >= 0) {
        std::vector<double>& g = t.adjoint(nb, n);
        const double* va = ia->data.data();
        for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += adj[static_cast<std::size_t>(i)] * va[i];
      }
    });
  }
  return out;
}

Tensor add_weighted(const Tensor& a, double ca, const Tensor& b, double cb) {
  require_defined(a, "add_weighted");
  require_defined(b, "add_weighted");
  require_same_shape(a, b, "add_weighted");
  const int n = a.size();
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) po[i] = ca * pa[i] + cb * pb[i];

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(a) || tp->differentiable(b))) {
    const int na = tp->ensure_node(a);
    const int nb = tp->ensure_node(b);
    tp->record(out, [na, nb, n, ca, cb](Tape& t, const std::vector<double>& adj) {
      if (na >= 0) {
        std::vector<double>& g = t.adjoint(na, n);
        for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += ca * adj[static_cast<std::size_t>(i)];
      }
      if (nb >= 0) {
        std::vector<double>& g = t.adjoint(nb, n);
        for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += cb * adj[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  require_defined(a, "add_scalar");
  const int n = a.size();
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) po[i] = pa[i] + c;

  Tape* tp = active_tape();
  if (tp && tp->differentiable(a)) {
    const int na = tp->ensure_node(a);
    tp->record(out, [na, n](Tape& t, const std::vector<double>& adj) {
      t.accumulate(na, n, adj.data());
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  require_defined(a, "mul_scalar");
  const int n = a.size();
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) po[i] = c * pa[i];

  Tape* tp = active_tape();
  if (tp && tp->differentiable(a)) {
    const int na = tp->ensure_node(a);
    tp->record(out, [na, n, c](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(na, n);
      for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += c * adj[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor unary(const Tensor& a, Unary kind) {
  require_defined(a, "unary");
  const int n = a.size();
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) po[i] = unary_value(kind, pa[i]);

  Tape* tp = active_tape();
  if (tp && tp->differentiable(a)) {
    const int na = tp->ensure_node(a);
    auto ia = a.impl();
    tp->record(out, [na, n, kind, ia](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(na, n);
      const double* va = ia->data.data();
      for (int i = 0; i < n; ++i) {
        g[static_cast<std::size_t>(i)] += adj[static_cast<std::size_t>(i)] * unary_deriv(kind, va[i]);
      }
    });
  }
  return out;
}

Tensor huber(const Tensor& residual, double delta) {
  require_defined(residual, "huber");
  require(delta > 0.0, "huber: delta must be positive");
  const int n = residual.size();
  Tensor out(residual.shape());
  const double* pr = residual.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    const double r = pr[i];
    const double ar = std::fabs(r);
    po[i] = ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
  }

  Tape* tp = active_tape();
  if (tp && tp->differentiable(residual)) {
    const int na = tp->ensure_node(residual);
    auto ir = residual.impl();
    tp->record(out, [na, n, delta, ir](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(na, n);
      const double* vr = ir->data.data();
      for (int i = 0; i < n; ++i) {
        const double r = vr[i];
        const double d = r > delta ? delta : (r < -delta ? -delta : r);
        g[static_cast<std::size_t>(i)] += adj[static_cast<std::size_t>(i)] * d;
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const int n = a.size();
  const double* pa = a.data();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += pa[i];
  Tensor out = Tensor::scalar(s);

  Tape* tp = active_tape();
  if (tp && tp->differentiable(a)) {
    const int na = tp->ensure_node(a);
    tp->record(out, [na, n](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(na, n);
      const double a0 = adj[0];
      for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += a0;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  const int n = a.size();
  const double* pa = a.data();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += pa[i];
  Tensor out = Tensor::scalar(s / n);

  Tape* tp = active_tape();
  if (tp && tp->differentiable(a)) {
    const int na = tp->ensure_node(a);
    tp->record(out, [na, n](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(na, n);
      const double a0 = adj[0] / n;
      for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += a0;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  require(w.rank() == 2, "linear: weight must be [n_out, n_in]");
  const int n_out = w.extent(0);
  const int n_in = w.extent(1);
  require(x.rank() >= 1 && x.shape().back() == n_in,
          "linear: trailing input extent must equal n_in");
  if (b.defined()) {
    require(b.rank() == 1 && b.extent(0) == n_out, "linear: bias must be [n_out]");
  }
  const int rows = x.size() / n_in;

  std::vector<int> out_shape = x.shape();
  out_shape.back() = n_out;
  Tensor out(out_shape);

  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.defined() ? b.data() : nullptr;
  double* po = out.data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = px + static_cast<std::ptrdiff_t>(r) * n_in;
    double* orow = po + static_cast<std::ptrdiff_t>(r) * n_out;
    for (int o = 0; o < n_out; ++o) {
      const double* wr = pw + static_cast<std::ptrdiff_t>(o) * n_in;
      double acc = pb ? pb[o] : 0.0;
      for (int i = 0; i < n_in; ++i) acc += xr[i] * wr[i];
      orow[o] = acc;
    }
  }

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(x) || tp->differentiable(w) || tp->differentiable(b))) {
    const int nx = tp->ensure_node(x);
    const int nw = tp->ensure_node(w);
    const int nb = b.defined() ? tp->ensure_node(b) : -1;
    auto ix = x.impl();
    auto iw = w.impl();
    const int xsize = x.size();
    const int wsize = w.size();
    tp->record(out, [=](Tape& t, const std::vector<double>& adj) {
      const double* pa = adj.data();
      if (nb >= 0) {
        std::vector<double>& gb = t.adjoint(nb, n_out);
        for (int r = 0; r < rows; ++r) {
          const double* ar = pa + static_cast<std::ptrdiff_t>(r) * n_out;
          for (int o = 0; o < n_out; ++o) gb[static_cast<std::size_t>(o)] += ar[o];
        }
      }
      if (nw >= 0) {
        std::vector<double>& gw = t.adjoint(nw, wsize);
        const double* vx = ix->data.data();
        for (int r = 0; r < rows; ++r) {
          const double* ar = pa + static_cast<std::ptrdiff_t>(r) * n_out;
          const double* xr = vx + static_cast<std::ptrdiff_t>(r) * n_in;
          for (int o = 0; o < n_out; ++o) {
            const double a = ar[o];
            if (a == 0.0) continue;
            double* gwr = gw.data() + static_cast<std::ptrdiff_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) gwr[i] += a * xr[i];
          }
        }
      }
      if (nx >= 0) {
        std::vector<double>& gx = t.adjoint(nx, xsize);
        const double* vw = iw->data.data();
        for (int r = 0; r < rows; ++r) {
          const double* ar = pa + static_cast<std::ptrdiff_t>(r) * n_out;
          double* gxr = gx.data() + static_cast<std::ptrdiff_t>(r) * n_in;
          for (int o = 0; o < n_out; ++o) {
            const double a = ar[o];
            if (a == 0.0) continue;
            const double* wr = vw + static_cast<std::ptrdiff_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) gxr[i] += a * wr[i];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv3d

namespace {

struct ConvRange {
  int lo, hi;  // output index range [lo, hi) valid for a given kernel offset
};

inline ConvRange conv_range(int extent, int k_off, int pad) {
  const int shift = k_off - pad;  // input index = output index + shift
  ConvRange r;
  r.lo = shift < 0 ? -shift : 0;
  r.hi = shift > 0 ? extent - shift : extent;
  if (r.hi < r.lo) r.hi = r.lo;
  return r;
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_defined(x, "conv3d");
  require_defined(w, "conv3d");
  require(x.rank() == 4, "conv3d: input must be [C,T,Z,X]");
  require(w.rank() == 5, "conv3d: weight must be [C_out,C_in,kt,kz,kx]");
  const int c_in = x.extent(0), T = x.extent(1), Z = x.extent(2), X = x.extent(3);
  const int c_out = w.extent(0);
  const int kt = w.extent(2), kz = w.extent(3), kx = w.extent(4);
  require(w.extent(1) == c_in, "conv3d: weight C_in does not match input");
  require(kt % 2 == 1 && kz % 2 == 1 && kx % 2 == 1, "conv3d: kernel extents must be odd");
  if (b.defined()) {
    require(b.rank() == 1 && b.extent(0) == c_out, "conv3d: bias must be [C_out]");
  }
  const int pt = (kt - 1) / 2, pz = (kz - 1) / 2, px = (kx - 1) / 2;
  const int ZX = Z * X, TZX = T * ZX;

  Tensor out({c_out, T, Z, X});
  double* po = out.data();
  const double* pxv = x.data();
  const double* pw = w.data();
  if (b.defined()) {
    const double* pb = b.data();
    for (int co = 0; co < c_out; ++co) {
      double* op = po + static_cast<std::ptrdiff_t>(co) * TZX;
      const double bv = pb[co];
      for (int i = 0; i < TZX; ++i) op[i] = bv;
    }
  }

  for (int co = 0; co < c_out; ++co) {
    double* op = po + static_cast<std::ptrdiff_t>(co) * TZX;
    for (int ci = 0; ci < c_in; ++ci) {
      const double* ip = pxv + static_cast<std::ptrdiff_t>(ci) * TZX;
      const double* wp = pw + (static_cast<std::ptrdiff_t>(co) * c_in + ci) * kt * kz * kx;
      for (int dt = 0; dt < kt; ++dt) {
        const ConvRange rt = conv_range(T, dt, pt);
        for (int dz = 0; dz < kz; ++dz) {
          const ConvRange rz = conv_range(Z, dz, pz);
          for (int dx = 0; dx < kx; ++dx) {
            const double wv = wp[(dt * kz + dz) * kx + dx];
            if (wv == 0.0) continue;
            const ConvRange rx = conv_range(X, dx, px);
            const int ts = dt - pt, zs = dz - pz, xs = dx - px;
            for (int t = rt.lo; t < rt.hi; ++t) {
              const double* irowt = ip + static_cast<std::ptrdiff_t>(t + ts) * ZX;
              double* orowt = op + static_cast<std::ptrdiff_t>(t) * ZX;
              for (int z = rz.lo; z < rz.hi; ++z) {
                const double* ir = irowt + static_cast<std::ptrdiff_t>(z + zs) * X + xs;
                double* orow = orowt + static_cast<std::ptrdiff_t>(z) * X;
                for (int xi = rx.lo; xi < rx.hi; ++xi) orow[xi] += wv * ir[xi];
              }
            }
          }
        }
      }
    }
  }

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(x) || tp->differentiable(w) || tp->differentiable(b))) {
    const int nx = tp->ensure_node(x);
    const int nw = tp->ensure_node(w);
    const int nb = b.defined() ? tp->ensure_node(b) : -1;
    auto ix = x.impl();
    auto iw = w.impl();
    const int xsize = x.size();
    const int wsize = w.size();
    tp->record(out, [=](Tape& t, const std::vector<double>& adj) {
      const double* pa = adj.data();
      if (nb >= 0) {
        std::vector<double>& gb = t.adjoint(nb, c_out);
        for (int co = 0; co < c_out; ++co) {
          const double* ap = pa + static_cast<std::ptrdiff_t>(co) * TZX;
          double acc = 0.0;
          for (int i = 0; i < TZX; ++i) acc += ap[i];
          gb[static_cast<std::size_t>(co)] += acc;
        }
      }
      const bool need_w = nw >= 0;
      const bool need_x = nx >= 0;
      if (!need_w && !need_x) return;
      double* gw = need_w ? t.adjoint(nw, wsize).data() : nullptr;
      double* gx = need_x ? t.adjoint(nx, xsize).data() : nullptr;
      const double* vx = ix->data.data();
      const double* vw = iw->data.data();
      for (int co = 0; co < c_out; ++co) {
        const double* ap = pa + static_cast<std::ptrdiff_t>(co) * TZX;
        for (int ci = 0; ci < c_in; ++ci) {
          const double* ip = vx + static_cast<std::ptrdiff_t>(ci) * TZX;
          double* gip = need_x ? gx + static_cast<std::ptrdiff_t>(ci) * TZX : nullptr;
          const std::ptrdiff_t wbase = (static_cast<std::ptrdiff_t>(co) * c_in + ci) * kt * kz * kx;
          for (int dt = 0; dt < kt; ++dt) {
            const ConvRange rt = conv_range(T, dt, pt);
            for (int dz = 0; dz < kz; ++dz) {
              const ConvRange rz = conv_range(Z, dz, pz);
              for (int dx = 0; dx < kx; ++dx) {
                const ConvRange rx = conv_range(X, dx, px);
                const int ts = dt - pt, zs = dz - pz, xs = dx - px;
                const std::ptrdiff_t widx = wbase + (dt * kz + dz) * kx + dx;
                const double wv = vw[widx];
                double wacc = 0.0;
                for (int tt = rt.lo; tt < rt.hi; ++tt) {
                  const double* arow_t = ap + static_cast<std::ptrdiff_t>(tt) * ZX;
                  const double* irow_t = ip + static_cast<std::ptrdiff_t>(tt + ts) * ZX;
                  double* grow_t = need_x ? gip + static_cast<std::ptrdiff_t>(tt + ts) * ZX : nullptr;
                  for (int z = rz.lo; z < rz.hi; ++z) {
                    const double* arow = arow_t + static_cast<std::ptrdiff_t>(z) * X;
                    const double* irow = irow_t + static_cast<std::ptrdiff_t>(z + zs) * X + xs;
                    if (need_x) {
                      double* grow = grow_t + static_cast<std::ptrdiff_t>(z + zs) * X + xs;
                      if (need_w) {
                        for (int xi = rx.lo; xi < rx.hi; ++xi) {
                          const double a = arow[xi];
                          wacc += a * irow[xi];
                          grow[xi] += wv * a;
                        }
                      } else {
                        for (int xi = rx.lo; xi < rx.hi; ++xi) grow[xi] += wv * arow[xi];
                      }
                    } else {
                      for (int xi = rx.lo; xi < rx.hi; ++xi) wacc += arow[xi] * irow[xi];
                    }
                  }
                }
                if (need_w) gw[widx] += wacc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool3d / upsample

Tensor maxpool3d(const Tensor& x) {
  require_defined(x, "maxpool3d");
  require(x.rank() == 4, "maxpool3d: input must be [C,T,Z,X]");
  const int C = x.extent(0), T = x.extent(1), Z = x.extent(2), X = x.extent(3);
  require(T % 2 == 0 && Z % 2 == 0 && X % 2 == 0,
          "maxpool3d: spatial extents must be even");
  const int To = T / 2, Zo = Z / 2, Xo = X / 2;
  const int ZX = Z * X;

  Tensor out({C, To, Zo, Xo});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(out.size()));
  const double* pxv = x.data();
  double* po = out.data();
  int* parg = argmax->data();
  int oi = 0;
  for (int c = 0; c < C; ++c) {
    const std::ptrdiff_t cbase = static_cast<std::ptrdiff_t>(c) * T * ZX;
    for (int t = 0; t < To; ++t) {
      for (int z = 0; z < Zo; ++z) {
        for (int xo = 0; xo < Xo; ++xo, ++oi) {
          double best = 0.0;
          int besti = -1;
          for (int dt = 0; dt < 2; ++dt) {
            for (int dz = 0; dz < 2; ++dz) {
              for (int dx = 0; dx < 2; ++dx) {
                const int idx = static_cast<int>(cbase) + (2 * t + dt) * ZX + (2 * z + dz) * X +
                                (2 * xo + dx);
                const double v = pxv[idx];
                if (besti < 0 || v > best) {
                  best = v;
                  besti = idx;
                }
              }
            }
          }
          po[oi] = best;
          parg[oi] = besti;
        }
      }
    }
  }

  Tape* tp = active_tape();
  if (tp && tp->differentiable(x)) {
    const int nx = tp->ensure_node(x);
    const int xsize = x.size();
    const int osize = out.size();
    tp->record(out, [nx, xsize, osize, argmax](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(nx, xsize);
      const int* arg = argmax->data();
      for (int i = 0; i < osize; ++i) g[static_cast<std::size_t>(arg[i])] += adj[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

Tensor upsample_nearest3d(const Tensor& x, int factor) {
  return upsample_nearest3d(x, std::array<int, 3>{factor, factor, factor});
}

Tensor upsample_nearest3d(const Tensor& x, const std::array<int, 3>& factors) {
  require_defined(x, "upsample_nearest3d");
  require(x.rank() == 4, "upsample_nearest3d: input must be [C,T,Z,X]");
  const int ft = factors[0], fz = factors[1], fx = factors[2];
  require(ft >= 1 && fz >= 1 && fx >= 1, "upsample_nearest3d: factors must be >= 1");
  const int C = x.extent(0), T = x.extent(1), Z = x.extent(2), X = x.extent(3);
  const int To = T * ft, Zo = Z * fz, Xo = X * fx;

  Tensor out({C, To, Zo, Xo});
  const double* pxv = x.data();
  double* po = out.data();
  int oi = 0;
  for (int c = 0; c < C; ++c) {
    const std::ptrdiff_t cbase = static_cast<std::ptrdiff_t>(c) * T * Z * X;
    for (int t = 0; t < To; ++t) {
      const std::ptrdiff_t tbase = cbase + static_cast<std::ptrdiff_t>(t / ft) * Z * X;
      for (int z = 0; z < Zo; ++z) {
        const double* irow = pxv + tbase + static_cast<std::ptrdiff_t>(z / fz) * X;
        for (int xo = 0; xo < Xo; ++xo, ++oi) po[oi] = irow[xo / fx];
      }
    }
  }

  Tape* tp = active_tape();
  if (tp && tp->differentiable(x)) {
    const int nx = tp->ensure_node(x);
    const int xsize = x.size();
    tp->record(out, [=](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(nx, xsize);
      const double* pa = adj.data();
      int i = 0;
      for (int c = 0; c < C; ++c) {
        const std::ptrdiff_t cbase = static_cast<std::ptrdiff_t>(c) * T * Z * X;
        for (int t = 0; t < To; ++t) {
          const std::ptrdiff_t tbase = cbase + static_cast<std::ptrdiff_t>(t / ft) * Z * X;
          for (int z = 0; z < Zo; ++z) {
            double* grow = g.data() + tbase + static_cast<std::ptrdiff_t>(z / fz) * X;
            for (int xo = 0; xo < Xo; ++xo, ++i) grow[xo / fx] += pa[i];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// norm_layer

Tensor norm_layer(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "norm_layer");
  require_defined(gamma, "norm_layer");
  require_defined(beta, "norm_layer");
  require(x.rank() >= 2, "norm_layer: input must be [C, ...]");
  const int C = x.extent(0);
  require(gamma.rank() == 1 && gamma.extent(0) == C, "norm_layer: gamma must be [C]");
  require(beta.rank() == 1 && beta.extent(0) == C, "norm_layer: beta must be [C]");
  require(eps > 0.0, "norm_layer: eps must be positive");
  const int N = x.size() / C;

  Tensor out(x.shape());
  auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
  auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
  const double* pxv = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (int c = 0; c < C; ++c) {
    const double* xc = pxv + static_cast<std::ptrdiff_t>(c) * N;
    double m = 0.0;
    for (int i = 0; i < N; ++i) m += xc[i];
    m /= N;
    double var = 0.0;
    for (int i = 0; i < N; ++i) {
      const double d = xc[i] - m;
      var += d * d;
    }
    var /= N;
    const double iv = 1.0 / std::sqrt(var + eps);
    (*mu)[static_cast<std::size_t>(c)] = m;
    (*inv)[static_cast<std::size_t>(c)] = iv;
    double* oc = po + static_cast<std::ptrdiff_t>(c) * N;
    const double g = pg[c], bv = pb[c];
    for (int i = 0; i < N; ++i) oc[i] = g * (xc[i] - m) * iv + bv;
  }

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(x) || tp->differentiable(gamma) || tp->differentiable(beta))) {
    const int nx = tp->ensure_node(x);
    const int ng = tp->ensure_node(gamma);
    const int nb = tp->ensure_node(beta);
    auto ix = x.impl();
    auto ig = gamma.impl();
    const int xsize = x.size();
    tp->record(out, [=](Tape& t, const std::vector<double>& adj) {
      const double* pa = adj.data();
      const double* vx = ix->data.data();
      const double* vg = ig->data.data();
      double* gx = nx >= 0 ? t.adjoint(nx, xsize).data() : nullptr;
      double* gg = ng >= 0 ? t.adjoint(ng, C).data() : nullptr;
      double* gb = nb >= 0 ? t.adjoint(nb, C).data() : nullptr;
      for (int c = 0; c < C; ++c) {
        const double* xc = vx + static_cast<std::ptrdiff_t>(c) * N;
        const double* ac = pa + static_cast<std::ptrdiff_t>(c) * N;
        const double m = (*mu)[static_cast<std::size_t>(c)];
        const double iv = (*inv)[static_cast<std::size_t>(c)];
        double s1 = 0.0, s2 = 0.0;
        for (int i = 0; i < N; ++i) {
          const double xh = (xc[i] - m) * iv;
          s1 += ac[i];
          s2 += ac[i] * xh;
        }
        if (gb) gb[c] += s1;
        if (gg) gg[c] += s2;
        if (gx) {
          double* gxc = gx + static_cast<std::ptrdiff_t>(c) * N;
          const double giv = vg[c] * iv;
          const double m1 = s1 / N, m2 = s2 / N;
          for (int i = 0; i < N; ++i) {
            const double xh = (xc[i] - m) * iv;
            gxc[i] += giv * (ac[i] - m1 - xh * m2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concatenation / gathering

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_channels");
  require_defined(b, "concat_channels");
  require(a.rank() == b.rank() && a.rank() >= 2, "concat_channels: rank mismatch");
  for (int ax = 1; ax < a.rank(); ++ax) {
    require(a.extent(ax) == b.extent(ax), "concat_channels: trailing extents differ");
  }
  const int Ca = a.extent(0), Cb = b.extent(0);
  std::vector<int> out_shape = a.shape();
  out_shape[0] = Ca + Cb;
  Tensor out(out_shape);
  const int an = a.size(), bn = b.size();
  double* po = out.data();
  std::copy(a.data(), a.data() + an, po);
  std::copy(b.data(), b.data() + bn, po + an);

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(a) || tp->differentiable(b))) {
    const int na = tp->ensure_node(a);
    const int nb = tp->ensure_node(b);
    tp->record(out, [na, nb, an, bn](Tape& t, const std::vector<double>& adj) {
      if (na >= 0) t.accumulate(na, an, adj.data());
      if (nb >= 0) t.accumulate(nb, bn, adj.data() + an);
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_cols");
  require_defined(b, "concat_cols");
  require(a.rank() == 2 && b.rank() == 2, "concat_cols: inputs must be [R, C]");
  require(a.extent(0) == b.extent(0), "concat_cols: row counts differ");
  const int R = a.extent(0), Ca = a.extent(1), Cb = b.extent(1);
  Tensor out({R, Ca + Cb});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int r = 0; r < R; ++r) {
    std::copy(pa + static_cast<std::ptrdiff_t>(r) * Ca, pa + static_cast<std::ptrdiff_t>(r + 1) * Ca,
              po + static_cast<std::ptrdiff_t>(r) * (Ca + Cb));
    std::copy(pb + static_cast<std::ptrdiff_t>(r) * Cb, pb + static_cast<std::ptrdiff_t>(r + 1) * Cb,
              po + static_cast<std::ptrdiff_t>(r) * (Ca + Cb) + Ca);
  }

  Tape* tp = active_tape();
  if (tp && (tp->differentiable(a) || tp->differentiable(b))) {
    const int na = tp->ensure_node(a);
    const int nb = tp->ensure_node(b);
    tp->record(out, [na, nb, R, Ca, Cb](Tape& t, const std::vector<double>& adj) {
      const double* pad = adj.data();
      if (na >= 0) {
        std::vector<double>& g = t.adjoint(na, R * Ca);
        for (int r = 0; r < R; ++r) {
          const double* ar = pad + static_cast<std::ptrdiff_t>(r) * (Ca + Cb);
          double* gr = g.data() + static_cast<std::ptrdiff_t>(r) * Ca;
          for (int c = 0; c < Ca; ++c) gr[c] += ar[c];
        }
      }
      if (nb >= 0) {
        std::vector<double>& g = t.adjoint(nb, R * Cb);
        for (int r = 0; r < R; ++r) {
          const double* ar = pad + static_cast<std::ptrdiff_t>(r) * (Ca + Cb) + Ca;
          double* gr = g.data() + static_cast<std::ptrdiff_t>(r) * Cb;
          for (int c = 0; c < Cb; ++c) gr[c] += ar[c];
        }
      }
    });
  }
  return out;
}

Tensor gather_latents(const Tensor& grid, const std::vector<int>& flat_idx) {
  require_defined(grid, "gather_latents");
  require(grid.rank() >= 2, "gather_latents: grid must be [C, ...]");
  const int C = grid.extent(0);
  const int V = grid.size() / C;
  const int R = static_cast<int>(flat_idx.size());
  for (int idx : flat_idx) {
    require(idx >= 0 && idx < V, "gather_latents: index out of range");
  }
  Tensor out({R, C});
  const double* pg = grid.data();
  double* po = out.data();
  for (int r = 0; r < R; ++r) {
    const int idx = flat_idx[static_cast<std::size_t>(r)];
    double* orow = po + static_cast<std::ptrdiff_t>(r) * C;
    for (int c = 0; c < C; ++c) orow[c] = pg[static_cast<std::ptrdiff_t>(c) * V + idx];
  }

  Tape* tp = active_tape();
  if (tp && tp->differentiable(grid)) {
    const int ng = tp->ensure_node(grid);
    const int gsize = grid.size();
    auto idxs = std::make_shared<std::vector<int>>(flat_idx);
    tp->record(out, [ng, gsize, R, C, V, idxs](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(ng, gsize);
      const double* pa = adj.data();
      for (int r = 0; r < R; ++r) {
        const int idx = (*idxs)[static_cast<std::size_t>(r)];
        const double* ar = pa + static_cast<std::ptrdiff_t>(r) * C;
        for (int c = 0; c < C; ++c) g[static_cast<std::size_t>(c) * V + idx] += ar[c];
      }
    });
  }
  return out;
}

Tensor reduce_groups(const Tensor& vals, const std::vector<double>& coeff, int group) {
  require_defined(vals, "reduce_groups");
  require(vals.rank() == 2, "reduce_groups: vals must be [G*g, C]");
  require(group >= 1, "reduce_groups: group must be >= 1");
  const int rows = vals.extent(0), C = vals.extent(1);
  require(rows % group == 0, "reduce_groups: row count not divisible by group");
  require(static_cast<int>(coeff.size()) == rows, "reduce_groups: coeff size mismatch");
  const int G = rows / group;

  Tensor out({G, C});
  const double* pv = vals.data();
  double* po = out.data();
  for (int i = 0; i < G; ++i) {
    double* orow = po + static_cast<std::ptrdiff_t>(i) * C;
    for (int j = 0; j < group; ++j) {
      const double w = coeff[static_cast<std::size_t>(i) * group + j];
      const double* vr = pv + (static_cast<std::ptrdiff_t>(i) * group + j) * C;
      for (int c = 0; c < C; ++c) orow[c] += w * vr[c];
    }
  }

  Tape* tp = active_tape();
  if (tp && tp->differentiable(vals)) {
    const int nv = tp->ensure_node(vals);
    const int vsize = vals.size();
    auto ws = std::make_shared<std::vector<double>>(coeff);
    tp->record(out, [nv, vsize, G, group, C, ws](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(nv, vsize);
      const double* pa = adj.data();
      for (int i = 0; i < G; ++i) {
        const double* ar = pa + static_cast<std::ptrdiff_t>(i) * C;
        for (int j = 0; j < group; ++j) {
          const double w = (*ws)[static_cast<std::size_t>(i) * group + j];
          double* gr = g.data() + (static_cast<std::ptrdiff_t>(i) * group + j) * C;
          for (int c = 0; c < C; ++c) gr[c] += w * ar[c];
        }
      }
    });
  }
  return out;
}

Tensor column(const Tensor& x, int col) {
  require_defined(x, "column");
  require(x.rank() == 2, "column: input must be [R, C]");
  const int R = x.extent(0), C = x.extent(1);
  require(col >= 0 && col < C, "column: index out of range");
  Tensor out({R});
  const double* pxv = x.data();
  double* po = out.data();
  for (int r = 0; r < R; ++r) po[r] = pxv[static_cast<std::ptrdiff_t>(r) * C + col];

  Tape* tp = active_tape();
  if (tp && tp->differentiable(x)) {
    const int nx = tp->ensure_node(x);
    const int xsize = x.size();
    tp->record(out, [nx, xsize, R, C, col](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(nx, xsize);
      for (int r = 0; r < R; ++r) g[static_cast<std::size_t>(r) * C + col] += adj[static_cast<std::size_t>(r)];
    });
  }
  return out;
}

Tensor affine_columns(const Tensor& x, const std::vector<double>& scale,
                      const std::vector<double>& shift) {
  require_defined(x, "affine_columns");
  require(x.rank() == 2, "affine_columns: input must be [R, C]");
  const int R = x.extent(0), C = x.extent(1);
  require(static_cast<int>(scale.size()) == C && static_cast<int>(shift.size()) == C,
          "affine_columns: scale/shift size mismatch");
  Tensor out({R, C});
  const double* pxv = x.data();
  double* po = out.data();
  for (int r = 0; r < R; ++r) {
    const double* xr = pxv + static_cast<std::ptrdiff_t>(r) * C;
    double* orow = po + static_cast<std::ptrdiff_t>(r) * C;
    for (int c = 0; c < C; ++c) orow[c] = xr[c] * scale[static_cast<std::size_t>(c)] + shift[static_cast<std::size_t>(c)];
  }

  Tape* tp = active_tape();
  if (tp && tp->differentiable(x)) {
    const int nx = tp->ensure_node(x);
    const int xsize = x.size();
    auto sc = std::make_shared<std::vector<double>>(scale);
    tp->record(out, [nx, xsize, R, C, sc](Tape& t, const std::vector<double>& adj) {
      std::vector<double>& g = t.adjoint(nx, xsize);
      const double* pa = adj.data();
      for (int r = 0; r < R; ++r) {
        const double* ar = pa + static_cast<std::ptrdiff_t>(r) * C;
        double* gr = g.data() + static_cast<std::ptrdiff_t>(r) * C;
        for (int c = 0; c < C; ++c) gr[c] += ar[c] * (*sc)[static_cast<std::size_t>(c)];
      }
    });
  }
  return out;
}

}  // namespace mfsr::ad
