#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mfsr::ad {

// Dense row-major double tensor with shared storage. Gradients are reverse-mode
// via an explicit Tape: ops record backward closures when a tape is active and
// at least one input is differentiable (a parameter, or itself tape-produced).
// Without an active tape every op is a plain value computation.

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  // Tape bookkeeping: which node of which tape generation produced this value.
  int node = -1;
  std::uint64_t epoch = 0;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int extent(int axis) const { return impl_->shape[static_cast<std::size_t>(axis)]; }
  int size() const { return static_cast<int>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  double item() const;

  Tensor& set_requires_grad(bool on = true);
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  double* grad_data() { return impl_->grad.data(); }
  const double* grad_data() const { return impl_->grad.data(); }
  void zero_grad();

  // Deep copy; the copy is a fresh leaf with no tape linkage.
  Tensor clone() const;

  void assert_finite(const std::string& what) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

class Tape {
 public:
  // Backward closures receive the tape (to push adjoints to parents) and this
  // node's accumulated output adjoint.
  using BackwardFn = std::function<void(Tape&, const std::vector<double>& adj)>;

  Tape() : epoch_(next_epoch()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t epoch() const { return epoch_; }
  std::size_t size() const { return nodes_.size(); }

  // Drops all recorded nodes and starts a new generation, invalidating the
  // node ids stamped on previously produced tensors.
  void reset();

  bool differentiable(const Tensor& t) const;

  // Node id of t on this tape, registering parameter leaves on first use.
  // Returns -1 for constants.
  int ensure_node(const Tensor& t);

  // Appends a node for op output `out` with backward closure `fn`.
  void record(Tensor& out, BackwardFn fn);

  // Adjoint buffer for a node, zero-initialized to `size` on first access.
  std::vector<double>& adjoint(int node, int size);

  // adjoint(node) += contrib (elementwise over `size` entries).
  void accumulate(int node, int size, const double* contrib);

  // Seeds d(loss)/d(loss)=1 and walks the tape in reverse, accumulating into
  // the .grad of every reachable parameter leaf. Leaf grads persist across
  // calls (call zero_grad between steps); node adjoints are cleared on entry,
  // so repeated backward calls accumulate parameter grads.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::vector<double> adj;
    BackwardFn back;
  };

  static std::uint64_t next_epoch();

  std::vector<Node> nodes_;
  std::uint64_t epoch_;
};

// Thread-local active tape. Ops consult this; scopes save/restore it.
Tape* active_tape();
void set_active_tape(Tape* tape);

class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(active_tape()) { set_active_tape(&tape); }
  ~TapeScope() { set_active_tape(prev_); }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

class NoTapeScope {
 public:
  NoTapeScope() : prev_(active_tape()) { set_active_tape(nullptr); }
  ~NoTapeScope() { set_active_tape(prev_); }
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* prev_;
};

// Convenience: backward on the active tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Elementwise and reduction ops (all same-shape unless noted).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// ca*a + cb*b with constant coefficients.
Tensor add_weighted(const Tensor& a, double ca, const Tensor& b, double cb);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

// Unary maps. SoftplusD1/D2 and SwishD1/D2 are the activations' first and
// second derivative functions, used when a network is evaluated on jets.
enum class Unary {
  Relu,
  Softplus,
  SoftplusD1,
  SoftplusD2,
  Swish,
  SwishD1,
  SwishD2,
  Abs,
  Square,
};
Tensor unary(const Tensor& a, Unary kind);

// Elementwise Huber penalty of a residual (quadratic core, linear tails).
Tensor huber(const Tensor& residual, double delta);

Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]

// ---------------------------------------------------------------------------
// Linear algebra / NN ops.

// x [..., n_in] treated as [R, n_in]; w [n_out, n_in]; b [n_out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x [C_in, T, Z, X]; w [C_out, C_in, kt, kz, kx] (odd kernels); b [C_out] or
// undefined. Stride 1, zero padding (k-1)/2 per axis: output extents match.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b);

// 2x2x2 max pooling, stride 2; even extents required. Gradient flows to the
// first maximal element of each block (flat block order) on ties.
Tensor maxpool3d(const Tensor& x);

// Nearest-neighbour upsampling by an integer factor per axis.
Tensor upsample_nearest3d(const Tensor& x, int factor);
Tensor upsample_nearest3d(const Tensor& x, const std::array<int, 3>& factors);

// Per-channel standardization over all non-channel axes of x [C, ...] with
// affine (gamma, beta), both [C]. Statistics are per-instance.
Tensor norm_layer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);

// Concatenate along axis 0 (channels); trailing extents must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Concatenate [R, Ca] and [R, Cb] along axis 1.
Tensor concat_cols(const Tensor& a, const Tensor& b);

// grid [C, V...] flattened over non-channel axes; out[r, c] = grid[c, idx[r]].
// Backward scatter-adds, so duplicate indices are fine.
Tensor gather_latents(const Tensor& grid, const std::vector<int>& flat_idx);

// vals [G*g, C] -> out [G, C]; out[i, c] = sum_j coeff[i*g + j] * vals[i*g + j, c].
// coeff are constants (interpolation weights).
Tensor reduce_groups(const Tensor& vals, const std::vector<double>& coeff, int group);

// x [R, C] -> column c as [R].
Tensor column(const Tensor& x, int col);

// x [R, C]; out[r, c] = x[r, c] * scale[c] + shift[c] with constant vectors.
Tensor affine_columns(const Tensor& x, const std::vector<double>& scale,
                      const std::vector<double>& shift);

// ---------------------------------------------------------------------------
// Scalar math helpers shared by kernels and physics code.

double sigmoid_val(double x);
double softplus_val(double x);
double swish_val(double x);

}  // namespace mfsr::ad
