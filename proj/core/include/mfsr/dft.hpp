#pragma once

#include <vector>

namespace mfsr {

// Plain O(n^2) real DFT with precomputed twiddle tables. The transform sizes
// here are solver rows (tens to a few hundred points), where the table-driven
// direct sum is fast enough and keeps the dependency surface flat.
//
// Forward maps n reals to the half spectrum k = 0..n/2 (Hermitian symmetry);
// inverse reconstructs the n reals from that half spectrum. Conventions:
//   re[k] = sum_j x[j] cos(2 pi k j / n),  im[k] = -sum_j x[j] sin(2 pi k j / n)
// and inverse(forward(x)) = x up to round-off.
class Dft {
 public:
  explicit Dft(int n);

  int n() const { return n_; }
  int n_half() const { return n_ / 2; }

  // x: n reals; re/im: n/2 + 1 outputs each.
  void forward(const double* x, double* re, double* im) const;
  void inverse(const double* re, const double* im, double* x) const;

 private:
  int n_;
  std::vector<double> cos_;  // [k][j], k = 0..n/2
  std::vector<double> sin_;
};

}  // namespace mfsr
