#include "mfsr/dft.hpp"

#include <cmath>
#include <stdexcept>

namespace mfsr {

Dft::Dft(int n) : n_(n) {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("Dft: size must be even and >= 2");
  const int half = n / 2;
  cos_.resize(static_cast<std::size_t>(half + 1) * n);
  sin_.resize(cos_.size());
  for (int k = 0; k <= half; ++k) {
    for (int j = 0; j < n; ++j) {
      // Reduce k*j mod n first so the table stays accurate for large n.
      const double ang = 2.0 * M_PI * static_cast<double>((static_cast<long>(k) * j) % n) / n;
      cos_[static_cast<std::size_t>(k) * n + j] = std::cos(ang);
      sin_[static_cast<std::size_t>(k) * n + j] = std::sin(ang);
    }
  }
}

void Dft::forward(const double* x, double* re, double* im) const {
  const int half = n_ / 2;
  for (int k = 0; k <= half; ++k) {
    const double* ck = cos_.data() + static_cast<std::size_t>(k) * n_;
    const double* sk = sin_.data() + static_cast<std::size_t>(k) * n_;
    double sr = 0.0, si = 0.0;
    for (int j = 0; j < n_; ++j) {
      sr += x[j] * ck[j];
      si -= x[j] * sk[j];
    }
    re[k] = sr;
    im[k] = si;
  }
}

void Dft::inverse(const double* re, const double* im, double* x) const {
  const int half = n_ / 2;
  for (int j = 0; j < n_; ++j) x[j] = 0.0;
  for (int k = 0; k <= half; ++k) {
    // Hermitian completion: modes 1..n/2-1 appear twice (k and n-k).
    const double wgt = (k == 0 || k == half) ? 1.0 : 2.0;
    const double* ck = cos_.data() + static_cast<std::size_t>(k) * n_;
    const double* sk = sin_.data() + static_cast<std::size_t>(k) * n_;
    for (int j = 0; j < n_; ++j) {
      x[j] += wgt * (re[k] * ck[j] - im[k] * sk[j]);
    }
  }
  const double inv = 1.0 / n_;
  for (int j = 0; j < n_; ++j) x[j] *= inv;
}

}  // namespace mfsr
