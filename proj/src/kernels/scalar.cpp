#include <array>

#include "mixem/kernels.hpp"
#include "mixem/model.hpp"

namespace mixem::kernels::scalar {

void mahalanobis_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                       const double* lower, double* out) {
  std::array<double, kMaxDim> z;
  for (std::size_t r = 0; r < n_rows; ++r) {
    const double* y = rows + r * p;
    double d = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      double acc = y[i] - mu[i];
      const double* li = lower + i * p;
      for (std::size_t k = 0; k < i; ++k) acc = acc - li[k] * z[k];
      z[i] = acc / li[i];
      d = d + z[i] * z[i];
    }
    out[r] = d;
  }
}

void project_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                   const double* a, std::size_t k, double* out) {
  for (std::size_t r = 0; r < n_rows; ++r) {
    const double* y = rows + r * p;
    for (std::size_t t = 0; t < k; ++t) {
      const double* at = a + t * p;
      double acc = 0.0;
      for (std::size_t c = 0; c < p; ++c) acc = acc + at[c] * (y[c] - mu[c]);
      out[r * k + t] = acc;
    }
  }
}

}  // namespace mixem::kernels::scalar
