// Compiled with -mavx2 (and without -mfma) when the target is x86-64.

#include "mixem/kernels.hpp"
#include "mixem/model.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace mixem::kernels::avx2 {

#if defined(__AVX2__)

namespace {

// Lane l holds observation l of the current group of four.
inline __m256d load_column(const double* rows, std::size_t p, std::size_t c) {
  return _mm256_set_pd(rows[3 * p + c], rows[2 * p + c], rows[p + c], rows[c]);
}

}  // namespace

bool compiled() noexcept { return true; }

void mahalanobis_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                       const double* lower, double* out) {
  alignas(32) __m256d z[kMaxDim];
  std::size_t r = 0;
  for (; r + 4 <= n_rows; r += 4) {
    const double* y = rows + r * p;
    __m256d d = _mm256_setzero_pd();
    for (std::size_t i = 0; i < p; ++i) {
      __m256d acc = _mm256_sub_pd(load_column(y, p, i), _mm256_set1_pd(mu[i]));
      const double* li = lower + i * p;
      for (std::size_t k = 0; k < i; ++k) acc = _mm256_sub_pd(acc, _mm256_mul_pd(_mm256_set1_pd(li[k]), z[k]));
      z[i] = _mm256_div_pd(acc, _mm256_set1_pd(li[i]));
      d = _mm256_add_pd(d, _mm256_mul_pd(z[i], z[i]));
    }
    _mm256_storeu_pd(out + r, d);
  }
  if (r < n_rows) scalar::mahalanobis_batch(rows + r * p, n_rows - r, p, mu, lower, out + r);
}

void project_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                   const double* a, std::size_t k, double* out) {
  alignas(32) __m256d resid[kMaxDim];
  std::size_t r = 0;
  for (; r + 4 <= n_rows; r += 4) {
    const double* y = rows + r * p;
    for (std::size_t c = 0; c < p; ++c) resid[c] = _mm256_sub_pd(load_column(y, p, c), _mm256_set1_pd(mu[c]));
    for (std::size_t t = 0; t < k; ++t) {
      const double* at = a + t * p;
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t c = 0; c < p; ++c) acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(at[c]), resid[c]));
      alignas(32) double lanes[4];
      _mm256_store_pd(lanes, acc);
      for (std::size_t l = 0; l < 4; ++l) out[(r + l) * k + t] = lanes[l];
    }
  }
  if (r < n_rows) scalar::project_batch(rows + r * p, n_rows - r, p, mu, a, k, out + r * k);
}

#else

bool compiled() noexcept { return false; }

void mahalanobis_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                       const double* lower, double* out) {
  scalar::mahalanobis_batch(rows, n_rows, p, mu, lower, out);
}

void project_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                   const double* a, std::size_t k, double* out) {
  scalar::project_batch(rows, n_rows, p, mu, a, k, out);
}

#endif

}  // namespace mixem::kernels::avx2
