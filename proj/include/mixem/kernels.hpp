#pragma once

// Batched inner loops of the E-step. Each kernel has a portable scalar
// reference and an AVX2 variant that processes four observations per
// register. Both perform the same IEEE operations in the same order per
// observation (no FMA), so they agree bit-for-bit; the dispatcher picks the
// widest variant the CPU supports unless a test pins one.

#include <cstddef>
#include <span>
#include <string_view>

#include "mixem/matrix.hpp"

namespace mixem::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Best variant compiled in and supported by this CPU.
Isa detected_isa() noexcept;
/// Variant used by the dispatching entry points below.
Isa active_isa() noexcept;
/// Pins the dispatch (tests and benchmarks). Falls back to Scalar when the
/// requested variant is unavailable; returns what was actually selected.
Isa set_active_isa(Isa isa) noexcept;

/// Squared Mahalanobis distances for a batch of rows.
///
/// rows: n_rows x p row-major; lower: p x p Cholesky factor; out: n_rows.
/// Per row: z = L^{-1}(y - mu) by forward substitution, out = sum z_i^2.
void mahalanobis_batch(std::span<const double> rows, std::size_t p, std::span<const double> mu,
                       const Matrix& lower, std::span<double> out);

/// out[r * k + t] = sum_c a(t, c) * (rows[r * p + c] - mu[c]) for a k x p matrix a.
void project_batch(std::span<const double> rows, std::size_t p, std::span<const double> mu,
                   const Matrix& a, std::span<double> out);

namespace scalar {
void mahalanobis_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                       const double* lower, double* out);
void project_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                   const double* a, std::size_t k, double* out);
}  // namespace scalar

namespace avx2 {
bool compiled() noexcept;
void mahalanobis_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                       const double* lower, double* out);
void project_batch(const double* rows, std::size_t n_rows, std::size_t p, const double* mu,
                   const double* a, std::size_t k, double* out);
}  // namespace avx2

}  // namespace mixem::kernels
