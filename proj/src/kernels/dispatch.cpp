#include <atomic>

#include "mixem/error.hpp"
#include "mixem/kernels.hpp"

namespace mixem::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detected_isa()};
  return isa;
}

void check_batch(std::size_t rows, std::size_t p, std::size_t mu, std::size_t out_needed, std::size_t out) {
  if (p == 0 || rows % p != 0 || mu != p || out < out_needed)
    throw Error(Errc::DimensionMismatch, "kernel batch shape mismatch");
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

Isa detected_isa() noexcept { return avx2::compiled() && cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar; }

Isa active_isa() noexcept { return active().load(std::memory_order_relaxed); }

Isa set_active_isa(Isa isa) noexcept {
  if (isa == Isa::Avx2 && detected_isa() != Isa::Avx2) isa = Isa::Scalar;
  active().store(isa, std::memory_order_relaxed);
  return isa;
}

void mahalanobis_batch(std::span<const double> rows, std::size_t p, std::span<const double> mu,
                       const Matrix& lower, std::span<double> out) {
  const std::size_t n_rows = p == 0 ? 0 : rows.size() / p;
  check_batch(rows.size(), p, mu.size(), n_rows, out.size());
  if (lower.rows != p || lower.cols != p) throw Error(Errc::DimensionMismatch, "factor shape mismatch");
  if (active_isa() == Isa::Avx2)
    avx2::mahalanobis_batch(rows.data(), n_rows, p, mu.data(), lower.data.data(), out.data());
  else
    scalar::mahalanobis_batch(rows.data(), n_rows, p, mu.data(), lower.data.data(), out.data());
}

void project_batch(std::span<const double> rows, std::size_t p, std::span<const double> mu,
                   const Matrix& a, std::span<double> out) {
  const std::size_t n_rows = p == 0 ? 0 : rows.size() / p;
  check_batch(rows.size(), p, mu.size(), n_rows * a.rows, out.size());
  if (a.cols != p) throw Error(Errc::DimensionMismatch, "projection shape mismatch");
  if (active_isa() == Isa::Avx2)
    avx2::project_batch(rows.data(), n_rows, p, mu.data(), a.data.data(), a.rows, out.data());
  else
    scalar::project_batch(rows.data(), n_rows, p, mu.data(), a.data.data(), a.rows, out.data());
}

}  // namespace mixem::kernels
