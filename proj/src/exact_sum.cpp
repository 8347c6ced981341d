#include "mixem/exact_sum.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace mixem {
namespace {

using u128 = unsigned __int128;

constexpr std::int64_t kRadix = std::int64_t{1} << 32;
constexpr std::uint32_t kNormalizeEvery = 1u << 30;

}  // namespace

void ExactSum::ensure_window(std::int32_t lo, std::int32_t hi) {
  if (limbs_.empty()) {
    base_ = lo;
    limbs_.assign(static_cast<std::size_t>(hi - lo + 1), 0);
    return;
  }
  if (lo < base_) {
    limbs_.insert(limbs_.begin(), static_cast<std::size_t>(base_ - lo), 0);
    base_ = lo;
  }
  const auto top = base_ + static_cast<std::int32_t>(limbs_.size()) - 1;
  if (hi > top) limbs_.resize(static_cast<std::size_t>(hi - base_ + 1), 0);
}

void ExactSum::add(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  const auto expo = static_cast<std::int32_t>((bits >> 52) & 0x7ff);
  const std::uint64_t frac = bits & ((std::uint64_t{1} << 52) - 1);
  const bool negative = (bits >> 63) != 0;

  if (expo == 0x7ff) {
    if (frac != 0) special_ |= kNaN;
    else special_ |= negative ? kNegInf : kPosInf;
    return;
  }
  std::uint64_t mant;
  std::int32_t bitpos;
  if (expo == 0) {
    if (frac == 0) return;
    mant = frac;
    bitpos = 0;
  } else {
    mant = frac | (std::uint64_t{1} << 52);
    bitpos = expo - 1;
  }

  const std::int32_t idx = bitpos >> 5;
  const u128 shifted = static_cast<u128>(mant) << (bitpos & 31);
  const auto d0 = static_cast<std::int64_t>(static_cast<std::uint64_t>(shifted) & 0xffffffffu);
  const auto d1 = static_cast<std::int64_t>(static_cast<std::uint64_t>(shifted >> 32) & 0xffffffffu);
  const auto d2 = static_cast<std::int64_t>(static_cast<std::uint64_t>(shifted >> 64));

  ensure_window(idx, idx + 2);
  auto* limb = limbs_.data() + (idx - base_);
  if (negative) {
    limb[0] -= d0;
    limb[1] -= d1;
    limb[2] -= d2;
  } else {
    limb[0] += d0;
    limb[1] += d1;
    limb[2] += d2;
  }
  if (++pending_ >= kNormalizeEvery) normalize();
}

void ExactSum::normalize() {
  if (limbs_.empty()) return;
  for (std::size_t i = 0; i + 1 < limbs_.size(); ++i) {
    const std::int64_t carry = limbs_[i] >> 32;  // floor division
    limbs_[i] -= carry * kRadix;
    limbs_[i + 1] += carry;
  }
  while (limbs_.back() >= kRadix || limbs_.back() <= -kRadix) {
    const std::int64_t carry = limbs_.back() >> 32;
    limbs_.back() -= carry * kRadix;
    limbs_.push_back(carry);
  }
  pending_ = 0;
}

void ExactSum::merge(const ExactSum& other) {
  special_ |= other.special_;
  if (other.limbs_.empty()) return;
  if (std::uint64_t{pending_} + other.pending_ + 2 > kNormalizeEvery) normalize();

  const auto other_top = other.base_ + static_cast<std::int32_t>(other.limbs_.size()) - 1;
  ensure_window(other.base_, other_top);
  auto* dst = limbs_.data() + (other.base_ - base_);
  for (std::size_t i = 0; i < other.limbs_.size(); ++i) dst[i] += other.limbs_[i];

  pending_ += other.pending_ + 1;
  if (pending_ >= kNormalizeEvery) normalize();
}

ExactSum::Canonical ExactSum::canonical() const {
  Canonical out;
  out.special = special_;

  ExactSum work = *this;
  work.normalize();
  if (!work.limbs_.empty() && work.limbs_.back() < 0) {
    out.negative = true;
    for (auto& limb : work.limbs_) limb = -limb;
    work.normalize();
  }

  std::size_t lo = 0;
  std::size_t hi = work.limbs_.size();
  while (hi > lo && work.limbs_[hi - 1] == 0) --hi;
  while (lo < hi && work.limbs_[lo] == 0) ++lo;
  if (lo == hi) {
    out.negative = false;
    return out;
  }
  out.base = work.base_ + static_cast<std::int32_t>(lo);
  out.digits.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) out.digits.push_back(static_cast<std::uint32_t>(work.limbs_[i]));
  return out;
}

ExactSum ExactSum::from_canonical(const Canonical& c) {
  ExactSum out;
  out.special_ = c.special;
  if (c.digits.empty()) return out;
  out.base_ = c.base;
  out.limbs_.reserve(c.digits.size());
  for (const auto d : c.digits) {
    const auto v = static_cast<std::int64_t>(d);
    out.limbs_.push_back(c.negative ? -v : v);
  }
  return out;
}

double ExactSum::value() const {
  if (special_ != 0) {
    if ((special_ & kNaN) != 0 || (special_ & (kPosInf | kNegInf)) == (kPosInf | kNegInf))
      return std::numeric_limits<double>::quiet_NaN();
    return (special_ & kPosInf) != 0 ? std::numeric_limits<double>::infinity()
                                     : -std::numeric_limits<double>::infinity();
  }
  const Canonical c = canonical();
  if (c.digits.empty()) return 0.0;

  const auto top = static_cast<std::int64_t>(c.digits.size()) - 1;
  u128 acc = 0;
  for (std::int64_t t = 0; t < 3; ++t) {
    const std::int64_t idx = top - t;
    acc = (acc << 32) | (idx >= 0 ? c.digits[static_cast<std::size_t>(idx)] : 0u);
  }
  // Trailing zero digits are trimmed, so anything below the three leading
  // digits is nonzero exactly when there is a fourth digit.
  const bool sticky = top >= 3;

  const auto hi64 = static_cast<std::uint64_t>(acc >> 64);
  const int lead = 64 + 63 - std::countl_zero(hi64);
  const int shift = lead - 52;
  std::uint64_t mant = static_cast<std::uint64_t>(acc >> shift);
  const u128 rem = acc & ((u128{1} << shift) - 1);
  const u128 half = u128{1} << (shift - 1);
  if (rem > half || (rem == half && (sticky || (mant & 1u) != 0))) ++mant;

  const auto exponent = static_cast<int>(shift + 32 * (static_cast<std::int64_t>(c.base) + top - 2) - 1074);
  const double magnitude = std::ldexp(static_cast<double>(mant), exponent);
  return c.negative ? -magnitude : magnitude;
}

}  // namespace mixem
