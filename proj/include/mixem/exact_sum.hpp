#pragma once

#include <cstdint>
#include <vector>

namespace mixem {

/// Exact accumulator for IEEE doubles.
///
/// Every finite double is an integer multiple of 2^-1074, so the running sum
/// is kept as a signed fixed-point integer in 32-bit digits (held in int64
/// limbs for carry headroom) over a window that grows as needed. Addition is
/// therefore associative and commutative: the rounded value() does not depend
/// on how the terms were grouped or ordered. This is what lets block partial
/// sums from any number of workers combine to bit-identical totals.
class ExactSum {
 public:
  enum Special : std::uint8_t { kNaN = 1, kPosInf = 2, kNegInf = 4 };

  /// Sign-magnitude canonical form; equal sums have equal canonical forms.
  struct Canonical {
    std::uint8_t special = 0;
    bool negative = false;
    std::int32_t base = 0;             // index of digits[0] in 32-bit units above 2^-1074
    std::vector<std::uint32_t> digits; // little-endian, no leading or trailing zeros

    friend bool operator==(const Canonical&, const Canonical&) = default;
  };

  void add(double v);
  void merge(const ExactSum& other);

  /// Correctly rounded (to nearest, ties to even) value of the exact sum.
  double value() const;

  Canonical canonical() const;
  static ExactSum from_canonical(const Canonical& c);

  friend bool operator==(const ExactSum& a, const ExactSum& b) { return a.canonical() == b.canonical(); }

 private:
  void ensure_window(std::int32_t lo, std::int32_t hi);
  void normalize();

  std::int32_t base_ = 0;
  std::vector<std::int64_t> limbs_;
  std::uint32_t pending_ = 0;
  std::uint8_t special_ = 0;
};

}  // namespace mixem
