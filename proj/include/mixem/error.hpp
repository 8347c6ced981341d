#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mixem {

enum class Errc {
  InvalidArgument,
  DimensionMismatch,
  MixingProportion,
  NotPositiveDefinite,
  Domain,
  NoBracket,
  DensityUnderflow,
  EmptyComponent,
  PartitionInfeasible,
  AllCandidatesFailed,
  Unsupported,
  Protocol,
  TruncatedFrame,
  OversizeFrame,
  NodeUnreachable,
  WorkerAborted,
  Io,
  Parse,
  BaselineMissing,
};

/// Stable, machine-parsable name ("not_positive_definite", ...).
std::string_view errc_name(Errc code) noexcept;

/// True for the three framing/protocol failure kinds.
constexpr bool is_protocol_error(Errc code) noexcept {
  return code == Errc::Protocol || code == Errc::TruncatedFrame || code == Errc::OversizeFrame;
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// CSV parse failure; row and column are 1-based file positions.
class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::size_t col, const std::string& message)
      : Error(Errc::Parse, "row " + std::to_string(row) + ", column " + std::to_string(col) +
                               ": " + message),
        row_(row),
        col_(col) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

}  // namespace mixem
