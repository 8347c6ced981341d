#pragma once

// Binary framing for the coordinator/worker protocol. Byte layouts are
// documented in protocol.md; every multi-byte field is little-endian and
// every floating-point value travels as its raw IEEE-754 bits.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixem/em.hpp"

namespace mixem::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic = {'M', 'N', 'E', 'M'};
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::uint32_t kMaxPayload = 1u << 30;

enum class MsgType : std::uint8_t {
  Hello = 0x01,
  Config = 0x02,
  Data = 0x03,
  Params = 0x04,
  EResult = 0x05,
  InitTask = 0x06,
  InitResult = 0x07,
  Stop = 0x08,
  Abort = 0x09,
};

const char* msg_name(MsgType type) noexcept;

struct Frame {
  MsgType type = MsgType::Hello;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Throws OversizeFrame when the payload exceeds 2^30 bytes.
std::vector<std::uint8_t> encode_frame(const Frame& frame);

/// Validates a 10-byte header and returns (type, payload length).
/// Throws Protocol (magic, version, type) or OversizeFrame.
std::pair<MsgType, std::uint32_t> decode_header(std::span<const std::uint8_t> header);

/// Exactly one frame: Truncated when bytes run short, Protocol on trailing
/// bytes or a bad header.
Frame decode_frame(std::span<const std::uint8_t> bytes);

struct Hello {
  std::uint32_t version = kVersion;
  std::uint32_t cores = 1;

  friend bool operator==(const Hello&, const Hello&) = default;
};

/// Fit settings plus the worker's assignment.
struct ConfigMsg {
  ComponentFamily family;
  std::uint32_t g = 0;
  std::uint32_t p = 0;
  std::uint64_t n = 0;
  BlockRange block;  // rows this worker E-steps
  double epsilon = 0.0;
  std::uint32_t burn_in_r = 0;
  std::uint32_t max_iter = 0;
  std::uint64_t seed = 0;
  std::uint32_t n_starts = 0;
  InitStrategy strategy = InitStrategy::KMeansPlusRandom;
  std::vector<int> given_labels;

  friend bool operator==(const ConfigMsg&, const ConfigMsg&) = default;
};

struct InitTask {
  std::uint32_t index = 0;
  std::uint64_t seed = 0;
  InitStrategy strategy = InitStrategy::KMeansPlusRandom;

  friend bool operator==(const InitTask&, const InitTask&) = default;
};

/// ok == false carries the failure reason instead of a candidate.
struct InitResult {
  std::uint32_t index = 0;
  bool ok = false;
  double loglik0 = 0.0;
  MixtureParams psi0;
  std::string error;

  friend bool operator==(const InitResult&, const InitResult&) = default;
};

Frame encode_hello(const Hello& msg);
Frame encode_config(const ConfigMsg& msg);
Frame encode_data(const DataSet& data);
Frame encode_params(const MixtureParams& params);
Frame encode_eresult(const PartialSums& sums);
Frame encode_init_task(const InitTask& msg);
Frame encode_init_result(const InitResult& msg);
Frame encode_stop(const MixtureParams& params);
Frame encode_abort(const std::string& reason);

// Payload decoders. Each checks the frame type, consumes the payload
// exactly and range-checks counts and enums; any violation is a Protocol
// error. Decoded values are structurally valid but not re-validated
// numerically (a non-PD matrix decodes fine and fails later, in the math).
Hello decode_hello(const Frame& frame);
ConfigMsg decode_config(const Frame& frame);
DataSet decode_data(const Frame& frame);
MixtureParams decode_params(const Frame& frame);
PartialSums decode_eresult(const Frame& frame);
InitTask decode_init_task(const Frame& frame);
InitResult decode_init_result(const Frame& frame);
MixtureParams decode_stop(const Frame& frame);
std::string decode_abort(const Frame& frame);

/// Dispatches on frame.type and decodes the payload, discarding the result.
/// Used to check an arbitrary frame for well-formedness.
void validate_frame(const Frame& frame);

}  // namespace mixem::wire
