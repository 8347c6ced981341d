#include "mixem/wire.hpp"

#include <bit>
#include <cstring>

#include "mixem/error.hpp"

namespace mixem::wire {
namespace {

// Largest exact-sum window a legitimate sender can produce: doubles span
// 2098 bits (66 digits) and carries add a few more.
constexpr std::size_t kMaxSumDigits = 80;

[[noreturn]] void bad(const std::string& what) { throw Error(Errc::Protocol, what); }

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and values past U+10FFFF.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
    if ((cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) return false;
    i += len;
  }
  return true;
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (const double v : vs) f64(v);
  }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void sum(const ExactSum& s) {
    const auto c = s.canonical();
    u8(c.special);
    u8(c.negative ? 1 : 0);
    i32(c.base);
    u32(static_cast<std::uint32_t>(c.digits.size()));
    for (const auto d : c.digits) u32(d);
  }

  Frame frame(MsgType type) { return {type, std::move(out_)}; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const Frame& frame, MsgType expect) : data_(frame.payload) {
    if (frame.type != expect)
      bad(std::string("expected ") + msg_name(expect) + ", got " + msg_name(frame.type));
  }

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::size_t count) {
    need(count, 8);
    std::vector<double> out(count);
    for (auto& v : out) v = f64();
    return out;
  }
  bool flag() {
    const auto v = u8();
    if (v > 1) bad("boolean field out of range");
    return v == 1;
  }
  std::string rest() {
    const auto b = take(data_.size() - at_);
    return std::string(b.begin(), b.end());
  }
  ExactSum sum() {
    ExactSum::Canonical c;
    c.special = u8();
    if (c.special > 7) bad("exact sum: bad special flags");
    c.negative = flag();
    c.base = i32();
    const auto count = u32();
    if (count > kMaxSumDigits) bad("exact sum: too many digits");
    if (c.base < 0 || static_cast<std::size_t>(c.base) + count > kMaxSumDigits) bad("exact sum: window out of range");
    need(count, 4);
    c.digits.resize(count);
    for (auto& d : c.digits) d = u32();
    if (count == 0 && (c.negative || c.base != 0)) bad("exact sum: non-canonical zero");
    if (count > 0 && (c.digits.front() == 0 || c.digits.back() == 0)) bad("exact sum: non-canonical digits");
    return ExactSum::from_canonical(c);
  }

  /// Guards count * width against the remaining bytes before allocating.
  void need(std::size_t count, std::size_t width) const {
    if (count > (data_.size() - at_) / width) bad("payload shorter than its declared counts");
  }
  void finish() const {
    if (at_ != data_.size()) bad("trailing bytes in payload");
  }

 private:
  std::span<const std::uint8_t> take(std::size_t len) {
    if (len > data_.size() - at_) bad("payload ends early");
    const auto out = std::span<const std::uint8_t>(data_).subspan(at_, len);
    at_ += len;
    return out;
  }

  std::span<const std::uint8_t> data_;
  std::size_t at_ = 0;
};

void put_family(Writer& w, ComponentFamily f) {
  w.u8(static_cast<std::uint8_t>(f.kind));
  w.u8(static_cast<std::uint8_t>(f.q));
}

ComponentFamily get_family(Reader& r) {
  const auto kind = r.u8();
  const auto q = r.u8();
  switch (kind) {
    case 0:
    case 1:
      if (q != 0) bad("skew dimension set for a symmetric family");
      return kind == 0 ? ComponentFamily::gaussian() : ComponentFamily::student_t();
    case 2:
      if (q < 1 || q > kMaxSkewDim) bad("skew dimension out of range");
      return ComponentFamily::cfust(q);
    default:
      bad("unknown family");
  }
}

std::uint32_t get_count(Reader& r, std::uint32_t lo, std::uint32_t hi, const char* what) {
  const auto v = r.u32();
  if (v < lo || v > hi) bad(std::string(what) + " out of range");
  return v;
}

InitStrategy get_strategy(Reader& r) {
  const auto v = r.u8();
  if (v > 2) bad("unknown initialization strategy");
  return static_cast<InitStrategy>(v);
}

void put_params(Writer& w, const MixtureParams& params) {
  put_family(w, params.family);
  w.u32(static_cast<std::uint32_t>(params.g()));
  w.u32(static_cast<std::uint32_t>(params.p()));
  w.f64s(params.pi);
  for (const auto& c : params.components) {
    w.f64s(c.mu);
    w.f64s(c.sigma.data);
    if (params.family.kind == ComponentFamily::Kind::Cfust) w.f64s(c.delta.data);
    if (params.family.has_nu()) w.f64(c.nu);
  }
}

MixtureParams get_params(Reader& r) {
  MixtureParams params;
  params.family = get_family(r);
  const std::size_t g = get_count(r, 1, kMaxComponents, "component count");
  const std::size_t p = get_count(r, 1, kMaxDim, "dimension");
  const std::size_t q = params.family.q;
  params.pi = r.f64s(g);
  params.components.resize(g);
  for (auto& c : params.components) {
    c.mu = r.f64s(p);
    c.sigma = Matrix(p, p);
    c.sigma.data = r.f64s(p * p);
    if (params.family.kind == ComponentFamily::Kind::Cfust) {
      c.delta = Matrix(p, q);
      c.delta.data = r.f64s(p * q);
    }
    if (params.family.has_nu()) c.nu = r.f64();
  }
  return params;
}

}  // namespace

const char* msg_name(MsgType type) noexcept {
  switch (type) {
    case MsgType::Hello: return "HELLO";
    case MsgType::Config: return "CONFIG";
    case MsgType::Data: return "DATA";
    case MsgType::Params: return "PARAMS";
    case MsgType::EResult: return "ERESULT";
    case MsgType::InitTask: return "INIT_TASK";
    case MsgType::InitResult: return "INIT_RESULT";
    case MsgType::Stop: return "STOP";
    case MsgType::Abort: return "ABORT";
  }
  return "UNKNOWN";
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxPayload) throw Error(Errc::OversizeFrame, "payload exceeds 2^30 bytes");
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + frame.payload.size());
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(frame.type));
  const auto len = static_cast<std::uint32_t>(frame.payload.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

std::pair<MsgType, std::uint32_t> decode_header(std::span<const std::uint8_t> header) {
  if (header.size() < kHeaderSize) throw Error(Errc::TruncatedFrame, "frame header is incomplete");
  if (!std::equal(kMagic.begin(), kMagic.end(), header.begin())) bad("bad magic");
  if (header[4] != kVersion) bad("unsupported protocol version " + std::to_string(header[4]));
  const auto type = header[5];
  if (type < 0x01 || type > 0x09) bad("unknown message type " + std::to_string(type));
  std::uint32_t len = 0;
  for (int i = 3; i >= 0; --i) len = (len << 8) | header[6 + static_cast<std::size_t>(i)];
  if (len > kMaxPayload) throw Error(Errc::OversizeFrame, "declared payload exceeds 2^30 bytes");
  return {static_cast<MsgType>(type), len};
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  const auto [type, len] = decode_header(bytes);
  const std::size_t body = bytes.size() - kHeaderSize;
  if (body < len) throw Error(Errc::TruncatedFrame, "payload is shorter than declared");
  if (body > len) bad("bytes after the end of the frame");
  return {type, std::vector<std::uint8_t>(bytes.begin() + kHeaderSize, bytes.end())};
}

Frame encode_hello(const Hello& msg) {
  Writer w;
  w.u32(msg.version);
  w.u32(msg.cores);
  return w.frame(MsgType::Hello);
}

Hello decode_hello(const Frame& frame) {
  Reader r(frame, MsgType::Hello);
  Hello msg;
  msg.version = r.u32();
  msg.cores = r.u32();
  r.finish();
  if (msg.cores == 0) bad("worker advertises zero cores");
  return msg;
}

Frame encode_config(const ConfigMsg& msg) {
  Writer w;
  put_family(w, msg.family);
  w.u32(msg.g);
  w.u32(msg.p);
  w.u64(msg.n);
  w.u64(msg.block.begin);
  w.u64(msg.block.end);
  w.f64(msg.epsilon);
  w.u32(msg.burn_in_r);
  w.u32(msg.max_iter);
  w.u64(msg.seed);
  w.u32(msg.n_starts);
  w.u8(static_cast<std::uint8_t>(msg.strategy));
  w.u64(msg.given_labels.size());
  for (const int v : msg.given_labels) w.i32(v);
  return w.frame(MsgType::Config);
}

ConfigMsg decode_config(const Frame& frame) {
  Reader r(frame, MsgType::Config);
  ConfigMsg msg;
  msg.family = get_family(r);
  msg.g = get_count(r, 1, kMaxComponents, "component count");
  msg.p = get_count(r, 1, kMaxDim, "dimension");
  msg.n = r.u64();
  msg.block.begin = r.u64();
  msg.block.end = r.u64();
  if (msg.n == 0 || msg.block.begin > msg.block.end || msg.block.end > msg.n) bad("row block out of range");
  msg.epsilon = r.f64();
  if (!(msg.epsilon > 0.0)) bad("tolerance must be positive");
  msg.burn_in_r = r.u32();
  msg.max_iter = r.u32();
  msg.seed = r.u64();
  msg.n_starts = r.u32();
  msg.strategy = get_strategy(r);
  const auto labels = r.u64();
  if (labels != 0 && labels != msg.n) bad("given labels disagree with n");
  r.need(labels, 4);
  msg.given_labels.resize(labels);
  for (auto& v : msg.given_labels) {
    v = r.i32();
    if (v < 0 || static_cast<std::uint32_t>(v) >= msg.g) bad("given label out of range");
  }
  r.finish();
  return msg;
}

Frame encode_data(const DataSet& data) {
  Writer w;
  w.u64(data.n());
  w.u32(static_cast<std::uint32_t>(data.p()));
  w.f64s(data.values());
  return w.frame(MsgType::Data);
}

DataSet decode_data(const Frame& frame) {
  Reader r(frame, MsgType::Data);
  const auto n = r.u64();
  const std::size_t p = get_count(r, 1, kMaxDim, "dimension");
  if (n == 0) bad("empty data block");
  r.need(n, 8 * p);
  auto values = r.f64s(n * p);
  r.finish();
  try {
    return DataSet(n, p, std::move(values));
  } catch (const Error& e) {
    bad(std::string("bad data block: ") + e.what());
  }
}

Frame encode_params(const MixtureParams& params) {
  Writer w;
  put_params(w, params);
  return w.frame(MsgType::Params);
}

MixtureParams decode_params(const Frame& frame) {
  Reader r(frame, MsgType::Params);
  auto params = get_params(r);
  r.finish();
  return params;
}

Frame encode_eresult(const PartialSums& sums) {
  Writer w;
  const std::size_t moments = sums.components.empty() ? 0 : sums.components.front().s2.size();
  w.u32(static_cast<std::uint32_t>(sums.block));
  w.u32(static_cast<std::uint32_t>(sums.components.size()));
  w.u32(static_cast<std::uint32_t>(moments));
  for (const auto& c : sums.components) {
    w.sum(c.s1);
    w.sum(c.sw);
    w.sum(c.s4);
    for (const auto& s : c.s2) w.sum(s);
    for (const auto& s : c.s3) w.sum(s);
  }
  w.sum(sums.loglik);
  return w.frame(MsgType::EResult);
}

PartialSums decode_eresult(const Frame& frame) {
  Reader r(frame, MsgType::EResult);
  PartialSums sums;
  sums.block = r.u32();
  const std::size_t g = get_count(r, 1, kMaxComponents, "component count");
  const std::size_t p = get_count(r, 0, kMaxDim, "moment dimension");
  sums.components.resize(g);
  for (auto& c : sums.components) {
    c.s1 = r.sum();
    c.sw = r.sum();
    c.s4 = r.sum();
    c.s2.resize(p);
    for (auto& s : c.s2) s = r.sum();
    c.s3.resize(p * (p + 1) / 2);
    for (auto& s : c.s3) s = r.sum();
  }
  sums.loglik = r.sum();
  r.finish();
  return sums;
}

Frame encode_init_task(const InitTask& msg) {
  Writer w;
  w.u32(msg.index);
  w.u64(msg.seed);
  w.u8(static_cast<std::uint8_t>(msg.strategy));
  return w.frame(MsgType::InitTask);
}

InitTask decode_init_task(const Frame& frame) {
  Reader r(frame, MsgType::InitTask);
  InitTask msg;
  msg.index = r.u32();
  msg.seed = r.u64();
  msg.strategy = get_strategy(r);
  r.finish();
  return msg;
}

Frame encode_init_result(const InitResult& msg) {
  Writer w;
  w.u32(msg.index);
  w.u8(msg.ok ? 1 : 0);
  if (msg.ok) {
    w.f64(msg.loglik0);
    put_params(w, msg.psi0);
  } else {
    w.bytes(msg.error);
  }
  return w.frame(MsgType::InitResult);
}

InitResult decode_init_result(const Frame& frame) {
  Reader r(frame, MsgType::InitResult);
  InitResult msg;
  msg.index = r.u32();
  msg.ok = r.flag();
  if (msg.ok) {
    msg.loglik0 = r.f64();
    msg.psi0 = get_params(r);
  } else {
    msg.error = r.rest();
    if (!valid_utf8(msg.error)) bad("failure reason is not valid UTF-8");
  }
  r.finish();
  return msg;
}

Frame encode_stop(const MixtureParams& params) {
  Writer w;
  put_params(w, params);
  return w.frame(MsgType::Stop);
}

MixtureParams decode_stop(const Frame& frame) {
  Reader r(frame, MsgType::Stop);
  auto params = get_params(r);
  r.finish();
  return params;
}

Frame encode_abort(const std::string& reason) {
  Writer w;
  w.bytes(reason);
  return w.frame(MsgType::Abort);
}

std::string decode_abort(const Frame& frame) {
  Reader r(frame, MsgType::Abort);
  auto reason = r.rest();
  if (!valid_utf8(reason)) bad("abort reason is not valid UTF-8");
  return reason;
}

void validate_frame(const Frame& frame) {
  switch (frame.type) {
    case MsgType::Hello: decode_hello(frame); return;
    case MsgType::Config: decode_config(frame); return;
    case MsgType::Data: decode_data(frame); return;
    case MsgType::Params: decode_params(frame); return;
    case MsgType::EResult: decode_eresult(frame); return;
    case MsgType::InitTask: decode_init_task(frame); return;
    case MsgType::InitResult: decode_init_result(frame); return;
    case MsgType::Stop: decode_stop(frame); return;
    case MsgType::Abort: decode_abort(frame); return;
  }
  bad("unknown message type");
}

}  // namespace mixem::wire
