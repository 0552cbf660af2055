/*
 * Copyright 2026 The Veil Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "veil/errors.hpp"

namespace veil {

// Arithmetic domain of a gradient/mask/weight vector.
//
// Float32 mirrors a plain ML pipeline (IEEE addition, so masking cancels only
// approximately). Fixed64 holds signed fixed-point residues modulo 2^64;
// addition wraps, is exactly associative and commutative, and masks sampled
// uniformly from the full group cancel exactly.
enum class Domain : std::uint8_t { Float32 = 0, Fixed64 = 1 };

inline const char* domain_name(Domain d) {
  return d == Domain::Float32 ? "float32" : "fixed64";
}

struct FixedPointConfig {
  int frac_bits = 24;
  double clamp_abs = 64.0;  // max |x| accepted by encode

  void validate() const {
    if (frac_bits < 1 || frac_bits > 52)
      throw ConfigError("frac_bits must be in [1, 52], got " + std::to_string(frac_bits));
    if (!(clamp_abs > 0))
      throw ConfigError("clamp_abs must be positive");
  }
};

// Flat numeric vector with a per-layer shape. Lanes are 64-bit: Fixed64
// stores residues mod 2^64, Float32 stores one f32 bit pattern per lane
// (upper half zero). Immutable after construction; all operations return
// fresh vectors.
class GradVector {
 public:
  GradVector(Domain domain, std::vector<std::uint64_t> lanes,
             std::vector<std::uint64_t> shape, std::uint8_t frac_bits = 0)
      : domain_(domain),
        frac_bits_(frac_bits),
        lanes_(std::move(lanes)),
        shape_(std::move(shape)) {
    std::uint64_t total = 0;
    for (auto s : shape_) total += s;
    if (total == 0 || total != lanes_.size())
      throw StructuralError("shape sums to " + std::to_string(total) + " but vector has " +
                            std::to_string(lanes_.size()) + " lanes");
    if (domain_ == Domain::Float32) {
      if (frac_bits_ != 0) throw StructuralError("float32 vectors carry frac_bits 0");
      for (auto l : lanes_)
        if (l >> 32) throw StructuralError("float32 lane with nonzero upper half");
    } else if (frac_bits_ < 1 || frac_bits_ > 52) {
      throw StructuralError("fixed64 vector needs frac_bits in [1, 52]");
    }
  }

  static GradVector from_floats(std::span<const float> values,
                                std::vector<std::uint64_t> shape) {
    std::vector<std::uint64_t> lanes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
      lanes[i] = std::bit_cast<std::uint32_t>(values[i]);
    return GradVector(Domain::Float32, std::move(lanes), std::move(shape));
  }

  static GradVector zeros(Domain domain, std::vector<std::uint64_t> shape,
                          std::uint8_t frac_bits = 24) {
    std::uint64_t total = 0;
    for (auto s : shape) total += s;
    return GradVector(domain, std::vector<std::uint64_t>(total, 0), std::move(shape),
                      domain == Domain::Fixed64 ? frac_bits : std::uint8_t{0});
  }

  Domain domain() const { return domain_; }
  std::uint8_t frac_bits() const { return frac_bits_; }
  const std::vector<std::uint64_t>& lanes() const { return lanes_; }
  const std::vector<std::uint64_t>& shape() const { return shape_; }
  std::size_t size() const { return lanes_.size(); }

  float lane_f32(std::size_t i) const {
    return std::bit_cast<float>(static_cast<std::uint32_t>(lanes_[i]));
  }

  std::vector<float> as_floats() const {
    std::vector<float> out(lanes_.size());
    for (std::size_t i = 0; i < lanes_.size(); ++i) out[i] = lane_f32(i);
    return out;
  }

  bool same_layout(const GradVector& o) const {
    return domain_ == o.domain_ && frac_bits_ == o.frac_bits_ && shape_ == o.shape_;
  }

  bool operator==(const GradVector& o) const {
    return same_layout(o) && lanes_ == o.lanes_;
  }

 private:
  Domain domain_;
  std::uint8_t frac_bits_;
  std::vector<std::uint64_t> lanes_;
  std::vector<std::uint64_t> shape_;
};

namespace detail {

inline void require_same_layout(const GradVector& a, const GradVector& b,
                                const char* op) {
  if (a.domain() != b.domain())
    throw StructuralError(std::string(op) + ": domain mismatch (" +
                          domain_name(a.domain()) + " vs " + domain_name(b.domain()) + ")");
  if (a.shape() != b.shape() || a.frac_bits() != b.frac_bits())
    throw StructuralError(std::string(op) + ": shape/layout mismatch");
}

}  // namespace detail

// Lane-wise sum. Fixed64 wraps modulo 2^64; Float32 is IEEE f32 addition.
inline GradVector add(const GradVector& a, const GradVector& b) {
  detail::require_same_layout(a, b, "add");
  std::vector<std::uint64_t> out(a.size());
  if (a.domain() == Domain::Fixed64) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.lanes()[i] + b.lanes()[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const float s = a.lane_f32(i) + b.lane_f32(i);
      out[i] = std::bit_cast<std::uint32_t>(s);
    }
  }
  return GradVector(a.domain(), std::move(out), a.shape(), a.frac_bits());
}

// Additive inverse: modular negation for Fixed64, sign flip for Float32.
inline GradVector negate(const GradVector& a) {
  std::vector<std::uint64_t> out(a.size());
  if (a.domain() == Domain::Fixed64) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ~a.lanes()[i] + 1;
  } else {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::bit_cast<std::uint32_t>(-a.lane_f32(i));
  }
  return GradVector(a.domain(), std::move(out), a.shape(), a.frac_bits());
}

// Fixed-point encode: lane_i = round(x_i * 2^frac_bits) as a signed residue
// mod 2^64. Rejects any |x_i| > clamp_abs, naming the offending index.
inline GradVector encode_fixed(std::span<const double> x, const FixedPointConfig& cfg,
                               std::vector<std::uint64_t> shape) {
  cfg.validate();
  const double scale = std::ldexp(1.0, cfg.frac_bits);
  std::vector<std::uint64_t> lanes(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(std::fabs(x[i]) <= cfg.clamp_abs))
      throw RangeError("encode_fixed: |x[" + std::to_string(i) + "]| = " +
                       std::to_string(x[i]) + " exceeds clamp " +
                       std::to_string(cfg.clamp_abs));
    lanes[i] = static_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(x[i] * scale)));
  }
  return GradVector(Domain::Fixed64, std::move(lanes), std::move(shape),
                    static_cast<std::uint8_t>(cfg.frac_bits));
}

// Inverse of encode_fixed: interpret each lane as two's-complement and divide
// by 2^frac_bits. Aggregate overflow is a caller contract (the job config
// bounds N * clamp_abs * 2^frac_bits below 2^62), so no detection here.
inline std::vector<double> decode_fixed(const GradVector& v, const FixedPointConfig& cfg) {
  if (v.domain() != Domain::Fixed64)
    throw StructuralError("decode_fixed: vector is not fixed64");
  if (v.frac_bits() != cfg.frac_bits)
    throw StructuralError("decode_fixed: vector carries frac_bits " +
                          std::to_string(v.frac_bits()) + ", config says " +
                          std::to_string(cfg.frac_bits));
  const double inv_scale = std::ldexp(1.0, -cfg.frac_bits);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<double>(static_cast<std::int64_t>(v.lanes()[i])) * inv_scale;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization. Bit-exact payload:
//   magic "CGV1" | domain u8 | frac_bits u8 | layer_count u32 LE |
//   per-layer lengths u64 LE | lanes (f32 LE each for Float32, u64 LE each
//   for Fixed64)
// ---------------------------------------------------------------------------

namespace wire {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Cursor over an input buffer; every read checks the remaining length.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return take(1)[0]; }

  std::uint16_t u16() {
    auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (remaining() < n)
      throw FormatError("truncated payload: need " + std::to_string(n) + " bytes, have " +
                        std::to_string(remaining()));
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace wire

inline constexpr char kVectorMagic[4] = {'C', 'G', 'V', '1'};

inline std::vector<std::uint8_t> serialize(const GradVector& v) {
  std::vector<std::uint8_t> out;
  out.reserve(10 + 8 * v.shape().size() +
              v.size() * (v.domain() == Domain::Float32 ? 4 : 8));
  out.insert(out.end(), kVectorMagic, kVectorMagic + 4);
  out.push_back(static_cast<std::uint8_t>(v.domain()));
  out.push_back(v.frac_bits());
  wire::put_u32(out, static_cast<std::uint32_t>(v.shape().size()));
  for (auto s : v.shape()) wire::put_u64(out, s);
  if (v.domain() == Domain::Float32) {
    for (auto l : v.lanes()) wire::put_u32(out, static_cast<std::uint32_t>(l));
  } else {
    for (auto l : v.lanes()) wire::put_u64(out, l);
  }
  return out;
}

inline GradVector deserialize(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kVectorMagic, 4) != 0)
    throw FormatError("bad vector magic");
  const std::uint8_t domain_byte = r.u8();
  if (domain_byte > 1) throw FormatError("unknown domain byte " + std::to_string(domain_byte));
  const Domain domain = static_cast<Domain>(domain_byte);
  const std::uint8_t frac_bits = r.u8();
  const std::uint32_t layer_count = r.u32();
  if (layer_count == 0) throw FormatError("zero layer count");
  std::vector<std::uint64_t> shape(layer_count);
  std::uint64_t total = 0;
  for (auto& s : shape) {
    s = r.u64();
    total += s;
    if (total > (1ull << 32)) throw FormatError("implausible total lane count");
  }
  const std::size_t lane_bytes = domain == Domain::Float32 ? 4 : 8;
  if (r.remaining() != total * lane_bytes)
    throw FormatError("lane section is " + std::to_string(r.remaining()) +
                      " bytes, expected " + std::to_string(total * lane_bytes));
  std::vector<std::uint64_t> lanes(total);
  for (auto& l : lanes) l = domain == Domain::Float32 ? r.u32() : r.u64();
  try {
    return GradVector(domain, std::move(lanes), std::move(shape), frac_bits);
  } catch (const StructuralError& e) {
    throw FormatError(std::string("inconsistent payload: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Domain-dispatching codec between real vectors and GradVectors. All model
// math happens in double; this is the single boundary where values enter and
// leave the exchange domain.
// ---------------------------------------------------------------------------

struct DomainConfig {
  Domain domain = Domain::Fixed64;
  FixedPointConfig fixed{};

  GradVector encode(std::span<const double> x, std::vector<std::uint64_t> shape) const {
    if (domain == Domain::Fixed64) return encode_fixed(x, fixed, std::move(shape));
    std::vector<std::uint64_t> lanes(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      lanes[i] = std::bit_cast<std::uint32_t>(static_cast<float>(x[i]));
    return GradVector(Domain::Float32, std::move(lanes), std::move(shape));
  }

  std::vector<double> decode(const GradVector& v) const {
    if (v.domain() != domain) throw StructuralError("decode: domain mismatch");
    if (domain == Domain::Fixed64) return decode_fixed(v, fixed);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v.lane_f32(i);
    return out;
  }
};

}  // namespace veil
