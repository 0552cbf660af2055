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

#include <sodium.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string_view>

namespace veil {

inline void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialization failed");
}

// Seedable CSPRNG: a ChaCha20 keystream consumed block by block. The same
// seed always yields the same stream, which is what makes whole simulated
// jobs replayable byte for byte.
class SecureRng {
 public:
  using Seed = std::array<std::uint8_t, 32>;

  explicit SecureRng(const Seed& seed) : key_(seed) { ensure_sodium(); }

  explicit SecureRng(std::uint64_t seed) : SecureRng(expand_seed(seed)) {}

  // Nondeterministic stream keyed from the system entropy source.
  static SecureRng from_entropy() {
    ensure_sodium();
    Seed seed{};
    randombytes_buf(seed.data(), seed.size());
    return SecureRng(seed);
  }

  // Independent child stream; `label` picks the branch. Used to give every
  // actor/iteration its own stream so restarts replay identically.
  SecureRng derive(std::string_view label) const {
    crypto_hash_sha256_state st;
    crypto_hash_sha256_init(&st);
    crypto_hash_sha256_update(&st, key_.data(), key_.size());
    crypto_hash_sha256_update(&st,
                              reinterpret_cast<const unsigned char*>(label.data()),
                              label.size());
    Seed child{};
    crypto_hash_sha256_final(&st, child.data());
    return SecureRng(child);
  }

  void fill(std::span<std::uint8_t> out) {
    for (auto& b : out) b = next_byte();
  }

  std::uint64_t next_u64() {
    std::uint8_t raw[8];
    fill(raw);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | raw[i];
    return v;
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_double(double lo, double hi) {
    return lo + (hi - lo) * next_unit_double();
  }

  // Uniform in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) return 0;
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

 private:
  static Seed expand_seed(std::uint64_t seed) {
    ensure_sodium();
    std::uint8_t raw[8];
    for (int i = 0; i < 8; ++i) raw[i] = static_cast<std::uint8_t>(seed >> (8 * i));
    Seed out{};
    crypto_hash_sha256(out.data(), raw, sizeof raw);
    return out;
  }

  std::uint8_t next_byte() {
    if (pos_ == buf_.size()) refill();
    return buf_[pos_++];
  }

  void refill() {
    std::uint8_t nonce[crypto_stream_chacha20_NONCEBYTES] = {0};
    for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(block_ >> (8 * i));
    ++block_;
    crypto_stream_chacha20(buf_.data(), buf_.size(), nonce, key_.data());
    pos_ = 0;
  }

  Seed key_{};
  std::uint64_t block_ = 0;
  std::array<std::uint8_t, 512> buf_{};
  std::size_t pos_ = buf_.size();
};

}  // namespace veil
