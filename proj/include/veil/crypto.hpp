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
#include <map>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "veil/errors.hpp"
#include "veil/rng.hpp"
#include "veil/tensors.hpp"

namespace veil {

// Who a key belongs to / what it protects. The tag is descriptive only; the
// release rules live in the attestation service's policy.
struct OwnerTag {
  enum class Kind : std::uint8_t { DataOwner, ModelOwner, MaskKey, SessionKey };

  Kind kind = Kind::ModelOwner;
  std::uint32_t a = 0;  // DataOwner index / MaskKey set / SessionKey endpoint a
  std::uint32_t b = 0;  // MaskKey index / SessionKey endpoint b

  static OwnerTag data_owner(std::uint32_t i) { return {Kind::DataOwner, i, 0}; }
  static OwnerTag model_owner() { return {Kind::ModelOwner, 0, 0}; }
  static OwnerTag mask_key(std::uint32_t set, std::uint32_t index) {
    return {Kind::MaskKey, set, index};
  }
  static OwnerTag session_key(std::uint32_t a, std::uint32_t b) {
    return {Kind::SessionKey, a, b};
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::DataOwner: return "data-owner-" + std::to_string(a);
      case Kind::ModelOwner: return "model-owner";
      case Kind::MaskKey:
        return "mask-s" + std::to_string(a) + "-i" + std::to_string(b);
      case Kind::SessionKey:
        return "session-" + std::to_string(a) + "-" + std::to_string(b);
    }
    return "unknown";
  }
};

struct SymmetricKey {
  std::string key_id;
  std::array<std::uint8_t, 32> bytes{};
  OwnerTag owner_tag;
};

// Authenticated ciphertext as stored in the untrusted blob store. Decrypts
// only under the matching key; any bit flip fails authentication.
struct EncryptedBlob {
  std::string key_id;
  std::array<std::uint8_t, 12> nonce{};
  std::vector<std::uint8_t> ciphertext;
  std::array<std::uint8_t, 16> auth_tag{};

  std::size_t wire_size() const { return 2 + key_id.size() + 12 + 16 + ciphertext.size(); }

  bool operator==(const EncryptedBlob&) const = default;
};

inline SymmetricKey keygen(std::string key_id, OwnerTag tag, SecureRng& rng) {
  SymmetricKey key;
  key.key_id = std::move(key_id);
  key.owner_tag = tag;
  rng.fill(key.bytes);
  return key;
}

inline SymmetricKey keygen(OwnerTag tag, SecureRng& rng) {
  return keygen(tag.to_string(), tag, rng);
}

// ChaCha20-Poly1305 (IETF, 12-byte nonce, 16-byte tag). The nonce comes from
// the caller's rng so seeded jobs produce reproducible transcripts;
// production callers pass an entropy-backed rng.
inline EncryptedBlob encrypt(const SymmetricKey& key, std::span<const std::uint8_t> plaintext,
                             SecureRng& rng) {
  ensure_sodium();
  EncryptedBlob blob;
  blob.key_id = key.key_id;
  rng.fill(blob.nonce);
  blob.ciphertext.resize(plaintext.size());
  unsigned long long mac_len = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt_detached(
      blob.ciphertext.data(), blob.auth_tag.data(), &mac_len, plaintext.data(),
      plaintext.size(), nullptr, 0, nullptr, blob.nonce.data(), key.bytes.data());
  return blob;
}

inline std::vector<std::uint8_t> decrypt(const SymmetricKey& key, const EncryptedBlob& blob) {
  ensure_sodium();
  if (key.key_id != blob.key_id)
    throw AuthError(AuthError::Kind::WrongKey,
                    "blob is keyed to '" + blob.key_id + "', not '" + key.key_id + "'");
  std::vector<std::uint8_t> plaintext(blob.ciphertext.size());
  const int rc = crypto_aead_chacha20poly1305_ietf_decrypt_detached(
      plaintext.data(), nullptr, blob.ciphertext.data(), blob.ciphertext.size(),
      blob.auth_tag.data(), nullptr, 0, blob.nonce.data(), key.bytes.data());
  if (rc != 0)
    throw AuthError(AuthError::Kind::Tampered,
                    "authentication failed for blob keyed to '" + blob.key_id + "'");
  return plaintext;
}

// Blob wire layout: key_id length u16 LE | key_id utf-8 | nonce (12) |
// tag (16) | ciphertext.
inline std::vector<std::uint8_t> serialize_blob(const EncryptedBlob& blob) {
  if (blob.key_id.size() > 0xffff) throw FormatError("key id too long");
  std::vector<std::uint8_t> out;
  out.reserve(blob.wire_size());
  wire::put_u16(out, static_cast<std::uint16_t>(blob.key_id.size()));
  out.insert(out.end(), blob.key_id.begin(), blob.key_id.end());
  out.insert(out.end(), blob.nonce.begin(), blob.nonce.end());
  out.insert(out.end(), blob.auth_tag.begin(), blob.auth_tag.end());
  out.insert(out.end(), blob.ciphertext.begin(), blob.ciphertext.end());
  return out;
}

inline EncryptedBlob parse_blob(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  EncryptedBlob blob;
  const std::uint16_t id_len = r.u16();
  auto id = r.take(id_len);
  blob.key_id.assign(id.begin(), id.end());
  auto nonce = r.take(blob.nonce.size());
  std::copy(nonce.begin(), nonce.end(), blob.nonce.begin());
  auto tag = r.take(blob.auth_tag.size());
  std::copy(tag.begin(), tag.end(), blob.auth_tag.begin());
  auto ct = r.take(r.remaining());
  blob.ciphertext.assign(ct.begin(), ct.end());
  return blob;
}

// Insert-once key registry shared by a job's trusted parties. Re-inserting
// the exact same key is a no-op (crash/retry of a deterministic generator);
// a colliding id with different bytes is rejected.
class KeyRegistry {
 public:
  void insert(const SymmetricKey& key) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = keys_.emplace(key.key_id, key);
    if (!inserted && it->second.bytes != key.bytes)
      throw ConflictError("key id '" + key.key_id + "' already registered");
  }

  SymmetricKey get(const std::string& key_id) const {
    std::lock_guard lock(mu_);
    auto it = keys_.find(key_id);
    if (it == keys_.end()) throw NotFoundError("no key '" + key_id + "'");
    return it->second;
  }

  bool contains(const std::string& key_id) const {
    std::lock_guard lock(mu_);
    return keys_.count(key_id) > 0;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, SymmetricKey> keys_;
};

// Records every (key_id, nonce) pair used in a job so tests can assert that
// no nonce is ever reused under the same key.
class NonceAudit {
 public:
  // Returns false on a repeat.
  bool record(const std::string& key_id, const std::array<std::uint8_t, 12>& nonce) {
    std::lock_guard lock(mu_);
    bool fresh = seen_[key_id].insert(nonce).second;
    if (!fresh) ++violations_;
    return fresh;
  }

  std::uint64_t violations() const {
    std::lock_guard lock(mu_);
    return violations_;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::set<std::array<std::uint8_t, 12>>> seen_;
  std::uint64_t violations_ = 0;
};

}  // namespace veil
