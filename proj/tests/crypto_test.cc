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

#include "veil/crypto.hpp"

#include <gtest/gtest.h>

#include <vector>

#include "veil/rng.hpp"

namespace veil {
namespace {

std::vector<std::uint8_t> random_bytes(SecureRng& rng, std::size_t n) {
  std::vector<std::uint8_t> out(n);
  rng.fill(out);
  return out;
}

TEST(KeygenTest, DistinctKeysFromOneStream) {
  SecureRng rng(1);
  const auto a = keygen("a", OwnerTag::data_owner(0), rng);
  const auto b = keygen("b", OwnerTag::data_owner(1), rng);
  EXPECT_NE(a.bytes, b.bytes);
}

TEST(KeygenTest, SeededStreamReplaysIdentically) {
  SecureRng rng1(42), rng2(42);
  const auto a = keygen("k", OwnerTag::model_owner(), rng1);
  const auto b = keygen("k", OwnerTag::model_owner(), rng2);
  EXPECT_EQ(a.bytes, b.bytes);
}

TEST(KeyRegistryTest, InsertOnce) {
  SecureRng rng(5);
  KeyRegistry registry;
  registry.insert(keygen("data-key-0", OwnerTag::data_owner(0), rng));
  EXPECT_THROW(registry.insert(keygen("data-key-0", OwnerTag::data_owner(0), rng)),
               ConflictError);
  EXPECT_TRUE(registry.contains("data-key-0"));
  EXPECT_THROW(registry.get("nope"), NotFoundError);
}

TEST(EncryptTest, RoundTripAcrossSizes) {
  SecureRng rng(7);
  const auto key = keygen("k", OwnerTag::model_owner(), rng);
  for (std::size_t size : {std::size_t{0}, std::size_t{1}, std::size_t{16},
                           std::size_t{4096}, std::size_t{1} << 20}) {
    const auto plaintext = random_bytes(rng, size);
    const auto blob = encrypt(key, plaintext, rng);
    EXPECT_EQ(decrypt(key, blob), plaintext) << "size " << size;
  }
}

TEST(EncryptTest, CiphertextRevealsLengthOnly) {
  SecureRng rng(9);
  const auto key = keygen("k", OwnerTag::model_owner(), rng);
  const std::vector<std::uint8_t> plaintext(1000, 0xAA);
  const auto blob = encrypt(key, plaintext, rng);
  EXPECT_EQ(blob.ciphertext.size(), plaintext.size());
  EXPECT_NE(blob.ciphertext, plaintext);
}

TEST(DecryptTest, SingleBitFlipsFailAuthentication) {
  SecureRng rng(11);
  const auto key = keygen("k", OwnerTag::model_owner(), rng);
  const auto plaintext = random_bytes(rng, 512);
  const auto blob = encrypt(key, plaintext, rng);

  for (int trial = 0; trial < 100; ++trial) {
    auto tampered = blob;
    // Flip one random bit anywhere in nonce | tag | ciphertext.
    const std::size_t total_bits =
        (tampered.nonce.size() + tampered.auth_tag.size() + tampered.ciphertext.size()) * 8;
    const std::size_t bit = rng.next_below(total_bits);
    const std::size_t byte = bit / 8;
    const std::uint8_t mask = static_cast<std::uint8_t>(1u << (bit % 8));
    if (byte < tampered.nonce.size()) {
      tampered.nonce[byte] ^= mask;
    } else if (byte < tampered.nonce.size() + tampered.auth_tag.size()) {
      tampered.auth_tag[byte - tampered.nonce.size()] ^= mask;
    } else {
      tampered.ciphertext[byte - tampered.nonce.size() - tampered.auth_tag.size()] ^= mask;
    }
    try {
      decrypt(key, tampered);
      FAIL() << "tampered blob decrypted, trial " << trial;
    } catch (const AuthError& e) {
      EXPECT_EQ(e.kind(), AuthError::Kind::Tampered);
    }
  }
}

TEST(DecryptTest, WrongKeyIsDistinguishableFromTampering) {
  SecureRng rng(13);
  const auto key = keygen("data-key-0", OwnerTag::data_owner(0), rng);
  const auto other = keygen("data-key-1", OwnerTag::data_owner(1), rng);
  const auto blob = encrypt(key, random_bytes(rng, 64), rng);
  try {
    decrypt(other, blob);
    FAIL() << "decrypted under wrong key";
  } catch (const AuthError& e) {
    EXPECT_EQ(e.kind(), AuthError::Kind::WrongKey);
  }

  // Same id forged onto a blob keyed differently: authentication still fails.
  auto forged = blob;
  forged.key_id = other.key_id;
  try {
    decrypt(other, forged);
    FAIL() << "forged key id decrypted";
  } catch (const AuthError& e) {
    EXPECT_EQ(e.kind(), AuthError::Kind::Tampered);
  }
}

TEST(BlobWireTest, RoundTrip) {
  SecureRng rng(15);
  const auto key = keygen("some-key", OwnerTag::mask_key(3, 1), rng);
  const auto blob = encrypt(key, random_bytes(rng, 100), rng);
  const auto bytes = serialize_blob(blob);
  EXPECT_EQ(bytes.size(), blob.wire_size());
  EXPECT_EQ(parse_blob(bytes), blob);

  auto truncated = bytes;
  truncated.resize(10);
  EXPECT_THROW(parse_blob(truncated), FormatError);
}


TEST(BlobWireTest, GoldenLayout) {
  EncryptedBlob blob;
  blob.key_id = "k";
  blob.nonce = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  blob.auth_tag = {20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33, 34, 35};
  blob.ciphertext = {0xAA, 0xBB};
  const std::vector<std::uint8_t> expected = {
      0x01, 0x00,                                      // key id length LE
      'k',                                             // key id
      1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12,           // nonce
      20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33, 34, 35,  // tag
      0xAA, 0xBB,                                      // ciphertext
  };
  EXPECT_EQ(serialize_blob(blob), expected);
}

TEST(NonceAuditTest, DetectsReuse) {
  NonceAudit audit;
  std::array<std::uint8_t, 12> n1{1, 2, 3};
  std::array<std::uint8_t, 12> n2{4, 5, 6};
  EXPECT_TRUE(audit.record("k", n1));
  EXPECT_TRUE(audit.record("k", n2));
  EXPECT_TRUE(audit.record("other", n1));  // same nonce, different key: fine
  EXPECT_FALSE(audit.record("k", n1));
  EXPECT_EQ(audit.violations(), 1u);
}

}  // namespace
}  // namespace veil
