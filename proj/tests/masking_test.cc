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

#include "veil/masking.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "veil/aggregation.hpp"
#include "veil/oracle.hpp"

namespace veil {
namespace {

constexpr DomainConfig kFixed{Domain::Fixed64, {24, 64.0}};
constexpr DomainConfig kFloat{Domain::Float32, {}};

const CodeMeasurement kTrainingMeasurement =
    CodeMeasurement::of(code_identity(Role::Kind::Training, "data-handler/1.0", {"DATA_KEY"}));
const CodeMeasurement kAdminMeasurement =
    CodeMeasurement::of(code_identity(Role::Kind::Admin, "admin/1.0", {}));

// Prepares `cas` with an attested admin, ready to accept mask material.
void add_attested_admin(Cas& cas) {
  std::vector<PolicyRule> rules;
  rules.push_back({"admin-ok", Role::admin(), kAdminMeasurement, {}});
  cas.enroll_owner("model-owner", {}, rules);
  cas.register_enclave("admin", Role::admin(), kAdminMeasurement);
  cas.attest("admin");
}

TEST(GenerateMaskSetTest, SingleMaskIsZeroVector) {
  SecureRng rng(1);
  const auto set = generate_mask_set(0, 1, {8}, kFixed, rng);
  ASSERT_EQ(set.masks.size(), 1u);
  for (auto l : set.masks[0].lanes()) EXPECT_EQ(l, 0u);

  SecureRng rng2(1);
  const auto fset = generate_mask_set(0, 1, {8}, kFloat, rng2);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(fset.masks[0].lane_f32(i), 0.0f);
}

TEST(GenerateMaskSetTest, Fixed64SumsToZeroPerBigIntegerOracle) {
  SecureRng rng(2);
  const auto set = generate_mask_set(0, 3, {1000}, kFixed, rng);
  const auto folded = oracle::bigint_fold_mod64(set.masks);
  for (auto l : folded) EXPECT_EQ(l, 0u);
}

TEST(GenerateMaskSetTest, Float32SumWithinTolerance) {
  SecureRng rng(3);
  const std::uint32_t n = 16;
  const auto set = generate_mask_set(0, n, {256}, kFloat, rng);
  const auto folded = flat_aggregate(set.masks);
  double max_abs = 0.0;
  for (std::size_t i = 0; i < folded.size(); ++i)
    max_abs = std::max(max_abs, std::fabs(static_cast<double>(folded.lane_f32(i))));
  EXPECT_LE(max_abs, n * std::ldexp(1.0, -20));
}

TEST(GenerateMaskSetTest, KeysArePerMaskAndNamed) {
  SecureRng rng(4);
  const auto set = generate_mask_set(7, 4, {4}, kFixed, rng);
  ASSERT_EQ(set.keys.size(), 4u);
  EXPECT_EQ(set.keys[2].key_id, "mask-key-s7-i2");
  EXPECT_NE(set.keys[0].bytes, set.keys[1].bytes);
}

TEST(PregenerateTest, CountsAndDeterminism) {
  SecureRng rng(5);
  MemoryBlobStore store;
  Cas cas;
  add_attested_admin(cas);
  const auto pool =
      pregenerate(5, 4, {16}, kFixed, rng, store, cas, "admin", kTrainingMeasurement);
  EXPECT_EQ(pool.size(), 5u);
  EXPECT_EQ(store.list(BlobKey::Kind::Mask).size(), 20u);

  // Every key landed in CAS: an attested training enclave can fetch its own.
  cas.register_enclave("training-2", Role::training(2), kTrainingMeasurement);
  std::vector<PolicyRule> tr;
  tr.push_back({"training-ok", Role::any_training(), kTrainingMeasurement, {}});
  cas.enroll_owner("data-owner-2", {}, tr);
  ASSERT_TRUE(cas.attest("training-2"));
  EXPECT_NO_THROW(cas.provision("training-2", "mask-key-s0-i2"));

  // Replaying the same seed gives byte-identical blobs.
  SecureRng rng2(5);
  MemoryBlobStore store2;
  Cas cas2;
  add_attested_admin(cas2);
  pregenerate(5, 4, {16}, kFixed, rng2, store2, cas2, "admin", kTrainingMeasurement);
  for (const auto& key : store.list(BlobKey::Kind::Mask))
    EXPECT_EQ(serialize_blob(store.get(key)), serialize_blob(store2.get(key)));
}

TEST(PregenerateTest, StoreHoldsNoPlaintextMaskBytes) {
  SecureRng rng(6);
  MemoryBlobStore store;
  Cas cas;
  add_attested_admin(cas);
  pregenerate(3, 2, {32}, kFixed, rng, store, cas, "admin", kTrainingMeasurement);
  const std::string magic(kVectorMagic, kVectorMagic + 4);
  for (const auto& bytes : store.dump_all_bytes()) {
    const std::string haystack(bytes.begin(), bytes.end());
    EXPECT_EQ(haystack.find(magic), std::string::npos);
  }
}

TEST(ServeMaskRequestTest, DistinctGrantsPerEnclaveAndIdempotence) {
  SecureRng rng(7);
  MemoryBlobStore store;
  Cas cas;
  add_attested_admin(cas);
  auto pool = pregenerate(2, 4, {8}, kFixed, rng, store, cas, "admin", kTrainingMeasurement);

  std::set<std::string> secrets;
  for (std::uint32_t i = 0; i < 4; ++i) {
    const auto grant = serve_mask_request(pool, 0, i);
    EXPECT_EQ(grant.blob, BlobKey::mask(0, i));
    secrets.insert(grant.secret_id);
  }
  EXPECT_EQ(secrets.size(), 4u);

  const auto again = serve_mask_request(pool, 0, 2);
  EXPECT_EQ(again.blob, BlobKey::mask(0, 2));
  EXPECT_EQ(again.secret_id, mask_secret_id(0, 2));
}

TEST(ServeMaskRequestTest, PoolExhaustionAtBoundary) {
  SecureRng rng(8);
  MemoryBlobStore store;
  Cas cas;
  add_attested_admin(cas);
  auto pool = pregenerate(3, 2, {4}, kFixed, rng, store, cas, "admin", kTrainingMeasurement);
  EXPECT_NO_THROW(serve_mask_request(pool, 2, 0));
  EXPECT_THROW(serve_mask_request(pool, 3, 0), PoolExhaustedError);
}

TEST(ServeMaskRequestTest, CursorIsMonotone) {
  SecureRng rng(9);
  MemoryBlobStore store;
  Cas cas;
  add_attested_admin(cas);
  auto pool = pregenerate(4, 2, {4}, kFixed, rng, store, cas, "admin", kTrainingMeasurement);
  serve_mask_request(pool, 1, 0);
  EXPECT_EQ(pool.next_unused(), 2u);
  serve_mask_request(pool, 0, 1);  // re-serving an older iteration is fine
  EXPECT_EQ(pool.next_unused(), 2u);
}

TEST(ResidualMaskTest, FullParticipationGivesOwnMask) {
  SecureRng rng(10);
  const auto set = generate_mask_set(0, 4, {16}, kFixed, rng);
  const auto residual = residual_mask(set, {0, 1, 2, 3});
  EXPECT_EQ(residual, set.masks[3]);
  EXPECT_EQ(residual_cover(4, {0, 1, 2, 3}), (std::vector<std::uint32_t>{3}));
}

TEST(ResidualMaskTest, PartialParticipationCancelsExactly) {
  SecureRng rng(11);
  const auto set = generate_mask_set(0, 4, {100}, kFixed, rng);
  const std::vector<std::uint32_t> participants{0, 1, 2};
  const auto residual = residual_mask(set, participants);
  const auto folded =
      oracle::bigint_fold_mod64({set.masks[0], set.masks[1], residual});
  for (auto l : folded) EXPECT_EQ(l, 0u);
  EXPECT_EQ(residual_cover(4, participants), (std::vector<std::uint32_t>{2, 3}));
}

TEST(ResidualMaskTest, SingleParticipantGetsZero) {
  SecureRng rng(12);
  const auto set = generate_mask_set(0, 5, {20}, kFixed, rng);
  const auto residual = residual_mask(set, {3});
  for (auto l : residual.lanes()) EXPECT_EQ(l, 0u);
}

TEST(ResidualMaskTest, ArgumentValidation) {
  SecureRng rng(13);
  const auto set = generate_mask_set(0, 3, {4}, kFixed, rng);
  EXPECT_THROW(residual_mask(set, {}), ConfigError);
  EXPECT_THROW(residual_mask(set, {0, 0}), ConfigError);
  EXPECT_THROW(residual_mask(set, {5}), ConfigError);
}

// Masking never changes the aggregate: fold(g_i + m_i) == fold(g_i), exactly
// in Fixed64 and within tolerance in Float32.
TEST(PropertyTest, MaskingPreservesAggregate) {
  SecureRng rng(14);
  const std::uint32_t n = 6;
  const std::vector<std::uint64_t> shape{50};

  // Fixed64
  {
    const auto set = generate_mask_set(0, n, shape, kFixed, rng);
    std::vector<GradVector> gradients, masked;
    for (std::uint32_t i = 0; i < n; ++i) {
      std::vector<double> g(50);
      for (auto& v : g) v = rng.next_double(-8.0, 8.0);
      gradients.push_back(kFixed.encode(g, shape));
      masked.push_back(add(gradients.back(), set.masks[i]));
    }
    EXPECT_EQ(flat_aggregate(masked), flat_aggregate(gradients));
  }

  // Float32
  {
    const auto set = generate_mask_set(0, n, shape, kFloat, rng);
    std::vector<GradVector> gradients, masked;
    double max_g = 0.0;
    for (std::uint32_t i = 0; i < n; ++i) {
      std::vector<double> g(50);
      for (auto& v : g) {
        v = rng.next_double(-2.0, 2.0);
        max_g = std::max(max_g, std::fabs(v));
      }
      gradients.push_back(kFloat.encode(g, shape));
      masked.push_back(add(gradients.back(), set.masks[i]));
    }
    const auto with = flat_aggregate(masked);
    const auto without = flat_aggregate(gradients);
    const double tolerance = n * std::ldexp(1.0, -18) * max_g;
    for (std::size_t i = 0; i < with.size(); ++i)
      EXPECT_NEAR(with.lane_f32(i), without.lane_f32(i), tolerance);
  }
}

// Masked lanes look uniform: bucket the top nibble of one masked lane over
// 10k draws and run a chi-squared test against the uniform distribution.
TEST(PropertyTest, MaskedLanesPassChiSquaredUniformity) {
  SecureRng rng(15);
  const std::vector<std::uint64_t> shape{4};
  std::vector<double> g{1.25, -3.5, 0.0, 7.75};
  const auto fixed_g = kFixed.encode(g, shape);

  constexpr int kBuckets = 16;
  constexpr int kDraws = 10000;
  // Critical value of chi-squared with 15 degrees of freedom at alpha=0.01.
  constexpr double kCritical = 30.5779;

  for (std::size_t lane = 0; lane < shape[0]; ++lane) {
    std::array<int, kBuckets> counts{};
    for (int draw = 0; draw < kDraws; ++draw) {
      const std::uint64_t mask_lane = rng.next_u64();
      const std::uint64_t masked = fixed_g.lanes()[lane] + mask_lane;
      ++counts[masked >> 60];
    }
    const double expected = static_cast<double>(kDraws) / kBuckets;
    double chi2 = 0.0;
    for (int c : counts) {
      const double d = c - expected;
      chi2 += d * d / expected;
    }
    EXPECT_LT(chi2, kCritical) << "lane " << lane;
  }
}

}  // namespace
}  // namespace veil
