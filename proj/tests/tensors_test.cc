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

#include "veil/tensors.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "veil/oracle.hpp"
#include "veil/rng.hpp"

namespace veil {
namespace {

GradVector fixed(std::vector<std::uint64_t> lanes, std::uint8_t frac_bits = 24) {
  std::vector<std::uint64_t> shape{lanes.size()};
  return GradVector(Domain::Fixed64, std::move(lanes), std::move(shape), frac_bits);
}

GradVector floats(std::vector<float> values) {
  std::vector<std::uint64_t> shape{values.size()};
  return GradVector::from_floats(values, std::move(shape));
}

GradVector random_fixed(SecureRng& rng, std::size_t n) {
  std::vector<std::uint64_t> lanes(n);
  for (auto& l : lanes) l = rng.next_u64();
  return fixed(std::move(lanes));
}

TEST(AddTest, Fixed64ModularInverseCancels) {
  const std::uint64_t x = 0x0123456789abcdefull;
  const auto sum = add(fixed({x}), fixed({~x + 1}));
  EXPECT_EQ(sum.lanes(), std::vector<std::uint64_t>{0});
}

TEST(AddTest, Float32ExactBinaryFractions) {
  const auto sum = add(floats({1.5f, -2.0f}), floats({0.5f, 2.0f}));
  EXPECT_EQ(sum.lane_f32(0), 2.0f);
  EXPECT_EQ(sum.lane_f32(1), 0.0f);
}

TEST(AddTest, MatchesBigIntegerOracle) {
  SecureRng rng(7);
  const auto a = random_fixed(rng, 1000);
  const auto b = random_fixed(rng, 1000);
  const auto sum = add(a, b);
  EXPECT_EQ(sum.lanes(), oracle::bigint_fold_mod64({a, b}));
}

TEST(AddTest, MismatchIsStructuralError) {
  EXPECT_THROW(add(fixed({1}), floats({1.0f})), StructuralError);
  EXPECT_THROW(add(fixed({1}), fixed({1, 2})), StructuralError);
  // Same total length, different per-layer split.
  GradVector split2(Domain::Fixed64, {1, 2}, {1, 1}, 24);
  EXPECT_THROW(add(fixed({1, 2}), split2), StructuralError);
}

TEST(NegateTest, Fixed64Residue) {
  EXPECT_EQ(negate(fixed({5})).lanes(), std::vector<std::uint64_t>{~5ull + 1});
}

TEST(NegateTest, Float32SignFlipGivesPlusZeroSum) {
  const auto v = floats({0.0f});
  const auto n = negate(v);
  EXPECT_TRUE(std::signbit(n.lane_f32(0)));
  const auto sum = add(v, n);
  EXPECT_EQ(sum.lane_f32(0), 0.0f);
  EXPECT_FALSE(std::signbit(sum.lane_f32(0)));
}

TEST(NegateTest, RandomVectorCancelsExactly) {
  SecureRng rng(11);
  const auto v = random_fixed(rng, 1000);
  const auto sum = add(v, negate(v));
  for (auto l : sum.lanes()) EXPECT_EQ(l, 0u);

  std::vector<float> fv(1000);
  for (auto& x : fv) x = static_cast<float>(rng.next_double(-100.0, 100.0));
  const auto f = floats(fv);
  const auto fsum = add(f, negate(f));
  for (std::size_t i = 0; i < fsum.size(); ++i) EXPECT_EQ(fsum.lane_f32(i), 0.0f);
}

TEST(EncodeFixedTest, KnownResidues) {
  FixedPointConfig cfg{24, 64.0};
  const double one[] = {1.0};
  EXPECT_EQ(encode_fixed(one, cfg, {1}).lanes(), std::vector<std::uint64_t>{16777216});
  const double neg_half[] = {-0.5};
  EXPECT_EQ(encode_fixed(neg_half, cfg, {1}).lanes(),
            std::vector<std::uint64_t>{0xffffffffffffffffull - 8388608 + 1});
}

TEST(EncodeFixedTest, OutOfRangeNamesIndex) {
  FixedPointConfig cfg{24, 2.0};
  const double xs[] = {0.0, 1.0, 5.0};
  try {
    encode_fixed(xs, cfg, {3});
    FAIL() << "expected RangeError";
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find("x[2]"), std::string::npos);
  }
}

TEST(EncodeFixedTest, SweepRoundTripWithinQuantizationStep) {
  FixedPointConfig cfg{24, 16.0};
  SecureRng rng(3);
  std::vector<double> xs(1000);
  for (auto& x : xs) x = rng.next_double(-10.0, 10.0);
  const auto v = encode_fixed(xs, cfg, {1000});
  const auto back = decode_fixed(v, cfg);
  double max_err = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    max_err = std::max(max_err, std::fabs(back[i] - xs[i]));
  EXPECT_LE(max_err, std::ldexp(1.0, -25));
}

TEST(DecodeFixedTest, FracBitsMismatchRejected) {
  FixedPointConfig cfg{20, 64.0};
  EXPECT_THROW(decode_fixed(fixed({1}, 24), cfg), StructuralError);
}

TEST(SerializeTest, RoundTripBothDomains) {
  SecureRng rng(21);
  const auto v = random_fixed(rng, 17);
  EXPECT_EQ(deserialize(serialize(v)), v);

  std::vector<float> fv(9);
  for (auto& x : fv) x = static_cast<float>(rng.next_double(-5.0, 5.0));
  GradVector f(Domain::Float32,
               [&] {
                 std::vector<std::uint64_t> lanes(fv.size());
                 for (std::size_t i = 0; i < fv.size(); ++i)
                   lanes[i] = std::bit_cast<std::uint32_t>(fv[i]);
                 return lanes;
               }(),
               {4, 5});
  EXPECT_EQ(deserialize(serialize(f)), f);
}

TEST(SerializeTest, GoldenBytes) {
  // One fixed64 lane holding 1.0 at 24 fractional bits.
  FixedPointConfig cfg{24, 64.0};
  const double one[] = {1.0};
  const auto v = encode_fixed(one, cfg, {1});
  const std::vector<std::uint8_t> expected = {
      'C', 'G', 'V', '1',                              // magic
      0x01,                                            // domain fixed64
      0x18,                                            // frac_bits 24
      0x01, 0x00, 0x00, 0x00,                          // layer count
      0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,  // layer length
      0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00,  // 2^24 LE
  };
  EXPECT_EQ(serialize(v), expected);

  // One float32 lane holding 1.0.
  const auto f = GradVector::from_floats(std::vector<float>{1.0f}, {1});
  const std::vector<std::uint8_t> expected_f = {
      'C', 'G', 'V', '1',
      0x00, 0x00,
      0x01, 0x00, 0x00, 0x00,
      0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
      0x00, 0x00, 0x80, 0x3f,  // IEEE-754 1.0f LE
  };
  EXPECT_EQ(serialize(f), expected_f);
}

TEST(SerializeTest, EmptyPayloadIsFormatError) {
  EXPECT_THROW(deserialize({}), FormatError);
}

TEST(SerializeTest, WrongMagicIsFormatError) {
  auto bytes = serialize(fixed({1, 2, 3}));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize(bytes), FormatError);
}

TEST(SerializeTest, TruncationAndTrailingGarbageRejected) {
  auto bytes = serialize(fixed({1, 2, 3}));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize(truncated), FormatError);
  auto padded = bytes;
  padded.push_back(0);
  EXPECT_THROW(deserialize(padded), FormatError);
}

TEST(GradVectorTest, ShapeMustMatchLaneCountAndBeNonEmpty) {
  EXPECT_THROW(GradVector(Domain::Fixed64, {}, {}, 24), StructuralError);
  EXPECT_THROW(GradVector(Domain::Fixed64, {1, 2}, {3}, 24), StructuralError);
  EXPECT_THROW(GradVector(Domain::Fixed64, {}, {0}, 24), StructuralError);
}

TEST(GradVectorTest, Float32LanesMustBeNarrow) {
  EXPECT_THROW(GradVector(Domain::Float32, {0x1'00000000ull}, {1}), StructuralError);
}

// Any multiset of Fixed64 vectors whose big-integer lane sums are 0 mod 2^64
// folds to the exact zero vector in every order.
TEST(PropertyTest, ZeroSumClosureUnderAnyFoldOrder) {
  SecureRng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.next_below(9);
    std::vector<GradVector> parts;
    for (std::size_t i = 0; i + 1 < k; ++i) parts.push_back(random_fixed(rng, 64));
    GradVector sum = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) sum = add(sum, parts[i]);
    parts.push_back(negate(sum));

    std::vector<std::size_t> order(parts.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937 shuffler(trial);
    std::shuffle(order.begin(), order.end(), shuffler);

    GradVector folded = parts[order[0]];
    for (std::size_t i = 1; i < order.size(); ++i) folded = add(folded, parts[order[i]]);
    for (auto l : folded.lanes()) ASSERT_EQ(l, 0u);
  }
}

TEST(PropertyTest, Fixed64FoldOrderIndependence) {
  SecureRng rng(9);
  std::vector<GradVector> parts;
  for (int i = 0; i < 8; ++i) parts.push_back(random_fixed(rng, 128));

  GradVector forward = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) forward = add(forward, parts[i]);

  std::vector<std::size_t> order(parts.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 shuffler(99);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(order.begin(), order.end(), shuffler);
    GradVector permuted = parts[order[0]];
    for (std::size_t i = 1; i < order.size(); ++i) permuted = add(permuted, parts[order[i]]);
    ASSERT_EQ(permuted, forward);
  }
}

TEST(DomainConfigTest, EncodeDecodeDispatch) {
  DomainConfig fx{Domain::Fixed64, {24, 64.0}};
  const double xs[] = {1.25, -3.5};
  const auto v = fx.encode(xs, {2});
  EXPECT_EQ(v.domain(), Domain::Fixed64);
  const auto back = fx.decode(v);
  EXPECT_DOUBLE_EQ(back[0], 1.25);
  EXPECT_DOUBLE_EQ(back[1], -3.5);

  DomainConfig fl{Domain::Float32, {}};
  const auto f = fl.encode(xs, {2});
  EXPECT_EQ(f.domain(), Domain::Float32);
  EXPECT_EQ(fl.decode(f)[1], -3.5);
  EXPECT_THROW(fl.decode(v), StructuralError);
}

}  // namespace
}  // namespace veil
