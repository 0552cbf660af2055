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

#include "veil/cas.hpp"

#include <gtest/gtest.h>

#include "veil/rng.hpp"

namespace veil {
namespace {

const std::vector<std::string> kTrainingPlaceholders = {"DATA_KEY", "MODEL_KEY", "MASK_KEY",
                                                        "BATCH_SIZE"};
const std::vector<std::string> kAggregatorPlaceholders = {"MODEL_KEY", "LEARNING_RATE_SCHEDULE",
                                                          "CLIP_NORM"};

CodeMeasurement training_measurement() {
  return CodeMeasurement::of(
      code_identity(Role::Kind::Training, "data-handler/1.0", kTrainingPlaceholders));
}

CodeMeasurement aggregator_measurement() {
  return CodeMeasurement::of(
      code_identity(Role::Kind::Aggregator, "model-handler/1.0", kAggregatorPlaceholders));
}

CodeMeasurement admin_measurement() {
  return CodeMeasurement::of(code_identity(Role::Kind::Admin, "admin/1.0", {}));
}

// A two-data-owner fixture with the canonical rule set.
struct Fixture {
  Cas cas;
  SecureRng rng{99};

  Fixture() {
    const auto train_m = training_measurement();
    const auto agg_m = aggregator_measurement();
    const auto adm_m = admin_measurement();

    for (std::uint32_t i = 0; i < 2; ++i) {
      const std::string owner = "data-owner-" + std::to_string(i);
      std::vector<PolicyRule> rules;
      rules.push_back({"data-key-" + std::to_string(i), Role::training(i), train_m,
                       {owner, "model-owner"}});
      rules.push_back({"model-key", Role::any_training(), train_m, {"model-owner"}});
      rules.push_back({"admin-ok", Role::admin(), adm_m, {}});
      cas.enroll_owner(owner, {keygen("data-key-" + std::to_string(i),
                                      OwnerTag::data_owner(i), rng)},
                       rules);
    }
    std::vector<PolicyRule> model_rules;
    model_rules.push_back({"data-key-0", Role::training(0), train_m,
                           {"data-owner-0", "model-owner"}});
    model_rules.push_back({"data-key-1", Role::training(1), train_m,
                           {"data-owner-1", "model-owner"}});
    model_rules.push_back({"model-key", Role::any_training(), train_m, {"model-owner"}});
    model_rules.push_back({"model-key", Role::aggregator(), agg_m, {"model-owner"}});
    model_rules.push_back({"admin-ok", Role::admin(), adm_m, {}});
    cas.enroll_owner("model-owner", {keygen("model-key", OwnerTag::model_owner(), rng)},
                     model_rules);
  }

  void register_and_attest_all() {
    cas.register_enclave("training-0", Role::training(0), training_measurement());
    cas.register_enclave("training-1", Role::training(1), training_measurement());
    cas.register_enclave("aggregator", Role::aggregator(), aggregator_measurement());
    cas.register_enclave("admin", Role::admin(), admin_measurement());
    ASSERT_TRUE(cas.attest("training-0"));
    ASSERT_TRUE(cas.attest("training-1"));
    ASSERT_TRUE(cas.attest("aggregator"));
    ASSERT_TRUE(cas.attest("admin"));
  }
};

TEST(MeasurementTest, IdentityChangesChangeHash) {
  const auto a = training_measurement();
  const auto b = CodeMeasurement::of(
      code_identity(Role::Kind::Training, "data-handler/1.1", kTrainingPlaceholders));
  EXPECT_NE(a, b);
  EXPECT_EQ(a, training_measurement());
  EXPECT_EQ(a.hex().size(), 64u);
}

TEST(MeasurementTest, IndependentOfPlaceholderValues) {
  // The identity covers placeholder names, never values: two jobs with
  // different hyperparameters measure identically.
  const auto id = code_identity(Role::Kind::Training, "data-handler/1.0", kTrainingPlaceholders);
  EXPECT_EQ(id.find("BATCH_SIZE=") == std::string::npos, true);
  EXPECT_EQ(CodeMeasurement::of(id), training_measurement());
}

TEST(CasTest, AttestApprovedTrainingEnclave) {
  Fixture fx;
  fx.cas.register_enclave("training-0", Role::training(0), training_measurement());
  EXPECT_TRUE(fx.cas.attest("training-0"));
  EXPECT_TRUE(fx.cas.is_attested("training-0"));
}

TEST(CasTest, TamperedCodeIdentityIsRejected) {
  Fixture fx;
  const auto tampered = CodeMeasurement::of(
      code_identity(Role::Kind::Training, "data-handler/1.0+exfil", kTrainingPlaceholders));
  fx.cas.register_enclave("training-0", Role::training(0), tampered);
  EXPECT_FALSE(fx.cas.attest("training-0"));
  EXPECT_THROW(fx.cas.provision("training-0", "data-key-0"), PolicyError);
  EXPECT_TRUE(fx.cas.record("training-0").provisioned.empty());
}

TEST(CasTest, AggregatorPresentingTrainingMeasurementIsRejected) {
  Fixture fx;
  fx.cas.register_enclave("aggregator", Role::aggregator(), training_measurement());
  EXPECT_FALSE(fx.cas.attest("aggregator"));
}

TEST(CasTest, ProvisionOwnDataKey) {
  Fixture fx;
  fx.register_and_attest_all();
  const auto key = fx.cas.provision("training-0", "data-key-0");
  EXPECT_EQ(key.key_id, "data-key-0");
}

TEST(CasTest, CrossOwnerDataKeyDenied) {
  Fixture fx;
  fx.register_and_attest_all();
  EXPECT_THROW(fx.cas.provision("training-0", "data-key-1"), PolicyError);
  // The denial is logged.
  bool found = false;
  for (const auto& ev : fx.cas.provision_log())
    if (!ev.granted && ev.enclave_id == "training-0" && ev.secret_id == "data-key-1")
      found = true;
  EXPECT_TRUE(found);
}

TEST(CasTest, AggregatorNeverGetsDataKeys) {
  Fixture fx;
  fx.register_and_attest_all();
  EXPECT_THROW(fx.cas.provision("aggregator", "data-key-0"), PolicyError);
  EXPECT_THROW(fx.cas.provision("aggregator", "data-key-1"), PolicyError);
  EXPECT_NO_THROW(fx.cas.provision("aggregator", "model-key"));
}

TEST(CasTest, UnattestedEnclaveDenied) {
  Fixture fx;
  fx.cas.register_enclave("training-0", Role::training(0), training_measurement());
  EXPECT_THROW(fx.cas.provision("training-0", "data-key-0"), PolicyError);
}

TEST(CasTest, StructuralPolicyValidationRejectsDataKeyLeaks) {
  Cas cas;
  SecureRng rng(1);
  const auto agg_m = aggregator_measurement();
  // Even the model owner cannot register a rule releasing a data key to the
  // aggregator.
  std::vector<PolicyRule> bad;
  bad.push_back({"data-key-0", Role::aggregator(), agg_m, {"model-owner"}});
  EXPECT_THROW(cas.enroll_owner("model-owner", {}, bad), PolicyError);

  std::vector<PolicyRule> bad_admin;
  bad_admin.push_back({"model-key", Role::admin(), admin_measurement(), {}});
  EXPECT_THROW(cas.enroll_owner("someone", {}, bad_admin), PolicyError);

  std::vector<PolicyRule> bad_wildcard;
  bad_wildcard.push_back({"data-key-0", Role::any_training(), training_measurement(), {}});
  EXPECT_THROW(cas.enroll_owner("else", {}, bad_wildcard), PolicyError);
}

TEST(CasTest, ProvisionIsIdempotentAndLoggedOnce) {
  Fixture fx;
  fx.register_and_attest_all();
  const auto k1 = fx.cas.provision("training-1", "data-key-1");
  const auto k2 = fx.cas.provision("training-1", "data-key-1");
  EXPECT_EQ(k1.bytes, k2.bytes);
  int grants = 0;
  for (const auto& ev : fx.cas.provision_log())
    if (ev.granted && ev.secret_id == "data-key-1") ++grants;
  EXPECT_EQ(grants, 1);
}

TEST(CasTest, RuleNeedsAllApproversEndorsing) {
  Cas cas;
  SecureRng rng(2);
  const auto train_m = training_measurement();
  // Only the data owner endorses; the model owner never registers the rule,
  // so the release must not happen.
  std::vector<PolicyRule> rules;
  rules.push_back({"data-key-0", Role::training(0), train_m, {"data-owner-0", "model-owner"}});
  cas.enroll_owner("data-owner-0", {keygen("data-key-0", OwnerTag::data_owner(0), rng)}, rules);
  cas.register_enclave("training-0", Role::training(0), train_m);
  ASSERT_TRUE(cas.attest("training-0"));
  EXPECT_THROW(cas.provision("training-0", "data-key-0"), PolicyError);
}

TEST(CasTest, OwnerEnrollsExactlyOnce) {
  Fixture fx;
  EXPECT_EQ(fx.cas.owner_interactions("data-owner-0"), 1u);
  EXPECT_THROW(fx.cas.enroll_owner("data-owner-0", {}, {}), PolicyError);
  EXPECT_EQ(fx.cas.owner_interactions("data-owner-0"), 2u);
}

TEST(CasTest, ProtocolSecretsOnlyFromAttestedAdmin) {
  Fixture fx;
  SecureRng rng(3);
  const auto key = keygen("mask-key-s0-i0", OwnerTag::mask_key(0, 0), rng);
  PolicyRule rule{"mask-key-s0-i0", Role::training(0), training_measurement(), {}};
  EXPECT_THROW(fx.cas.register_protocol_secret("admin", key, rule), PolicyError);

  fx.register_and_attest_all();
  EXPECT_NO_THROW(fx.cas.register_protocol_secret("admin", key, rule));
  // Aggregator cannot act as the mask issuer.
  const auto key2 = keygen("mask-key-s0-i1", OwnerTag::mask_key(0, 1), rng);
  PolicyRule rule2{"mask-key-s0-i1", Role::training(1), training_measurement(), {}};
  EXPECT_THROW(fx.cas.register_protocol_secret("aggregator", key2, rule2), PolicyError);

  // And the rule itself is still validated: a mask key aimed at the
  // aggregator is structurally rejected.
  const auto key3 = keygen("mask-key-s1-i0", OwnerTag::mask_key(1, 0), rng);
  PolicyRule bad{"mask-key-s1-i0", Role::aggregator(), aggregator_measurement(), {}};
  EXPECT_THROW(fx.cas.register_protocol_secret("admin", key3, bad), PolicyError);
}

TEST(CasTest, AuditReplaysGrantsAgainstPolicy) {
  Fixture fx;
  fx.register_and_attest_all();
  fx.cas.provision("training-0", "data-key-0");
  fx.cas.provision("training-1", "model-key");
  fx.cas.provision("aggregator", "model-key");
  EXPECT_TRUE(fx.cas.audit_grants().empty());
}

}  // namespace
}  // namespace veil
