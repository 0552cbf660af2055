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

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "veil/crypto.hpp"
#include "veil/errors.hpp"

namespace veil {

// Enclave role. Training enclaves are indexed per data owner; kAnyIndex in a
// policy rule matches every index of that kind.
struct Role {
  enum class Kind : std::uint8_t { Training, Aggregator, Admin };
  static constexpr std::uint32_t kAnyIndex = 0xffffffff;

  Kind kind = Kind::Training;
  std::uint32_t index = 0;

  static Role training(std::uint32_t i) { return {Kind::Training, i}; }
  static Role any_training() { return {Kind::Training, kAnyIndex}; }
  static Role aggregator() { return {Kind::Aggregator, 0}; }
  static Role admin() { return {Kind::Admin, 0}; }

  // Does this rule role admit `actual`?
  bool admits(const Role& actual) const {
    return kind == actual.kind && (index == kAnyIndex || index == actual.index);
  }

  bool operator==(const Role&) const = default;

  std::string to_string() const {
    switch (kind) {
      case Kind::Training:
        return index == kAnyIndex ? "training(*)" : "training(" + std::to_string(index) + ")";
      case Kind::Aggregator: return "aggregator";
      case Kind::Admin: return "admin";
    }
    return "unknown";
  }
};

// SHA-256 of the enclave's canonical code identity string. The identity
// covers role, code version, and the *names* of the placeholders the code
// resolves at runtime - never their values, so hyperparameters stay out of
// the measurement.
struct CodeMeasurement {
  std::array<std::uint8_t, 32> digest{};

  static CodeMeasurement of(const std::string& code_identity) {
    ensure_sodium();
    CodeMeasurement m;
    crypto_hash_sha256(m.digest.data(),
                       reinterpret_cast<const unsigned char*>(code_identity.data()),
                       code_identity.size());
    return m;
  }

  auto operator<=>(const CodeMeasurement&) const = default;

  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (auto b : digest) {
      out.push_back(digits[b >> 4]);
      out.push_back(digits[b & 0xf]);
    }
    return out;
  }
};

// Canonical code identity strings for the three enclave kinds.
// `placeholders` lists the names of dynamically loaded secrets/config.
inline std::string code_identity(Role::Kind kind, const std::string& code_version,
                                 const std::vector<std::string>& placeholders) {
  std::string id;
  switch (kind) {
    case Role::Kind::Training: id = "role=training"; break;
    case Role::Kind::Aggregator: id = "role=aggregator"; break;
    case Role::Kind::Admin: id = "role=admin"; break;
  }
  id += ";code=" + code_version + ";placeholders=";
  for (std::size_t i = 0; i < placeholders.size(); ++i) {
    if (i) id += ",";
    id += placeholders[i];
  }
  return id;
}

struct PolicyRule {
  std::string secret_id;
  Role allowed_role;
  CodeMeasurement required_measurement;
  std::vector<std::string> approvers;  // owner ids that must endorse this rule

  bool operator==(const PolicyRule&) const = default;

  std::string rule_id() const {
    return secret_id + "->" + allowed_role.to_string();
  }
};

// Structural constraints that no registered rule may violate, regardless of
// who submits it. Data keys go to their own training enclave only; mask keys
// to one specific training index; the model key never reaches the admin.
inline void validate_rule(const PolicyRule& rule) {
  const auto& id = rule.secret_id;
  const auto& role = rule.allowed_role;
  if (id.rfind("data-key-", 0) == 0) {
    const std::uint32_t owner =
        static_cast<std::uint32_t>(std::stoul(id.substr(std::string("data-key-").size())));
    if (role.kind != Role::Kind::Training || role.index != owner)
      throw PolicyError("data key '" + id + "' may only be released to training(" +
                            std::to_string(owner) + ")",
                        rule.rule_id());
  } else if (id == "model-key") {
    if (role.kind == Role::Kind::Admin)
      throw PolicyError("model key is never released to the admin enclave", rule.rule_id());
  } else if (id.rfind("mask-key-", 0) == 0) {
    if (role.kind != Role::Kind::Training || role.index == Role::kAnyIndex)
      throw PolicyError("mask key '" + id + "' may only target one training enclave",
                        rule.rule_id());
  }
}

struct SecretPolicy {
  std::vector<PolicyRule> rules;

  void validate() const {
    for (const auto& r : rules) validate_rule(r);
  }
};

struct EnclaveRecord {
  std::string enclave_id;
  Role role;
  CodeMeasurement measurement;
  bool attested = false;
  std::set<std::string> provisioned;
};

struct ProvisionEvent {
  std::string enclave_id;
  Role role;
  std::string secret_id;
  bool granted = false;
  std::string detail;  // rule id on grant, reason on denial
};

// Configuration-and-attestation service. Owners enroll exactly once,
// depositing their keys and the policy rules they endorse; enclaves register,
// get attested against the endorsed measurements, and request secrets. Every
// release decision is logged. Requests are handled one at a time (the service
// is a single serialized actor).
class Cas {
 public:
  // Step one of the workflow: the owner attests the service, deposits its
  // keys, and registers the rules it endorses, all in a single interaction.
  void enroll_owner(const std::string& owner_id, const std::vector<SymmetricKey>& keys,
                    const std::vector<PolicyRule>& rules) {
    auto [it, fresh] = owners_.emplace(owner_id, 1);
    if (!fresh) {
      ++it->second;
      throw PolicyError("owner '" + owner_id + "' already enrolled");
    }
    for (const auto& rule : rules) validate_rule(rule);
    for (const auto& key : keys) keys_.insert(key);
    endorsements_[owner_id] = rules;
  }

  std::uint64_t owner_interactions(const std::string& owner_id) const {
    auto it = owners_.find(owner_id);
    return it == owners_.end() ? 0 : it->second;
  }

  // Channel session keys live in the service too; this stands in for the
  // TLS key agreement the service terminates inside enclaves. Release is
  // still governed by owner-endorsed rules.
  void deposit_key(const SymmetricKey& key) { keys_.insert(key); }

  // Protocol secrets (mask keys, the SSP residual key) are deposited at run
  // time by the attested admin enclave; the rule still passes the same
  // structural validation as owner rules.
  void register_protocol_secret(const std::string& issuer_enclave_id, const SymmetricKey& key,
                                PolicyRule rule) {
    const auto it = enclaves_.find(issuer_enclave_id);
    if (it == enclaves_.end() || it->second.role.kind != Role::Kind::Admin ||
        !it->second.attested)
      throw PolicyError("protocol secrets may only be registered by an attested admin enclave");
    validate_rule(rule);
    if (rule.secret_id.rfind("mask-key-", 0) != 0)
      throw PolicyError("admin may only register mask material secrets", rule.rule_id());
    keys_.insert(key);
    runtime_rules_.push_back(std::move(rule));
  }

  void register_enclave(const std::string& enclave_id, Role role,
                        const CodeMeasurement& measurement) {
    // Re-registration models a replacement instance after a crash: it must
    // attest again before receiving anything.
    enclaves_[enclave_id] = EnclaveRecord{enclave_id, role, measurement, false, {}};
  }

  // True (and recorded) iff the measurement equals what every relevant
  // endorsement expects for this role. A failure is recorded, not fatal.
  bool attest(const std::string& enclave_id) {
    auto it = enclaves_.find(enclave_id);
    if (it == enclaves_.end()) throw NotFoundError("unknown enclave '" + enclave_id + "'");
    EnclaveRecord& rec = it->second;
    bool any_rule = false;
    bool ok = true;
    for (const auto& [owner, rules] : endorsements_) {
      for (const auto& rule : rules) {
        if (!rule.allowed_role.admits(rec.role)) continue;
        any_rule = true;
        if (rule.required_measurement != rec.measurement) ok = false;
      }
    }
    rec.attested = any_rule && ok;
    attestations_.emplace_back(enclave_id, rec.attested);
    return rec.attested;
  }

  bool is_attested(const std::string& enclave_id) const {
    auto it = enclaves_.find(enclave_id);
    return it != enclaves_.end() && it->second.attested;
  }

  const EnclaveRecord& record(const std::string& enclave_id) const {
    auto it = enclaves_.find(enclave_id);
    if (it == enclaves_.end()) throw NotFoundError("unknown enclave '" + enclave_id + "'");
    return it->second;
  }

  // Releases `secret_id` to the enclave if it is attested and an endorsed
  // rule permits it. Idempotent per (enclave, secret): the grant is logged
  // once and the same key is returned on a re-request (crash replacements
  // re-fetch their secrets without a second release).
  SymmetricKey provision(const std::string& enclave_id, const std::string& secret_id) {
    auto it = enclaves_.find(enclave_id);
    if (it == enclaves_.end()) throw NotFoundError("unknown enclave '" + enclave_id + "'");
    EnclaveRecord& rec = it->second;
    auto deny = [&](const std::string& why) -> PolicyError {
      log_.push_back({enclave_id, rec.role, secret_id, false, why});
      return PolicyError("provision denied for '" + enclave_id + "': " + why, why);
    };
    if (!rec.attested) throw deny("enclave not attested");

    const PolicyRule* match = find_approved_rule(secret_id, rec);
    if (match == nullptr) {
      // Identify the closest violated rule for the diagnostic.
      std::string why = "no endorsed rule releases '" + secret_id + "' to " +
                        rec.role.to_string();
      for (const auto& rule : all_rules())
        if (rule->secret_id == secret_id) why += " [violates " + rule->rule_id() + "]";
      throw deny(why);
    }
    if (!keys_.contains(secret_id)) throw deny("secret not deposited");

    if (!granted_.count({enclave_id, secret_id})) {
      granted_.insert({enclave_id, secret_id});
      log_.push_back({enclave_id, rec.role, secret_id, true, match->rule_id()});
    }
    rec.provisioned.insert(secret_id);
    return keys_.get(secret_id);
  }

  const std::vector<ProvisionEvent>& provision_log() const { return log_; }
  const std::vector<std::pair<std::string, bool>>& attestation_log() const {
    return attestations_;
  }

  // Replays every granted release against the policy predicate. Returns the
  // rule ids of unsound grants (empty means the log is sound).
  std::vector<std::string> audit_grants() const {
    std::vector<std::string> unsound;
    for (const auto& ev : log_) {
      if (!ev.granted) continue;
      auto it = enclaves_.find(ev.enclave_id);
      if (it == enclaves_.end()) {
        unsound.push_back(ev.enclave_id + ":" + ev.secret_id);
        continue;
      }
      // Re-evaluate with the enclave's current record; measurements and
      // endorsements are append-only within a job.
      EnclaveRecord probe = it->second;
      probe.role = ev.role;
      if (find_approved_rule(ev.secret_id, probe) == nullptr)
        unsound.push_back(ev.enclave_id + ":" + ev.secret_id);
    }
    return unsound;
  }

  // Convenience predicates for the key-isolation invariants.
  std::vector<ProvisionEvent> grants_to_role(Role::Kind kind) const {
    std::vector<ProvisionEvent> out;
    for (const auto& ev : log_)
      if (ev.granted && ev.role.kind == kind) out.push_back(ev);
    return out;
  }

 private:
  std::vector<const PolicyRule*> all_rules() const {
    std::vector<const PolicyRule*> out;
    for (const auto& [owner, rules] : endorsements_)
      for (const auto& rule : rules) out.push_back(&rule);
    for (const auto& rule : runtime_rules_) out.push_back(&rule);
    return out;
  }

  // An owner-endorsed rule is approved when every approver it names has
  // registered an identical rule. Runtime (admin) rules are approved by
  // construction once the admin enclave passed attestation.
  const PolicyRule* find_approved_rule(const std::string& secret_id,
                                       const EnclaveRecord& rec) const {
    for (const auto* rule : all_rules()) {
      if (rule->secret_id != secret_id) continue;
      if (!rule->allowed_role.admits(rec.role)) continue;
      if (rule->required_measurement != rec.measurement) continue;
      bool endorsed = true;
      for (const auto& approver : rule->approvers) {
        auto it = endorsements_.find(approver);
        if (it == endorsements_.end() ||
            std::find(it->second.begin(), it->second.end(), *rule) == it->second.end()) {
          endorsed = false;
          break;
        }
      }
      if (endorsed) return rule;
    }
    return nullptr;
  }

  std::map<std::string, std::uint64_t> owners_;  // owner id -> interaction count
  std::map<std::string, std::vector<PolicyRule>> endorsements_;
  std::vector<PolicyRule> runtime_rules_;
  KeyRegistry keys_;
  std::map<std::string, EnclaveRecord> enclaves_;
  std::set<std::pair<std::string, std::string>> granted_;
  std::vector<ProvisionEvent> log_;
  std::vector<std::pair<std::string, bool>> attestations_;
};

}  // namespace veil
