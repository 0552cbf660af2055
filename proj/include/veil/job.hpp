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

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "veil/cas.hpp"
#include "veil/config.hpp"
#include "veil/enclaves.hpp"
#include "veil/masking.hpp"
#include "veil/simnet.hpp"

namespace veil {

struct IterationOutcome {
  std::uint32_t iteration = 0;
  std::uint32_t attempts = 1;
  Tick start = 0;
  Tick finish = 0;
  std::vector<std::uint32_t> participants;

  Tick span() const { return finish - start; }
};

struct RunResult {
  // Final model, three ways: decoded vector, its bit-exact payload, and the
  // encrypted blob exactly as stored.
  GradVector final_weights = GradVector::zeros(Domain::Fixed64, {1});
  std::vector<std::uint8_t> final_model_payload;
  std::vector<std::uint8_t> final_model_blob;
  ModelVersion final_version{};
  double eval_accuracy = 0.0;

  Tick total_ticks = 0;
  std::uint32_t iterations_run = 0;
  std::vector<IterationOutcome> iterations;

  std::vector<MetricsRecord> metrics;
  std::string metrics_csv;
  std::vector<DeliveryRecord> trace;
  std::vector<TaintEvent> taint_log;
  std::vector<ProvisionEvent> provision_log;
  std::vector<std::pair<std::string, bool>> attestation_log;
  std::vector<std::string> policy_audit_findings;  // empty == sound
  std::uint64_t nonce_reuse_count = 0;
  std::uint64_t dropped_frames = 0;
  std::uint64_t dropped_bytes = 0;

  // Aggregator-side pre-division sums per completed iteration (verification
  // hook; this is data the aggregator legitimately holds in the clear).
  std::vector<GradVector> iteration_aggregates;

  // Owner-to-service interaction counts, for the one-shot-enrollment check.
  std::map<std::string, std::uint64_t> owner_interactions;

  std::shared_ptr<BlobStore> store;  // inspectable after the run

  // The exact wire sizes the cost estimators should be fed for this job.
  std::uint64_t mask_wire_bytes = 0;
  std::uint64_t update_wire_bytes = 0;

  std::string trace_text() const {
    std::string out;
    for (const auto& rec : trace) {
      out += rec.to_line();
      out += '\n';
    }
    return out;
  }
};

// Drives the whole workflow: owner enrollment and uploads, enclave
// attestation and provisioning, offline mask pregeneration, then the
// event-driven training iterations with fault injection and recovery.
class Job {
 public:
  explicit Job(JobConfig cfg, std::shared_ptr<BlobStore> store = nullptr)
      : cfg_(std::move(cfg)),
        store_(store ? std::move(store) : std::make_shared<MemoryBlobStore>()),
        root_rng_(cfg_.seed),
        net_(queue_, cfg_.costs.net, cfg_.taint_tracking, metrics_, &taint_log_) {}

  RunResult run() {
    cfg_.validate();
    setup();
    kick_iteration(0, 0, 0);
    queue_.run();
    return collect();
  }

 private:
  // ------------------------------------------------------------------ setup

  void setup() {
    task_ = make_toy_task(cfg_.seed, cfg_.n_training, cfg_.task);
    if (cfg_.mode == JobMode::Tree) plan_ = build_tree_plan(cfg_.n_training, cfg_.children_c);

    const auto train_m = training_code_measurement();
    const auto agg_m = aggregator_code_measurement();
    const auto adm_m = admin_code_measurement();

    // Session keys for every channel pair in use; release rules are endorsed
    // by whoever approves the target role's measurement.
    std::vector<std::pair<std::string, std::string>> channels;
    channels.emplace_back(kAdminId, kAggregatorId);
    for (std::uint32_t i = 0; i < cfg_.n_training; ++i) {
      channels.emplace_back(training_id(i), kAggregatorId);
      if (cfg_.mode != JobMode::Tree) channels.emplace_back(training_id(i), kAdminId);
    }
    if (cfg_.mode == JobMode::Tree) {
      std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
      for (const auto& round : plan_->rounds)
        for (const auto& e : round)
          if (e.leader != TreePlan::kAggregator)
            pairs.emplace(std::min(e.sender, e.leader), std::max(e.sender, e.leader));
      for (const auto& [a, b] : pairs) channels.emplace_back(training_id(a), training_id(b));
    }

    auto role_of = [&](const std::string& id) -> Role {
      if (id == kAggregatorId) return Role::aggregator();
      if (id == kAdminId) return Role::admin();
      return Role::training(static_cast<std::uint32_t>(
          std::stoul(id.substr(std::string("training-").size()))));
    };
    auto measurement_of = [&](const Role& role) -> CodeMeasurement {
      switch (role.kind) {
        case Role::Kind::Training: return train_m;
        case Role::Kind::Aggregator: return agg_m;
        case Role::Kind::Admin: return adm_m;
      }
      return train_m;
    };
    auto approvers_of = [&](const Role& role) -> std::vector<std::string> {
      switch (role.kind) {
        case Role::Kind::Training:
          return {"data-owner-" + std::to_string(role.index), "model-owner"};
        case Role::Kind::Aggregator: return {"model-owner"};
        case Role::Kind::Admin: {
          std::vector<std::string> all;
          for (std::uint32_t i = 0; i < cfg_.n_training; ++i)
            all.push_back("data-owner-" + std::to_string(i));
          all.push_back("model-owner");
          return all;
        }
      }
      return {};
    };

    // Session rules: one per (secret, endpoint role).
    std::map<std::string, std::vector<PolicyRule>> rules_by_owner;
    SecureRng session_rng = root_rng_.derive("session-keys");
    for (const auto& [a, b] : channels) {
      const std::string secret = session_secret_id(a, b);
      const Role ra = role_of(a);
      const Role rb = role_of(b);
      cas_.deposit_key(keygen(secret,
                              OwnerTag::session_key(ra.kind == Role::Kind::Training ? ra.index : 0,
                                                    rb.kind == Role::Kind::Training ? rb.index : 0),
                              session_rng));
      for (const Role& target : {ra, rb}) {
        PolicyRule rule{secret, target, measurement_of(target), approvers_of(target)};
        for (const auto& owner : rule.approvers) rules_by_owner[owner].push_back(rule);
      }
    }

    // Data-key and model-key rules.
    for (std::uint32_t i = 0; i < cfg_.n_training; ++i) {
      PolicyRule rule{"data-key-" + std::to_string(i), Role::training(i), train_m,
                      {"data-owner-" + std::to_string(i), "model-owner"}};
      for (const auto& owner : rule.approvers) rules_by_owner[owner].push_back(rule);
    }
    {
      PolicyRule to_training{"model-key", Role::any_training(), train_m, {"model-owner"}};
      PolicyRule to_aggregator{"model-key", Role::aggregator(), agg_m, {"model-owner"}};
      rules_by_owner["model-owner"].push_back(to_training);
      rules_by_owner["model-owner"].push_back(to_aggregator);
    }

    // Workflow step one: every owner enrolls exactly once, depositing its
    // keys and the rules it endorses.
    std::vector<SymmetricKey> data_keys;
    for (std::uint32_t i = 0; i < cfg_.n_training; ++i) {
      SecureRng owner_rng = root_rng_.derive("data-owner-" + std::to_string(i));
      const std::string owner = "data-owner-" + std::to_string(i);
      SymmetricKey key = keygen("data-key-" + std::to_string(i), OwnerTag::data_owner(i),
                                owner_rng);
      data_keys.push_back(key);
      cas_.enroll_owner(owner, {key}, rules_by_owner[owner]);
    }
    {
      SecureRng owner_rng = root_rng_.derive("model-owner");
      model_key_ = keygen("model-key", OwnerTag::model_owner(), owner_rng);
      cas_.enroll_owner("model-owner", {model_key_}, rules_by_owner["model-owner"]);
    }

    // Workflow step two: encrypted uploads. Shards under the data keys, the
    // initial model under the model key.
    for (std::uint32_t i = 0; i < cfg_.n_training; ++i) {
      SecureRng upload_rng = root_rng_.derive("upload-data-" + std::to_string(i));
      const auto blob = encrypt(data_keys[i], serialize_shard(task_->shards[i], i), upload_rng);
      nonces_.record(data_keys[i].key_id, blob.nonce);
      store_->put(BlobKey::data(i), blob);
    }
    {
      SecureRng upload_rng = root_rng_.derive("upload-model");
      const auto weights = init_weights(cfg_.model, cfg_.domain);
      const auto blob = encrypt(model_key_, serialize(weights), upload_rng);
      nonces_.record(model_key_.key_id, blob.nonce);
      store_->put(BlobKey::model({0, 0}), blob);
    }

    wire_runtime();
    build_actors(/*full=*/true);
    compute_wire_sizes();
  }

  void wire_runtime() {
    rt_.cfg = &cfg_;
    rt_.store = store_.get();
    rt_.cas = &cas_;
    rt_.queue = &queue_;
    rt_.net = &net_;
    rt_.metrics = &metrics_;
    rt_.taint_log = &taint_log_;
    rt_.nonces = &nonces_;
    rt_.job_seed = cfg_.seed;
    rt_.plan = plan_ ? &*plan_ : nullptr;
    rt_.fault_knobs = [this](const std::string& id, std::uint32_t iter, std::uint32_t attempt) {
      FaultKnobs knobs;
      if (attempt != 0) return knobs;  // faults hit the first attempt only
      for (const auto& f : cfg_.fault_plan) {
        if (f.target != id || f.iteration != iter) continue;
        if (f.action == FaultEvent::Action::Delay) knobs.delay += f.delay_ticks;
        if (f.action == FaultEvent::Action::InjectUnmasked) knobs.inject_unmasked = true;
      }
      return knobs;
    };
    rt_.iteration_complete = [this](std::uint32_t iter, Tick finish, ModelVersion produced) {
      on_iteration_complete(iter, finish, produced);
    };
    rt_.iteration_abort = [this](std::uint32_t iter, const std::string& reason) {
      on_iteration_abort(iter, reason);
    };
    rt_.aggregate_captured = [this](std::uint32_t iter, const GradVector& sum,
                                    const std::vector<std::uint32_t>& participants) {
      // Iterations complete strictly in order and capture once each.
      if (aggregates_.size() == iter) aggregates_.push_back(sum);
      if (participants_.size() == iter) participants_.push_back(participants);
    };
  }

  // Builds (or rebuilds) enclave actors. `full` rebuilds everything; a
  // partial rebuild replaces only the actors in `targets`. Every new actor
  // registers with CAS, attests, and pulls its secrets before serving.
  void build_actors(bool full, const std::set<std::string>& targets = {}) {
    auto fresh = [&](const std::string& id) -> std::unique_ptr<EnclaveActor> {
      if (id == kAggregatorId) return std::make_unique<AggregatorEnclave>(rt_);
      if (id == kAdminId) {
        SecureRng pregen_rng = root_rng_.derive("admin-pregen");
        MaskPool pool;
        if (cfg_.mode != JobMode::Tree) {
          // Offline mask generation: encrypted mask blobs land in storage,
          // keys in the attestation service. Deterministic per seed, so a
          // rebuilt admin reproduces byte-identical blobs (idempotent puts).
          cas_.register_enclave(kAdminId, Role::admin(), admin_code_measurement());
          if (!cas_.attest(kAdminId))
            throw PolicyError("admin enclave failed attestation before pregeneration");
          pool = pregenerate(cfg_.mask_pool, cfg_.n_training, cfg_.model.param_shape(),
                             cfg_.domain, pregen_rng, *store_, cas_, kAdminId,
                             training_code_measurement());
        }
        return std::make_unique<AdminEnclave>(rt_, std::move(pool));
      }
      const auto index = static_cast<std::uint32_t>(
          std::stoul(id.substr(std::string("training-").size())));
      return std::make_unique<TrainingEnclave>(index, rt_);
    };

    std::vector<std::string> ids;
    for (std::uint32_t i = 0; i < cfg_.n_training; ++i) ids.push_back(training_id(i));
    ids.push_back(kAggregatorId);
    ids.push_back(kAdminId);

    for (const auto& id : ids) {
      if (!full && !targets.count(id)) continue;
      actors_[id] = fresh(id);
      if (!actors_[id]->attest_and_provision())
        throw PolicyError("enclave '" + id + "' failed attestation");
      net_.register_actor(id, [this, id](const std::string& from, const MessageFrame& frame,
                                         Tick at) { actors_.at(id)->on_frame(from, frame, at); });
    }
  }

  // The exact wire sizes of one mask blob and one update frame, measured
  // from the real artifacts so cost estimates can match the simulator.
  void compute_wire_sizes() {
    if (cfg_.mode != JobMode::Tree && store_->contains(BlobKey::mask(0, 0)))
      mask_wire_ = serialize_blob(store_->get(BlobKey::mask(0, 0))).size();
    Body probe;
    probe.vec = serialize(GradVector::zeros(cfg_.domain.domain, cfg_.model.param_shape(),
                                            static_cast<std::uint8_t>(cfg_.domain.fixed.frac_bits)));
    if (cfg_.taint_tracking) {
      // A standard masked update carries singleton member sets.
      probe.label.kind = TaintLabel::Kind::Masked;
      probe.label.grads = {0};
      probe.label.masks = {0};
    }
    const auto packed = body_wire::pack(FrameType::Update, probe, cfg_.taint_tracking);
    EncryptedBlob blob_probe;
    blob_probe.key_id = session_secret_id(training_id(0), kAggregatorId);
    blob_probe.ciphertext.resize(packed.size());
    MessageFrame f;
    f.type = FrameType::Update;
    f.payload = serialize_blob(blob_probe);
    update_wire_ = f.wire_size(cfg_.taint_tracking);
  }

  // ------------------------------------------------------------- iterations

  void kick_iteration(std::uint32_t iter, std::uint32_t attempt, Tick at) {
    attempts_[iter] = attempt;
    starts_[iter] = at;
    if (attempt == 0) total_attempts_[iter] = 1;

    bool has_crash = false;
    if (attempt == 0) {
      for (const auto& f : cfg_.fault_plan) {
        if (f.iteration != iter || f.action != FaultEvent::Action::Crash) continue;
        has_crash = true;
        net_.mark_crashed(f.target);
      }
    }
    if (has_crash) {
      queue_.schedule(at + watchdog_timeout(), [this, iter, attempt] {
        on_watchdog(iter, attempt);
      });
    }

    // Deterministic begin order: training enclaves by index, then the
    // aggregator, then the admin.
    for (std::uint32_t i = 0; i < cfg_.n_training; ++i) {
      const std::string id = training_id(i);
      if (net_.is_crashed(id)) continue;
      queue_.schedule(at, [this, id, iter, attempt] {
        actors_.at(id)->begin_iteration(iter, attempt, queue_.now());
      });
    }
    for (const auto& id : {std::string(kAggregatorId), std::string(kAdminId)}) {
      if (net_.is_crashed(id)) continue;
      queue_.schedule(at, [this, id, iter, attempt] {
        actors_.at(id)->begin_iteration(iter, attempt, queue_.now());
      });
    }
  }

  Tick watchdog_timeout() const {
    CostParams probe = cfg_.costs;
    probe.mask_bytes = mask_wire_;
    probe.update_bytes = update_wire_;
    Tick bound = estimate_mask(probe, cfg_.n_training) +
                 estimate_tree(probe, cfg_.n_training, std::max(2u, cfg_.children_c));
    bound += cfg_.effective_straggler_timeout();
    for (const auto& f : cfg_.fault_plan) bound += f.delay_ticks;
    return 4 * bound + 64;
  }

  void on_iteration_complete(std::uint32_t iter, Tick finish, ModelVersion) {
    completed_.insert(iter);
    IterationOutcome outcome;
    outcome.iteration = iter;
    outcome.attempts = total_attempts_[iter];
    outcome.start = starts_[iter];
    outcome.finish = finish;
    if (iter < participants_.size()) outcome.participants = participants_[iter];
    outcomes_.push_back(outcome);

    if (iter + 1 < cfg_.total_iterations()) {
      attempts_[iter + 1] = 0;
      starts_[iter + 1] = finish;
      total_attempts_[iter + 1] = 1;
      // Crash faults for the next iteration take effect before its
      // model-ready frames go out, so deliveries to the victim drop.
      bool has_crash = false;
      for (const auto& f : cfg_.fault_plan) {
        if (f.iteration != iter + 1 || f.action != FaultEvent::Action::Crash) continue;
        has_crash = true;
        net_.mark_crashed(f.target);
      }
      if (has_crash) {
        queue_.schedule(finish + watchdog_timeout(), [this, next = iter + 1] {
          on_watchdog(next, 0);
        });
      }
    } else {
      final_tick_ = finish;
    }
  }

  void on_iteration_abort(std::uint32_t iter, const std::string& reason) {
    aborts_.emplace_back(iter, reason);
    queue_.schedule(queue_.now(), [this, iter, attempt = attempts_[iter]] {
      recover(iter, attempt);
    });
  }

  void on_watchdog(std::uint32_t iter, std::uint32_t attempt) {
    if (completed_.count(iter) || attempts_[iter] != attempt) return;  // stale
    recover(iter, attempt);
  }

  // Crash recovery. Replacing the aggregator or admin restarts the whole
  // cluster from the latest checkpoint; a training-enclave replacement
  // restarts just the interrupted iteration. Either way the iteration is
  // re-run in full; stale frames from the dead attempt carry the old attempt
  // number and are ignored.
  void recover(std::uint32_t iter, std::uint32_t attempt) {
    if (completed_.count(iter)) return;
    if (attempt + 1 >= kMaxAttempts)
      throw AggregationIncompleteError("iteration " + std::to_string(iter) +
                                       " cannot make progress after " +
                                       std::to_string(kMaxAttempts) + " attempts");
    const bool full_restart =
        net_.is_crashed(kAggregatorId) || net_.is_crashed(kAdminId);
    std::set<std::string> dead;
    for (std::uint32_t i = 0; i < cfg_.n_training; ++i)
      if (net_.is_crashed(training_id(i))) dead.insert(training_id(i));
    if (net_.is_crashed(kAggregatorId)) dead.insert(kAggregatorId);
    if (net_.is_crashed(kAdminId)) dead.insert(kAdminId);

    net_.clear_crashed();
    build_actors(full_restart, dead);

    total_attempts_[iter] += 1;
    kick_iteration(iter, attempt + 1, queue_.now());
  }

  // ---------------------------------------------------------------- results

  RunResult collect() {
    RunResult result;
    const auto [key, blob] = store_->latest_model();
    result.final_version = key.version;
    result.final_model_blob = serialize_blob(blob);
    result.final_model_payload = decrypt(model_key_, blob);
    result.final_weights = deserialize(result.final_model_payload);
    result.eval_accuracy =
        cfg_.model.kind == ModelKind::LinearRegression
            ? 0.0
            : eval_accuracy(cfg_.model, cfg_.domain.decode(result.final_weights), task_->eval);
    result.total_ticks = final_tick_;
    result.iterations_run = static_cast<std::uint32_t>(completed_.size());
    result.iterations = outcomes_;
    result.metrics = metrics_.records();
    result.metrics_csv = metrics_to_csv(result.metrics);
    result.trace = net_.trace();
    result.taint_log = taint_log_;
    result.provision_log = cas_.provision_log();
    result.attestation_log = cas_.attestation_log();
    result.policy_audit_findings = cas_.audit_grants();
    result.nonce_reuse_count = nonces_.violations();
    result.dropped_frames = net_.dropped_frames();
    result.dropped_bytes = net_.dropped_bytes();
    result.iteration_aggregates = aggregates_;
    for (std::uint32_t i = 0; i < cfg_.n_training; ++i) {
      const std::string owner = "data-owner-" + std::to_string(i);
      result.owner_interactions[owner] = cas_.owner_interactions(owner);
    }
    result.owner_interactions["model-owner"] = cas_.owner_interactions("model-owner");
    result.store = store_;
    result.mask_wire_bytes = mask_wire_;
    result.update_wire_bytes = update_wire_;
    return result;
  }

  static constexpr std::uint32_t kMaxAttempts = 8;

  JobConfig cfg_;
  std::shared_ptr<BlobStore> store_;
  Cas cas_;
  EventQueue queue_;
  SecureRng root_rng_;
  MetricsSink metrics_;
  std::vector<TaintEvent> taint_log_;
  Net net_;  // binds metrics_ and taint_log_, so they come first
  NonceAudit nonces_;
  Runtime rt_;

  std::optional<ToyTask> task_;
  std::optional<TreePlan> plan_;
  SymmetricKey model_key_;
  std::map<std::string, std::unique_ptr<EnclaveActor>> actors_;

  std::map<std::uint32_t, std::uint32_t> attempts_;
  std::map<std::uint32_t, std::uint32_t> total_attempts_;
  std::map<std::uint32_t, Tick> starts_;
  std::set<std::uint32_t> completed_;
  std::vector<IterationOutcome> outcomes_;
  std::vector<GradVector> aggregates_;
  std::vector<std::vector<std::uint32_t>> participants_;
  std::vector<std::pair<std::uint32_t, std::string>> aborts_;
  Tick final_tick_ = 0;
  std::uint64_t mask_wire_ = 0;
  std::uint64_t update_wire_ = 0;
};

inline RunResult run_job(const JobConfig& cfg, std::shared_ptr<BlobStore> store = nullptr) {
  return Job(cfg, std::move(store)).run();
}

}  // namespace veil
