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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "veil/aggregation.hpp"
#include "veil/cas.hpp"
#include "veil/config.hpp"
#include "veil/crypto.hpp"
#include "veil/masking.hpp"
#include "veil/messages.hpp"
#include "veil/models.hpp"
#include "veil/simnet.hpp"
#include "veil/storage.hpp"
#include "veil/taint.hpp"

namespace veil {

// ---------------------------------------------------------------------------
// Code identities. The placeholder list names what the code loads dynamically
// after attestation; hyperparameter *values* never enter the measurement.
// ---------------------------------------------------------------------------

inline CodeMeasurement training_code_measurement() {
  return CodeMeasurement::of(code_identity(
      Role::Kind::Training, "data-handler/1.0",
      {"DATA_KEY", "MODEL_KEY", "MASK_KEY", "BATCH_SIZE"}));
}

inline CodeMeasurement aggregator_code_measurement() {
  return CodeMeasurement::of(code_identity(
      Role::Kind::Aggregator, "model-handler/1.0",
      {"MODEL_KEY", "LEARNING_RATE_SCHEDULE", "CLIP_NORM"}));
}

inline CodeMeasurement admin_code_measurement() {
  return CodeMeasurement::of(code_identity(Role::Kind::Admin, "admin/1.0", {}));
}

inline std::string session_secret_id(std::string a, std::string b) {
  if (b < a) std::swap(a, b);
  return "session-key-" + a + ":" + b;
}

inline std::string training_id(std::uint32_t i) { return "training-" + std::to_string(i); }
inline constexpr const char* kAggregatorId = "aggregator";
inline constexpr const char* kAdminId = "admin";

// ---------------------------------------------------------------------------
// Inner message bodies. Every body starts with (iteration, attempt) so stale
// frames from an aborted attempt are recognizably stale. Bodies travel inside
// an EncryptedBlob under the channel pair's session key.
// ---------------------------------------------------------------------------

enum class ControlCode : std::uint8_t { CutK = 0, IterationClosed = 1 };

struct Body {
  std::uint32_t iteration = 0;
  // MaskGrant
  std::uint32_t set = 0;
  std::uint32_t index = 0;
  bool residual = false;
  std::string secret_id;
  std::vector<std::uint32_t> covers;
  // Update / Partial
  std::uint32_t round = 0;
  std::vector<std::uint8_t> vec;
  TaintLabel label = TaintLabel::control();  // carried in test framing only
  // ModelReady
  ModelVersion version{};
  // Control
  ControlCode code = ControlCode::CutK;
  std::uint32_t k = 0;
  std::vector<std::uint32_t> participants;
};

namespace body_wire {

inline void put_u32_list(std::vector<std::uint8_t>& out, const std::set<std::uint32_t>& xs) {
  wire::put_u32(out, static_cast<std::uint32_t>(xs.size()));
  for (auto x : xs) wire::put_u32(out, x);
}

inline std::set<std::uint32_t> take_u32_set(wire::Reader& r) {
  std::set<std::uint32_t> out;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) out.insert(r.u32());
  return out;
}

// `with_label` mirrors the frame framing: test builds carry the full label
// with value-bearing bodies, release framing drops it everywhere.
inline std::vector<std::uint8_t> pack(FrameType type, const Body& b, bool with_label) {
  std::vector<std::uint8_t> out;
  wire::put_u32(out, b.iteration);
  switch (type) {
    case FrameType::MaskReq:
      break;
    case FrameType::MaskGrant: {
      wire::put_u32(out, b.set);
      wire::put_u32(out, b.index);
      out.push_back(b.residual ? 1 : 0);
      wire::put_u16(out, static_cast<std::uint16_t>(b.secret_id.size()));
      out.insert(out.end(), b.secret_id.begin(), b.secret_id.end());
      wire::put_u32(out, static_cast<std::uint32_t>(b.covers.size()));
      for (auto c : b.covers) wire::put_u32(out, c);
      break;
    }
    case FrameType::Update:
    case FrameType::Partial: {
      if (type == FrameType::Partial) wire::put_u32(out, b.round);
      if (with_label) {
        out.push_back(static_cast<std::uint8_t>(b.label.kind));
        put_u32_list(out, b.label.grads);
        put_u32_list(out, b.label.masks);
      }
      out.insert(out.end(), b.vec.begin(), b.vec.end());
      break;
    }
    case FrameType::ModelReady:
      wire::put_u32(out, b.version.epoch);
      wire::put_u32(out, b.version.batch);
      break;
    case FrameType::Control: {
      out.push_back(static_cast<std::uint8_t>(b.code));
      wire::put_u32(out, b.k);
      wire::put_u32(out, static_cast<std::uint32_t>(b.participants.size()));
      for (auto p : b.participants) wire::put_u32(out, p);
      break;
    }
  }
  return out;
}

inline Body unpack(FrameType type, std::span<const std::uint8_t> bytes, bool with_label) {
  wire::Reader r(bytes);
  Body b;
  b.iteration = r.u32();
  switch (type) {
    case FrameType::MaskReq:
      break;
    case FrameType::MaskGrant: {
      b.set = r.u32();
      b.index = r.u32();
      b.residual = r.u8() != 0;
      const std::uint16_t len = r.u16();
      auto s = r.take(len);
      b.secret_id.assign(s.begin(), s.end());
      const std::uint32_t n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) b.covers.push_back(r.u32());
      break;
    }
    case FrameType::Update:
    case FrameType::Partial: {
      if (type == FrameType::Partial) b.round = r.u32();
      if (with_label) {
        b.label.kind = static_cast<TaintLabel::Kind>(r.u8());
        b.label.grads = take_u32_set(r);
        b.label.masks = take_u32_set(r);
      }
      auto v = r.take(r.remaining());
      b.vec.assign(v.begin(), v.end());
      break;
    }
    case FrameType::ModelReady:
      b.version.epoch = r.u32();
      b.version.batch = r.u32();
      break;
    case FrameType::Control: {
      b.code = static_cast<ControlCode>(r.u8());
      b.k = r.u32();
      const std::uint32_t n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) b.participants.push_back(r.u32());
      break;
    }
  }
  return b;
}

}  // namespace body_wire

// Per-iteration fault knobs the orchestrator resolved for one actor.
struct FaultKnobs {
  Tick delay = 0;
  bool inject_unmasked = false;
};

// Everything an enclave actor may touch, plus hooks back into the
// orchestrator. Actors never share state with each other except through the
// storage service and these explicitly passed services.
struct Runtime {
  const JobConfig* cfg = nullptr;
  BlobStore* store = nullptr;
  Cas* cas = nullptr;
  EventQueue* queue = nullptr;
  Net* net = nullptr;
  MetricsSink* metrics = nullptr;
  std::vector<TaintEvent>* taint_log = nullptr;
  NonceAudit* nonces = nullptr;
  std::uint64_t job_seed = 0;
  const TreePlan* plan = nullptr;  // tree mode only

  std::function<FaultKnobs(const std::string&, std::uint32_t, std::uint32_t)> fault_knobs;
  std::function<void(std::uint32_t iter, Tick finish, ModelVersion produced)> iteration_complete;
  std::function<void(std::uint32_t iter, const std::string& reason)> iteration_abort;
  std::function<void(std::uint32_t iter, const GradVector& sum,
                     const std::vector<std::uint32_t>& participants)>
      aggregate_captured;

  SecureRng iteration_rng(const std::string& actor, std::uint32_t iter) const {
    // Attempt-independent on purpose: a restarted iteration must replay the
    // exact same bytes as the original attempt.
    return SecureRng(job_seed).derive("iter/" + actor + "/" + std::to_string(iter));
  }
};

// Spec-visible actor state: identity, progress, held secrets, counters.
struct EnclaveState {
  Role role;
  std::uint32_t epoch = 0;
  std::uint32_t batch = 0;
  std::set<std::string> held_secrets;
  std::uint64_t frames_in = 0;
  std::uint64_t frames_out = 0;
};

// ---------------------------------------------------------------------------
// Actor base: local clock, phase accounting, session-sealed messaging.
// Each actor is single-threaded and processes one event at a time.
// ---------------------------------------------------------------------------

class EnclaveActor {
 public:
  EnclaveActor(std::string id, Role role, Runtime& rt) : id_(std::move(id)), rt_(rt) {
    state_.role = role;
  }
  virtual ~EnclaveActor() = default;

  const std::string& id() const { return id_; }
  const EnclaveState& state() const { return state_; }

  virtual void begin_iteration(std::uint32_t iter, std::uint32_t attempt, Tick at) = 0;
  virtual void on_frame(const std::string& from, const MessageFrame& frame, Tick at) = 0;

  // Registers with CAS, runs attestation, and pulls every secret this role
  // is entitled to. Returns attestation success.
  bool attest_and_provision() {
    rt_.cas->register_enclave(id_, state_.role, measurement());
    if (!rt_.cas->attest(id_)) return false;
    for (const auto& secret : initial_secrets()) fetch_secret(secret);
    return true;
  }

 protected:
  virtual CodeMeasurement measurement() const = 0;
  virtual std::vector<std::string> initial_secrets() const = 0;

  SymmetricKey fetch_secret(const std::string& secret_id) {
    SymmetricKey key = rt_.cas->provision(id_, secret_id);
    keys_[secret_id] = key;
    state_.held_secrets.insert(secret_id);
    return key;
  }

  const SymmetricKey& key_for(const std::string& secret_id) const {
    auto it = keys_.find(secret_id);
    if (it == keys_.end()) throw NotFoundError(id_ + " holds no secret '" + secret_id + "'");
    return it->second;
  }

  // -- local clock ---------------------------------------------------------
  // local_ is this actor's busy-until time. sync_to() accounts idle waiting
  // into a phase (the paper's breakdown counts waiting toward the phase that
  // is blocked); charge() accounts active work.

  void clock_jump(Tick at) { local_ = std::max(local_, at); }

  void sync_to(Tick at, Phase phase) {
    if (at > local_) {
      rt_.metrics->bucket(iter_, id_, phase).duration += at - local_;
      local_ = at;
    }
  }

  void charge(Phase phase, Tick d) {
    rt_.metrics->bucket(iter_, id_, phase).duration += d;
    local_ += d;
  }

  Tick local_time() const { return local_; }

  // -- sealed messaging ----------------------------------------------------

  std::vector<std::uint8_t> seal(const std::string& peer, FrameType type, const Body& body) {
    const auto& key = key_for(session_secret_id(id_, peer));
    const auto blob =
        encrypt(key, body_wire::pack(type, body, rt_.net->label_framing()), iter_rng_);
    rt_.nonces->record(key.key_id, blob.nonce);
    return serialize_blob(blob);
  }

  Body open(const std::string& peer, const MessageFrame& frame) {
    const auto& key = key_for(session_secret_id(id_, peer));
    return body_wire::unpack(frame.type, decrypt(key, parse_blob(frame.payload)),
                             rt_.net->label_framing());
  }

  // Builds, seals and sends one frame; returns its wire size.
  std::uint64_t send_frame(const std::string& to, FrameType type, const Body& body,
                           const TaintLabel& label) {
    MessageFrame frame;
    frame.type = type;
    if (rt_.net->label_framing()) frame.label = label.kind;
    frame.payload = seal(to, type, body);
    const std::uint64_t size = frame.wire_size(rt_.net->label_framing());
    ++state_.frames_out;
    rt_.net->send(id_, to, std::move(frame), label, local_, iter_);
    return size;
  }

  std::string id_;
  Runtime& rt_;
  EnclaveState state_;
  std::map<std::string, SymmetricKey> keys_;
  SecureRng iter_rng_{std::uint64_t{0}};
  std::uint32_t iter_ = 0;
  std::uint32_t attempt_ = 0;
  Tick local_ = 0;
};

namespace detail {

inline ModelVersion version_for_iteration(std::uint32_t iter, std::uint32_t batches_per_epoch) {
  return ModelVersion{iter / batches_per_epoch, iter % batches_per_epoch};
}

inline std::uint32_t iteration_for_version(ModelVersion v, std::uint32_t batches_per_epoch) {
  return v.epoch * batches_per_epoch + v.batch;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training enclave: runs the shared data-handling code. Downloads and
// decrypts the model and its own shard, computes gradients, and either masks
// them (mask modes) or feeds them into the reduction tree (tree mode). It is
// stateless across iterations: everything it needs is refetched from storage
// and the attestation service.
// ---------------------------------------------------------------------------

class TrainingEnclave : public EnclaveActor {
 public:
  TrainingEnclave(std::uint32_t index, Runtime& rt)
      : EnclaveActor(training_id(index), Role::training(index), rt), index_(index) {}

  void begin_iteration(std::uint32_t iter, std::uint32_t attempt, Tick at) override {
    if (started_ && iter <= iter_ && attempt <= attempt_) return;  // stale trigger
    started_ = true;
    iter_ = iter;
    attempt_ = attempt;
    run_iteration(at);
  }

 private:
  void run_iteration(Tick at) {
    iter_rng_ = rt_.iteration_rng(id_, iter_);
    arrivals_.clear();
    rounds_folded_ = 0;
    sent_ = false;
    closed_ = false;
    const auto knobs = rt_.fault_knobs(id_, iter_, attempt_);

    clock_jump(at);
    const auto version = detail::version_for_iteration(iter_, rt_.cfg->batches_per_epoch);
    state_.epoch = version.epoch;
    state_.batch = version.batch;

    // Training phase bundles the model/data fetch and decrypt with the
    // gradient computation, matching how the breakdown is reported.
    charge(Phase::Training, rt_.cfg->costs.t_train + knobs.delay);

    EncryptedBlob model_blob;
    try {
      model_blob = rt_.store->get(BlobKey::model(version));
    } catch (const NotFoundError&) {
      // Checkpoint not visible yet; back off and retry the whole fetch.
      constexpr Tick kBackoff = 16;
      rt_.queue->schedule(local_ + kBackoff, [this, iter = iter_, attempt = attempt_] {
        if (iter == iter_ && attempt == attempt_ && !sent_) run_iteration(rt_.queue->now());
      });
      return;
    }
    const auto weights = deserialize(decrypt(key_for("model-key"), model_blob));
    const auto shard_blob = rt_.store->get(BlobKey::data(index_));
    const Batch shard =
        parse_shard(decrypt(key_for("data-key-" + std::to_string(index_)), shard_blob));
    const Batch batch = shard_batch(shard, version.batch, rt_.cfg->model.hyperparams.batch_size,
                                    rt_.cfg->batches_per_epoch);

    ModelState st{weights, version.epoch, version.batch};
    update_ = compute_gradients(rt_.cfg->model, st, batch, rt_.cfg->domain);
    update_label_ = TaintLabel::raw_gradient(index_);

    if (rt_.cfg->mode == JobMode::Tree) {
      try_advance();
      return;
    }

    if (knobs.inject_unmasked) {
      // Test fixture: skip masking entirely. The aggregator must trip on it.
      Body body;
      body.iteration = iter_;
      body.vec = serialize(*update_);
      body.label = update_label_;
      charge(Phase::Aggregation, rt_.cfg->costs.enc.at(frame_size_for(kAggregatorId, FrameType::Update, body)));
      send_frame(kAggregatorId, FrameType::Update, body, update_label_);
      sent_ = true;
      return;
    }

    Body req;
    req.iteration = iter_;
    send_frame(kAdminId, FrameType::MaskReq, req, TaintLabel::control());
  }

 public:
  void on_frame(const std::string& from, const MessageFrame& frame, Tick at) override {
    ++state_.frames_in;
    switch (frame.type) {
      case FrameType::MaskGrant: {
        const Body body = open(from, frame);
        if (body.iteration != iter_ || sent_ || closed_) return;
        apply_mask_and_send(body, at);
        return;
      }
      case FrameType::Partial: {
        const Body body = open(from, frame);
        if (body.iteration != iter_) return;
        sync_to(at, Phase::Recursive);
        arrivals_[body.round].emplace(
            sender_index(from),
            Arrival{deserialize(body.vec), body.label,
                    frame.wire_size(rt_.net->label_framing())});
        try_advance();
        return;
      }
      case FrameType::ModelReady: {
        const Body body = open(from, frame);
        const std::uint32_t next =
            detail::iteration_for_version(body.version, rt_.cfg->batches_per_epoch);
        if (next < rt_.cfg->total_iterations()) begin_iteration(next, 0, at);
        return;
      }
      case FrameType::Control: {
        const Body body = open(from, frame);
        if (body.code == ControlCode::IterationClosed && body.iteration == iter_) {
          closed_ = true;  // excluded from this iteration's cut; wait for the next model
        }
        return;
      }
      default:
        return;
    }
  }

 private:
  struct Arrival {
    GradVector vec;
    TaintLabel label;
    std::uint64_t wire = 0;
  };

  // Exact wire size of a frame before sealing it (the AEAD preserves
  // length); enc/net costs are charged on this.
  std::uint64_t frame_size_for(const std::string& peer, FrameType type, const Body& body) const {
    const auto packed = body_wire::pack(type, body, rt_.net->label_framing());
    EncryptedBlob probe;
    probe.key_id = session_secret_id(id_, peer);
    probe.ciphertext.resize(packed.size());
    MessageFrame f;
    f.type = type;
    f.payload = serialize_blob(probe);
    return f.wire_size(rt_.net->label_framing());
  }

  void apply_mask_and_send(const Body& grant, Tick at) {
    sync_to(at, Phase::Masking);

    // Fetch the mask blob from storage and unwrap it; the grant only tells
    // us where it lives and which key to ask the attestation service for.
    const SymmetricKey mask_key = fetch_secret(grant.secret_id);
    const auto blob = rt_.store->get(BlobKey::mask(grant.set, grant.index));
    const std::uint64_t blob_wire = serialize_blob(blob).size();
    charge(Phase::Masking, rt_.cfg->costs.net.transit(blob_wire) +
                               rt_.cfg->costs.dec.at(blob_wire) + rt_.cfg->costs.t_mask);
    const GradVector mask = deserialize(decrypt(mask_key, blob));
    const TaintLabel mask_label = TaintLabel::mask_material(
        std::set<std::uint32_t>(grant.covers.begin(), grant.covers.end()));

    const GradVector masked = add(*update_, mask);
    const TaintLabel masked_label = combine_add(update_label_, mask_label);

    Body body;
    body.iteration = iter_;
    body.vec = serialize(masked);
    body.label = masked_label;
    charge(Phase::Aggregation, rt_.cfg->costs.enc.at(frame_size_for(kAggregatorId, FrameType::Update, body)));
    send_frame(kAggregatorId, FrameType::Update, body, masked_label);
    sent_ = true;
  }

  // -- tree mode -----------------------------------------------------------

  static std::uint32_t sender_index(const std::string& id) {
    return static_cast<std::uint32_t>(std::stoul(id.substr(std::string("training-").size())));
  }

  // Round (0-based) in which this node sends, and its receiver.
  std::pair<std::uint32_t, std::uint32_t> send_slot() const {
    const TreePlan& plan = *rt_.plan;
    for (std::uint32_t r = 0; r < plan.rounds.size(); ++r)
      for (const auto& e : plan.rounds[r])
        if (e.sender == index_) return {r, e.leader};
    throw StructuralError(id_ + " has no send slot in the plan");
  }

  std::vector<std::uint32_t> children_in_round(std::uint32_t r) const {
    std::vector<std::uint32_t> out;
    for (const auto& e : rt_.plan->rounds[r])
      if (e.leader == index_) out.push_back(e.sender);
    return out;
  }

  // Barrier-synchronized advance: fold completed rounds in order, then send
  // once every round before our slot is folded.
  void try_advance() {
    const auto [send_round, receiver] = send_slot();
    const bool labels_on = rt_.net->label_framing();
    while (rounds_folded_ < send_round) {
      const auto children = children_in_round(rounds_folded_);
      const auto& got = arrivals_[rounds_folded_];
      bool complete = true;
      for (auto c : children)
        if (!got.count(c)) complete = false;
      if (!complete) return;
      if (!children.empty()) {
        std::uint64_t partial_wire = 0;
        for (auto c : children) {
          const Arrival& arrival = got.at(c);
          update_ = add(*update_, arrival.vec);
          if (labels_on) update_label_ = combine_add(update_label_, arrival.label);
          partial_wire = arrival.wire;
        }
        charge(Phase::Recursive, rt_.cfg->costs.dec.at(partial_wire) +
                                     rt_.cfg->costs.agg.at(children.size() + 1));
      }
      ++rounds_folded_;
    }
    if (sent_) return;
    sent_ = true;

    Body body;
    body.iteration = iter_;
    body.vec = serialize(*update_);
    if (receiver == TreePlan::kAggregator) {
      if (labels_on) {
        std::set<std::uint32_t> all;
        for (std::uint32_t i = 0; i < rt_.cfg->n_training; ++i) all.insert(i);
        update_label_ = promote_if_full(update_label_, all, 0);
      }
      body.label = update_label_;
      charge(Phase::Recursive, rt_.cfg->costs.enc.at(frame_size_for(kAggregatorId, FrameType::Update, body)));
      send_frame(kAggregatorId, FrameType::Update, body, update_label_);
    } else {
      body.round = send_round;
      body.label = update_label_;
      charge(Phase::Recursive, rt_.cfg->costs.enc.at(frame_size_for(training_id(receiver), FrameType::Partial, body)));
      send_frame(training_id(receiver), FrameType::Partial, body, update_label_);
    }
  }

  std::uint32_t index_;
  bool started_ = false;
  std::optional<GradVector> update_;
  TaintLabel update_label_ = TaintLabel::control();
  std::map<std::uint32_t, std::map<std::uint32_t, Arrival>> arrivals_;
  std::uint32_t rounds_folded_ = 0;
  bool sent_ = false;
  bool closed_ = false;

  CodeMeasurement measurement() const override { return training_code_measurement(); }

  std::vector<std::string> initial_secrets() const override {
    std::vector<std::string> out{"data-key-" + std::to_string(index_), "model-key",
                                 session_secret_id(id_, kAggregatorId)};
    if (rt_.cfg->mode != JobMode::Tree) out.push_back(session_secret_id(id_, kAdminId));
    if (rt_.cfg->mode == JobMode::Tree) {
      std::set<std::string> peers;
      for (const auto& round : rt_.plan->rounds)
        for (const auto& e : round) {
          if (e.leader == TreePlan::kAggregator) continue;
          if (e.sender == index_) peers.insert(training_id(e.leader));
          if (e.leader == index_) peers.insert(training_id(e.sender));
        }
      for (const auto& p : peers) out.push_back(session_secret_id(id_, p));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Aggregator enclave: the model owner's private model-handling code. It only
// ever sees masked updates or full aggregates; a raw per-owner value tripping
// the hook below is a protocol violation, not a recoverable error.
// ---------------------------------------------------------------------------

class AggregatorEnclave : public EnclaveActor {
 public:
  explicit AggregatorEnclave(Runtime& rt) : EnclaveActor(kAggregatorId, Role::aggregator(), rt) {}

  void begin_iteration(std::uint32_t iter, std::uint32_t attempt, Tick at) override {
    iter_ = iter;
    attempt_ = attempt;
    iter_rng_ = rt_.iteration_rng(id_, iter);
    received_.clear();
    done_ = false;
    clock_jump(at);

    const auto version = detail::version_for_iteration(iter, rt_.cfg->batches_per_epoch);
    state_.epoch = version.epoch;
    state_.batch = version.batch;

    // The fresh model is fetched and decrypted while the training enclaves
    // are still computing, so it stays off the critical path.
    const auto blob = rt_.store->get(BlobKey::model(version));
    weights_ = deserialize(decrypt(key_for("model-key"), blob));

    if (rt_.cfg->mode == JobMode::Tree) {
      expected_ = {0};  // the final leader hands off the full sum
      expected_count_ = 1;
      participants_.clear();
      for (std::uint32_t i = 0; i < rt_.cfg->n_training; ++i) participants_.push_back(i);
      cut_known_ = true;
    } else if (rt_.cfg->mode == JobMode::Mask) {
      expected_ = {};
      participants_.clear();
      for (std::uint32_t i = 0; i < rt_.cfg->n_training; ++i) {
        expected_.insert(i);
        participants_.push_back(i);
      }
      expected_count_ = rt_.cfg->n_training;
      cut_known_ = true;
    } else {
      expected_.clear();
      participants_.clear();
      expected_count_ = 0;
      cut_known_ = false;  // the admin announces the cut
    }
  }

  void on_frame(const std::string& from, const MessageFrame& frame, Tick at) override {
    ++state_.frames_in;
    switch (frame.type) {
      case FrameType::Update: {
        // Privacy hook: raw values must never reach the model handler.
        if (frame.label == TaintLabel::Kind::RawGradient ||
            frame.label == TaintLabel::Kind::RawData)
          throw PrivacyViolationError("aggregator received a " +
                                      std::string(frame.label == TaintLabel::Kind::RawData
                                                      ? "raw-data"
                                                      : "raw-gradient") +
                                      " message from " + from);
        const Body body = open(from, frame);
        if (body.iteration != iter_ || done_) return;
        sync_to(at, Phase::Aggregation);
        const std::uint32_t sender = static_cast<std::uint32_t>(
            std::stoul(from.substr(std::string("training-").size())));
        last_update_wire_ = frame.wire_size(rt_.net->label_framing());
        received_.emplace(sender, Received{deserialize(body.vec), body.label});
        maybe_finish();
        return;
      }
      case FrameType::Control: {
        const Body body = open(from, frame);
        if (body.iteration != iter_) return;
        if (body.code == ControlCode::CutK) {
          participants_.assign(body.participants.begin(), body.participants.end());
          expected_.clear();
          for (auto p : body.participants) expected_.insert(p);
          expected_count_ = body.k;
          cut_known_ = true;
          maybe_finish();
        }
        return;
      }
      default:
        return;
    }
  }

 private:
  struct Received {
    GradVector vec;
    TaintLabel label;
  };

  void maybe_finish() {
    if (done_ || !cut_known_ || received_.size() < expected_count_) return;
    for (auto p : expected_)
      if (!received_.count(p)) return;
    done_ = true;

    // One decryption stays on the critical path (the rest overlap with
    // collection), then the fold and the model update.
    charge(Phase::Aggregation, rt_.cfg->costs.dec.at(last_update_wire_) +
                                   rt_.cfg->costs.agg.at(expected_count_) +
                                   rt_.cfg->costs.t_apply);

    // Deterministic fold order: ascending sender index (received_ is an
    // ordered map).
    std::optional<GradVector> acc;
    std::optional<TaintLabel> label;
    for (const auto& [sender, entry] : received_) {
      if (!acc) {
        acc = entry.vec;
        label = entry.label;
      } else {
        acc = add(*acc, entry.vec);
        if (rt_.net->label_framing()) label = combine_add(*label, entry.label);
      }
    }

    if (rt_.net->label_framing()) {
      // The folded value must be the complete aggregate: every participant's
      // gradient in, and the masks telescoping to zero.
      std::set<std::uint32_t> expected_grads(participants_.begin(), participants_.end());
      const std::uint32_t mask_cover =
          label->masks.empty() ? 0 : rt_.cfg->n_training;
      *label = promote_if_full(*label, expected_grads, mask_cover);
      if (label->kind != TaintLabel::Kind::FullAggregate)
        throw AggregationIncompleteError(
            "aggregate folded to '" + label->to_string() + "' instead of a full aggregate");
    }

    rt_.aggregate_captured(iter_, *acc, participants_);

    // The mean is over contributors, not over inbound messages: in tree mode
    // one hand-off message carries all n participants' gradients.
    ModelState st{weights_, state_.epoch, state_.batch};
    UpdateRule rule{rt_.cfg->model.hyperparams.lr_schedule, rt_.cfg->model.hyperparams.clip_norm,
                    rt_.cfg->batches_per_epoch};
    const ModelState next = apply_update(
        st, *acc, rule, static_cast<std::uint32_t>(participants_.size()), rt_.cfg->domain);

    const ModelVersion produced{next.epoch, next.batch_index};
    const auto model_key = key_for("model-key");
    const auto blob = encrypt(model_key, serialize(next.weights), iter_rng_);
    rt_.nonces->record(model_key.key_id, blob.nonce);
    rt_.store->put(BlobKey::model(produced), blob);

    rt_.iteration_complete(iter_, local_, produced);

    // Everyone learns the new checkpoint; stragglers rejoin here.
    Body ready;
    ready.iteration = iter_ + 1;
    ready.version = produced;
    for (std::uint32_t i = 0; i < rt_.cfg->n_training; ++i)
      send_frame(training_id(i), FrameType::ModelReady, ready, TaintLabel::control());
    send_frame(kAdminId, FrameType::ModelReady, ready, TaintLabel::control());

    if (iter_ + 1 < rt_.cfg->total_iterations() && !rt_.net->is_crashed(id_))
      begin_iteration(iter_ + 1, 0, local_);
  }

  CodeMeasurement measurement() const override { return aggregator_code_measurement(); }

  std::vector<std::string> initial_secrets() const override {
    std::vector<std::string> out{"model-key", session_secret_id(id_, kAdminId)};
    for (std::uint32_t i = 0; i < rt_.cfg->n_training; ++i)
      out.push_back(session_secret_id(id_, training_id(i)));
    return out;
  }

  GradVector weights_ = GradVector::zeros(Domain::Fixed64, {1});
  std::map<std::uint32_t, Received> received_;
  std::set<std::uint32_t> expected_;
  std::vector<std::uint32_t> participants_;
  std::uint32_t expected_count_ = 0;
  bool cut_known_ = false;
  bool done_ = false;
  std::uint64_t last_update_wire_ = 0;
};

// ---------------------------------------------------------------------------
// Admin enclave: mask generator and scheduler. During training it never
// transmits mask material itself; it redirects requesters to storage and
// points them at the attestation service for the key.
// ---------------------------------------------------------------------------

class AdminEnclave : public EnclaveActor {
 public:
  AdminEnclave(Runtime& rt, MaskPool pool)
      : EnclaveActor(kAdminId, Role::admin(), rt), pool_(std::move(pool)) {}

  void begin_iteration(std::uint32_t iter, std::uint32_t attempt, Tick at) override {
    iter_ = iter;
    attempt_ = attempt;
    iter_rng_ = rt_.iteration_rng(id_, iter);
    arrivals_.clear();
    cut_done_ = false;
    clock_jump(at);
    if (rt_.cfg->mode == JobMode::MaskSsp) {
      const Tick deadline = at + rt_.cfg->effective_straggler_timeout();
      rt_.queue->schedule(deadline, [this, iter, attempt] {
        if (iter_ == iter && attempt_ == attempt && !cut_done_) do_cut();
      });
    }
    pool_.fast_forward(iter);
  }

  void on_frame(const std::string& from, const MessageFrame& frame, Tick at) override {
    ++state_.frames_in;
    switch (frame.type) {
      case FrameType::MaskReq: {
        const Body body = open(from, frame);
        const std::uint32_t requester = static_cast<std::uint32_t>(
            std::stoul(from.substr(std::string("training-").size())));
        if (body.iteration != iter_ ||
            (rt_.cfg->mode == JobMode::MaskSsp && cut_done_)) {
          Body closed;
          closed.iteration = body.iteration;
          closed.code = ControlCode::IterationClosed;
          send_frame(from, FrameType::Control, closed, TaintLabel::control());
          return;
        }
        sync_to(at, Phase::Masking);
        if (rt_.cfg->mode == JobMode::Mask) {
          const MaskGrant grant = serve_mask_request(pool_, iter_, requester);
          send_grant(from, grant);
        } else {
          if (std::find(arrivals_.begin(), arrivals_.end(), requester) == arrivals_.end())
            arrivals_.push_back(requester);
          if (arrivals_.size() == rt_.cfg->n_training) do_cut();
        }
        return;
      }
      case FrameType::ModelReady: {
        const Body body = open(from, frame);
        const std::uint32_t next =
            detail::iteration_for_version(body.version, rt_.cfg->batches_per_epoch);
        if (next < rt_.cfg->total_iterations() && next > iter_) begin_iteration(next, 0, at);
        return;
      }
      default:
        return;
    }
  }

 private:
  void send_grant(const std::string& to, const MaskGrant& grant) {
    Body body;
    body.iteration = iter_;
    body.set = grant.blob.set;
    body.index = grant.blob.index;
    body.residual = grant.residual;
    body.secret_id = grant.secret_id;
    body.covers = grant.covers;
    send_frame(to, FrameType::MaskGrant, body, TaintLabel::control());
  }

  // SSP cut: everyone who asked before the deadline participates, in arrival
  // order; the last participant receives the residual so the masks still
  // telescope to zero over the reduced set.
  void do_cut() {
    cut_done_ = true;
    const std::uint32_t k = static_cast<std::uint32_t>(arrivals_.size());
    if (k < rt_.cfg->min_participants) {
      rt_.iteration_abort(iter_, "only " + std::to_string(k) + " of " +
                                     std::to_string(rt_.cfg->n_training) +
                                     " enclaves arrived before the cut");
      return;
    }
    const MaskSet& set = pool_.set_for_iteration(iter_);

    Body cut;
    cut.iteration = iter_;
    cut.code = ControlCode::CutK;
    cut.k = k;
    cut.participants = arrivals_;
    send_frame(kAggregatorId, FrameType::Control, cut, TaintLabel::control());

    for (std::uint32_t j = 0; j + 1 < k; ++j)
      send_grant(training_id(arrivals_[j]), serve_mask_request(pool_, iter_, arrivals_[j]));

    // Residual for the last arriver. The blob is uploaded encrypted and the
    // key deposited under a rule that releases it to that enclave only; the
    // derivation is iteration-seeded so a restarted attempt replays it.
    const std::uint32_t last = arrivals_.back();
    const GradVector residual = residual_mask(set, arrivals_);
    SymmetricKey key = keygen(residual_secret_id(set.set_index),
                              OwnerTag::mask_key(set.set_index, set.n), iter_rng_);
    rt_.cas->register_protocol_secret(
        id_, key,
        PolicyRule{key.key_id, Role::training(last), training_code_measurement(), {}});
    const auto blob = encrypt(key, serialize(residual), iter_rng_);
    rt_.nonces->record(key.key_id, blob.nonce);
    rt_.store->put(BlobKey::mask(set.set_index, set.n), blob);

    MaskGrant grant{BlobKey::mask(set.set_index, set.n), key.key_id, true,
                    residual_cover(set.n, arrivals_)};
    send_grant(training_id(last), grant);
  }

  CodeMeasurement measurement() const override { return admin_code_measurement(); }

  std::vector<std::string> initial_secrets() const override {
    std::vector<std::string> out{session_secret_id(id_, kAggregatorId)};
    if (rt_.cfg->mode != JobMode::Tree)
      for (std::uint32_t i = 0; i < rt_.cfg->n_training; ++i)
        out.push_back(session_secret_id(id_, training_id(i)));
    return out;
  }

  MaskPool pool_;
  std::vector<std::uint32_t> arrivals_;
  bool cut_done_ = false;
};

}  // namespace veil
