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

// End-to-end verification suites. Each suite checks one family of protocol
// guarantees against an independent oracle and reports pass/fail per check;
// the CLI exposes them under `verify --suite <name>` and the acceptance
// binary runs them all.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "veil/aggregation.hpp"
#include "veil/job.hpp"
#include "veil/masking.hpp"
#include "veil/oracle.hpp"

namespace veil::verify {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<Check> checks;
  double wall_seconds = 0.0;

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return !checks.empty();
  }
};

namespace detail {

inline void check(SuiteResult& result, const std::string& name, bool pass,
                  const std::string& detail = "") {
  result.checks.push_back({name, pass, detail});
}

// The reference job every end-to-end suite runs: N=4 logistic task, 200
// iterations, Fixed64 exchange domain.
inline JobConfig reference_config(JobMode mode) {
  JobConfig cfg;
  cfg.mode = mode;
  cfg.n_training = 4;
  cfg.children_c = 2;
  cfg.model.kind = ModelKind::LogisticRegression;
  cfg.model.layer_dims = {20, 1};
  cfg.model.init_seed = 3;
  cfg.model.hyperparams = {50, {0.5, 1.0, 100}, 10.0};
  cfg.domain = {Domain::Fixed64, {24, 64.0}};
  cfg.epochs = 20;
  cfg.batches_per_epoch = 10;
  cfg.seed = 42;
  cfg.task = {2000, 20, 0.5, 500};
  cfg.mask_pool = 200;
  return cfg;
}

inline std::string lanes_digest(const std::vector<std::uint64_t>& lanes) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(lanes.size() * 8);
  for (auto l : lanes)
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(l >> (8 * i)));
  return sha256_hex(bytes);
}

}  // namespace detail

// Mask sets cancel: exact zero in Fixed64 (big-integer oracle), bounded
// residue in Float32.
inline SuiteResult suite_zero_sum() {
  SuiteResult result;
  result.suite = "zero-sum";
  SecureRng rng(2024);
  const std::vector<std::uint64_t> shape{257};
  for (std::uint32_t n : {1u, 2u, 3u, 4u, 8u, 16u, 32u, 64u}) {
    const DomainConfig fixed{Domain::Fixed64, {24, 64.0}};
    const auto set = generate_mask_set(0, n, shape, fixed, rng);
    const auto folded = oracle::bigint_fold_mod64(set.masks);
    bool exact = true;
    for (auto l : folded) exact = exact && l == 0;
    detail::check(result, "fixed64 N=" + std::to_string(n) + " folds to zero", exact);

    const DomainConfig fl{Domain::Float32, {}};
    const auto fset = generate_mask_set(0, n, shape, fl, rng);
    const auto fsum = flat_aggregate(fset.masks);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < fsum.size(); ++i)
      max_abs = std::max(max_abs, std::fabs(static_cast<double>(fsum.lane_f32(i))));
    const double bound = n * std::ldexp(1.0, -20);
    detail::check(result, "float32 N=" + std::to_string(n) + " |sum| <= N*2^-20",
                  max_abs <= bound,
                  "max " + std::to_string(max_abs) + " bound " + std::to_string(bound));
  }
  return result;
}

// Masked flat aggregation equals the unmasked sum: bit-exact in Fixed64,
// within 1e-4 relative (vector norm) in Float32.
inline SuiteResult suite_barrier() {
  SuiteResult result;
  result.suite = "barrier";
  const std::uint32_t n = 8;
  const std::vector<std::uint64_t> shape{128};
  bool fixed_ok = true, float_ok = true;
  double worst_rel = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SecureRng rng(9000 + seed);
    {
      const DomainConfig dc{Domain::Fixed64, {24, 64.0}};
      const auto set = generate_mask_set(0, n, shape, dc, rng);
      std::vector<GradVector> grads, masked;
      for (std::uint32_t i = 0; i < n; ++i) {
        std::vector<double> g(shape[0]);
        for (auto& v : g) v = rng.next_double(-8.0, 8.0);
        grads.push_back(dc.encode(g, shape));
        masked.push_back(add(grads.back(), set.masks[i]));
      }
      if (!(flat_aggregate(masked) == flat_aggregate(grads)) ||
          flat_aggregate(masked).lanes() != oracle::bigint_fold_mod64(grads))
        fixed_ok = false;
    }
    {
      const DomainConfig dc{Domain::Float32, {}};
      const auto set = generate_mask_set(0, n, shape, dc, rng);
      std::vector<GradVector> grads, masked;
      for (std::uint32_t i = 0; i < n; ++i) {
        std::vector<double> g(shape[0]);
        for (auto& v : g) v = rng.next_double(-1.0, 1.0);
        grads.push_back(dc.encode(g, shape));
        masked.push_back(add(grads.back(), set.masks[i]));
      }
      const auto with = flat_aggregate(masked);
      const auto without = flat_aggregate(grads);
      double norm = 0.0, err = 0.0;
      for (std::size_t i = 0; i < with.size(); ++i) {
        norm = std::max(norm, std::fabs(static_cast<double>(without.lane_f32(i))));
        err = std::max(err,
                       std::fabs(static_cast<double>(with.lane_f32(i)) - without.lane_f32(i)));
      }
      const double rel = err / std::max(1.0, norm);
      worst_rel = std::max(worst_rel, rel);
      if (rel > 1e-4) float_ok = false;
    }
  }
  detail::check(result, "fixed64 masked sum == unmasked sum, 50 seeds", fixed_ok);
  detail::check(result, "float32 masked sum within 1e-4 relative, 50 seeds", float_ok,
                "worst relative error " + std::to_string(worst_rel));
  return result;
}

// Tree aggregation equals the flat fold bit-exactly and satisfies the
// structural laws for every (n, c) in [1,64] x {2,3,4,8}.
inline SuiteResult suite_tree() {
  SuiteResult result;
  result.suite = "tree";
  SecureRng rng(777);
  bool equal_ok = true, rounds_ok = true, send_once_ok = true, one_message_ok = true;
  std::string fail_at;

  class Counting : public TreeChannel {
   public:
    bool deliver(std::uint32_t sender, std::uint32_t leader, const GradVector&) override {
      sends[sender]++;
      if (leader == TreePlan::kAggregator) ++to_aggregator;
      return true;
    }
    std::map<std::uint32_t, int> sends;
    int to_aggregator = 0;
  };

  for (std::uint32_t c : {2u, 3u, 4u, 8u}) {
    for (std::uint32_t n = 1; n <= 64; ++n) {
      const auto plan = build_tree_plan(n, c);
      std::vector<GradVector> updates;
      for (std::uint32_t i = 0; i < n; ++i) {
        std::vector<std::uint64_t> lanes(32);
        for (auto& l : lanes) l = rng.next_u64();
        updates.emplace_back(Domain::Fixed64, std::move(lanes),
                             std::vector<std::uint64_t>{32}, std::uint8_t{24});
      }
      Counting channel;
      const auto tree = run_tree_aggregation(plan, updates, channel);
      if (!(tree == flat_aggregate(updates))) {
        equal_ok = false;
        fail_at = "n=" + std::to_string(n) + " c=" + std::to_string(c);
      }
      if (plan.rounds.size() != ceil_log(n, c) + 1) rounds_ok = false;
      if (channel.sends.size() != n) send_once_ok = false;
      for (const auto& [_, count] : channel.sends)
        if (count != 1) send_once_ok = false;
      if (channel.to_aggregator != 1) one_message_ok = false;
    }
  }
  detail::check(result, "tree == flat bit-exactly for all (n,c)", equal_ok, fail_at);
  detail::check(result, "rounds == ceil(log_c n) + 1", rounds_ok);
  detail::check(result, "every participant sends exactly once", send_once_ok);
  detail::check(result, "aggregator receives exactly one message", one_message_ok);
  return result;
}

// Mask mode, tree mode, and the reference SGD trajectory produce
// byte-identical final models and reach 95% accuracy.
inline SuiteResult suite_learning() {
  SuiteResult result;
  result.suite = "learning";
  const auto mask_cfg = detail::reference_config(JobMode::Mask);
  const auto tree_cfg = detail::reference_config(JobMode::Tree);
  const auto mask_run = run_job(mask_cfg);
  const auto tree_run = run_job(tree_cfg);

  const auto task = make_toy_task(mask_cfg.seed, mask_cfg.n_training, mask_cfg.task);
  const auto ref = oracle::run_reference_sgd(mask_cfg.model, task, mask_cfg.domain,
                                             mask_cfg.total_iterations(),
                                             mask_cfg.batches_per_epoch);

  detail::check(result, "mask mode == reference SGD bitwise",
                mask_run.final_weights.lanes() == ref.weight_lanes,
                detail::lanes_digest(mask_run.final_weights.lanes()) + " vs " +
                    detail::lanes_digest(ref.weight_lanes));
  detail::check(result, "tree mode == reference SGD bitwise",
                tree_run.final_weights.lanes() == ref.weight_lanes);
  detail::check(result, "mask and tree final model payloads byte-identical",
                mask_run.final_model_payload == tree_run.final_model_payload);
  detail::check(result, "eval accuracy >= 95%", mask_run.eval_accuracy >= 0.95,
                "accuracy " + std::to_string(mask_run.eval_accuracy));
  const double ref_acc = eval_accuracy(mask_cfg.model, ref.weights, task.eval);
  detail::check(result, "accuracy equals the reference run's",
                std::fabs(mask_run.eval_accuracy - ref_acc) == 0.0,
                "job " + std::to_string(mask_run.eval_accuracy) + " reference " +
                    std::to_string(ref_acc));
  return result;
}

// The information barrier over a whole job, plus the tampered-enclave
// fixture.
inline SuiteResult suite_privacy() {
  SuiteResult result;
  result.suite = "privacy";
  auto cfg = detail::reference_config(JobMode::Mask);
  cfg.epochs = 2;  // 20 iterations of barrier evidence is plenty
  cfg.mask_pool = 20;
  const auto run = run_job(cfg);

  bool barrier_ok = true;
  for (const auto& ev : run.taint_log) {
    if (ev.to == "aggregator" &&
        !(ev.label.kind == TaintLabel::Kind::Masked ||
          ev.label.kind == TaintLabel::Kind::FullAggregate ||
          ev.label.kind == TaintLabel::Kind::Control))
      barrier_ok = false;
    if (ev.to == "admin" && ev.label.kind != TaintLabel::Kind::Control) barrier_ok = false;
  }
  detail::check(result, "no raw gradient/data delivered to aggregator or admin", barrier_ok);

  bool keys_ok = true;
  for (const auto& ev : run.provision_log)
    if (ev.granted && ev.secret_id.rfind("data-key-", 0) == 0 &&
        ev.role.kind != Role::Kind::Training)
      keys_ok = false;
  detail::check(result, "zero data-key releases to aggregator/admin", keys_ok);
  detail::check(result, "provisioning log replays soundly against policy",
                run.policy_audit_findings.empty());

  const std::string canary(kDataCanary, kDataCanary + 16);
  const std::string vec_magic(kVectorMagic, kVectorMagic + 4);
  bool scan_ok = true;
  for (const auto& bytes : run.store->dump_all_bytes()) {
    const std::string haystack(bytes.begin(), bytes.end());
    if (haystack.find(canary) != std::string::npos ||
        haystack.find(vec_magic) != std::string::npos)
      scan_ok = false;
  }
  for (const auto& rec : run.trace) {
    const std::string haystack(rec.wire.begin(), rec.wire.end());
    if (haystack.find(canary) != std::string::npos) scan_ok = false;
  }
  detail::check(result, "plaintext sentinel scan over storage and wire finds nothing", scan_ok);

  // Tampered training enclave: wrong measurement, zero secrets.
  {
    Cas cas;
    SecureRng rng(5);
    const auto good = training_code_measurement();
    std::vector<PolicyRule> rules;
    rules.push_back({"data-key-0", Role::training(0), good, {"data-owner-0"}});
    cas.enroll_owner("data-owner-0", {keygen("data-key-0", OwnerTag::data_owner(0), rng)},
                     rules);
    const auto tampered = CodeMeasurement::of(code_identity(
        Role::Kind::Training, "data-handler/1.0+exfiltrate",
        {"DATA_KEY", "MODEL_KEY", "MASK_KEY", "BATCH_SIZE"}));
    cas.register_enclave("training-0", Role::training(0), tampered);
    const bool attested = cas.attest("training-0");
    bool denied = false;
    try {
      cas.provision("training-0", "data-key-0");
    } catch (const PolicyError&) {
      denied = true;
    }
    detail::check(result, "tampered measurement fails attestation and gets zero secrets",
                  !attested && denied && cas.record("training-0").provisioned.empty());
  }

  // Negative fixture: an injected unmasked update must trip the hook.
  {
    auto bad = detail::reference_config(JobMode::Mask);
    bad.epochs = 1;
    bad.mask_pool = 10;
    bad.fault_plan.push_back({"training-0", 0, FaultEvent::Action::InjectUnmasked, 0});
    bool tripped = false;
    try {
      run_job(bad);
    } catch (const PrivacyViolationError&) {
      tripped = true;
    }
    detail::check(result, "planted unmasked update trips the violation hook", tripped);
  }
  return result;
}

// One delayed straggler out of four: K=3, residual applied, job completes,
// and the cut iteration's aggregate equals the oracle sum of the three
// participants' gradients.
inline SuiteResult suite_ssp() {
  SuiteResult result;
  result.suite = "ssp";
  auto cfg = detail::reference_config(JobMode::MaskSsp);
  cfg.epochs = 1;
  cfg.mask_pool = 10;
  cfg.fault_plan.push_back({"training-1", 3, FaultEvent::Action::Delay, 45});
  const auto run = run_job(cfg);

  detail::check(result, "job completes", run.iterations_run == cfg.total_iterations());
  const bool k3 = run.iterations.size() > 3 && run.iterations[3].participants.size() == 3;
  detail::check(result, "cut iteration has K=3",
                k3 && run.iterations[3].participants ==
                          std::vector<std::uint32_t>{0, 2, 3});

  const auto task = make_toy_task(cfg.seed, cfg.n_training, cfg.task);
  const auto ref = oracle::run_reference_sgd(
      cfg.model, task, cfg.domain, cfg.total_iterations(), cfg.batches_per_epoch,
      [&](std::uint32_t iter) {
        return iter < run.iterations.size() ? run.iterations[iter].participants
                                            : std::vector<std::uint32_t>{0, 1, 2, 3};
      });
  detail::check(result, "cut aggregate equals the participants' oracle sum exactly",
                run.iteration_aggregates.size() > 3 &&
                    run.iteration_aggregates[3].lanes() == ref.iteration_aggregates[3]);
  detail::check(result, "full trajectory matches the participant-aware oracle",
                run.final_weights.lanes() == ref.weight_lanes);
  return result;
}

// Crash a training enclave, then the aggregator; both runs must converge to
// the fault-free model with dense checkpoints.
inline SuiteResult suite_fault_tolerance() {
  SuiteResult result;
  result.suite = "fault-tolerance";
  auto base = detail::reference_config(JobMode::Mask);
  base.epochs = 1;
  base.mask_pool = 10;
  const auto clean = run_job(base);

  auto crash_training = base;
  crash_training.fault_plan.push_back({"training-1", 3, FaultEvent::Action::Crash, 0});
  const auto t_run = run_job(crash_training);
  detail::check(result, "training-enclave crash converges to the fault-free model",
                t_run.final_model_blob == clean.final_model_blob);

  auto crash_aggregator = base;
  crash_aggregator.fault_plan.push_back({"aggregator", 5, FaultEvent::Action::Crash, 0});
  const auto a_run = run_job(crash_aggregator);
  detail::check(result, "aggregator crash converges to the fault-free model",
                a_run.final_model_blob == clean.final_model_blob);

  auto dense = [&](const RunResult& r) {
    const auto keys = r.store->list(BlobKey::Kind::Model);
    if (keys.size() != base.total_iterations() + 1) return false;
    for (std::uint32_t iter = 0; iter <= base.total_iterations(); ++iter) {
      const ModelVersion expected{iter / base.batches_per_epoch, iter % base.batches_per_epoch};
      if (keys[iter].version != expected) return false;
    }
    return true;
  };
  detail::check(result, "checkpoint versions stay dense through restarts",
                dense(t_run) && dense(a_run));
  return result;
}

// Simulator/estimator agreement, tolerance zero, plus the recommendation
// crossover.
inline SuiteResult suite_cost_model() {
  SuiteResult result;
  result.suite = "cost-model";
  for (std::uint32_t n : {2u, 4u, 8u}) {
    auto cfg = detail::reference_config(JobMode::Mask);
    cfg.n_training = n;
    cfg.task.samples = 500 * n;
    cfg.epochs = 1;
    cfg.batches_per_epoch = 5;
    cfg.mask_pool = 5;
    cfg.costs.net = {5, 128};
    cfg.costs.enc = {3, 512};
    cfg.costs.dec = {2, 256};
    cfg.costs.agg = {1, 4};
    cfg.costs.t_train = 50;
    cfg.costs.t_mask = 7;
    cfg.costs.t_apply = 11;
    const auto run = run_job(cfg);

    CostParams params = cfg.costs;
    params.mask_bytes = run.mask_wire_bytes;
    params.update_bytes = run.update_wire_bytes;
    const Tick expected = estimate_mask(params, n);
    bool exact = !run.iterations.empty();
    for (const auto& outcome : run.iterations) exact = exact && outcome.span() == expected;
    detail::check(result, "N=" + std::to_string(n) + " iteration span == estimate, exactly",
                  exact, "estimate " + std::to_string(expected));
  }

  CostParams defaults;
  std::uint32_t crossover = 0;
  for (std::uint32_t n = 1; n <= 256 && crossover == 0; ++n)
    if (recommend_mode(defaults, n, 2) == BarrierMode::Tree) crossover = n;
  detail::check(result, "mask->tree recommendation crossover at some N <= 256", crossover != 0,
                "crossover at N=" + std::to_string(crossover));
  detail::check(result, "masking recommended at N=1 under defaults",
                recommend_mode(defaults, 1, 2) == BarrierMode::Mask);
  return result;
}

// Two runs of the same config and seed are byte-identical.
inline SuiteResult suite_determinism() {
  SuiteResult result;
  result.suite = "determinism";
  for (JobMode mode : {JobMode::Mask, JobMode::Tree, JobMode::MaskSsp}) {
    auto cfg = detail::reference_config(mode);
    cfg.epochs = 1;
    cfg.mask_pool = 10;
    const auto a = run_job(cfg);
    const auto b = run_job(cfg);
    const std::string name = job_mode_name(mode);
    detail::check(result, name + ": identical metrics CSV bytes", a.metrics_csv == b.metrics_csv);
    detail::check(result, name + ": identical final model blob",
                  a.final_model_blob == b.final_model_blob);
    detail::check(result, name + ": identical delivery trace", a.trace_text() == b.trace_text());
  }
  return result;
}

inline std::vector<std::string> suite_names() {
  return {"zero-sum", "barrier",         "tree",       "learning", "privacy",
          "ssp",      "fault-tolerance", "cost-model", "determinism"};
}

inline SuiteResult run_suite(const std::string& name) {
  const auto started = std::chrono::steady_clock::now();
  SuiteResult result;
  if (name == "zero-sum") result = suite_zero_sum();
  else if (name == "barrier") result = suite_barrier();
  else if (name == "tree") result = suite_tree();
  else if (name == "learning") result = suite_learning();
  else if (name == "privacy") result = suite_privacy();
  else if (name == "ssp") result = suite_ssp();
  else if (name == "fault-tolerance") result = suite_fault_tolerance();
  else if (name == "cost-model") result = suite_cost_model();
  else if (name == "determinism") result = suite_determinism();
  else throw ConfigError("unknown suite '" + name + "'");
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

inline std::vector<SuiteResult> run_all() {
  std::vector<SuiteResult> out;
  for (const auto& name : suite_names()) out.push_back(run_suite(name));
  return out;
}

}  // namespace veil::verify
