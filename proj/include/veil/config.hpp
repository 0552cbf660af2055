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

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "veil/costmodel.hpp"
#include "veil/errors.hpp"
#include "veil/models.hpp"
#include "veil/tensors.hpp"

namespace veil {

enum class JobMode : std::uint8_t { Mask, Tree, MaskSsp };

inline const char* job_mode_name(JobMode m) {
  switch (m) {
    case JobMode::Mask: return "mask";
    case JobMode::Tree: return "tree";
    case JobMode::MaskSsp: return "mask_ssp";
  }
  return "unknown";
}

// Scheduled disturbance of one actor. Crash removes the actor until the
// orchestrator builds a replacement; Delay stretches that iteration's
// training phase; InjectUnmasked is a test fixture that makes a training
// enclave skip masking, which the aggregator must catch.
struct FaultEvent {
  enum class Action : std::uint8_t { Crash, Delay, InjectUnmasked };

  std::string target;  // "training-<i>", "aggregator", "admin"
  std::uint32_t iteration = 0;
  Action action = Action::Crash;
  Tick delay_ticks = 0;
};

struct JobConfig {
  std::uint32_t n_training = 4;
  JobMode mode = JobMode::Mask;
  std::uint32_t children_c = 2;
  ModelSpec model;
  DomainConfig domain{};
  std::uint32_t epochs = 20;
  std::uint32_t batches_per_epoch = 10;
  std::uint64_t seed = 42;
  CostParams costs{};
  std::uint32_t mask_pool = 256;
  Tick straggler_timeout = 0;  // 0 -> 5 * t_train
  std::uint32_t min_participants = 1;
  std::vector<FaultEvent> fault_plan;
  ToyTaskParams task{};
  bool taint_tracking = true;

  std::uint32_t total_iterations() const { return epochs * batches_per_epoch; }

  Tick effective_straggler_timeout() const {
    return straggler_timeout ? straggler_timeout : 5 * costs.t_train;
  }

  // All the cross-field checks; throws ConfigError naming every bad field.
  void validate() const {
    std::vector<std::string> errors;
    auto bad = [&](const std::string& field, const std::string& why) {
      errors.push_back(field + ": " + why);
    };

    if (n_training < 1) bad("n_training", "must be at least 1");
    if ((mode == JobMode::Tree) && children_c < 2)
      bad("children_c", "tree mode needs fan-in of at least 2");
    try {
      model.validate();
    } catch (const ConfigError& e) {
      bad("model", e.what());
    }
    if (domain.domain == Domain::Fixed64) {
      try {
        domain.fixed.validate();
      } catch (const ConfigError& e) {
        bad("frac_bits/clamp_abs", e.what());
      }
      // Aggregate overflow is prevented by contract: the sum of N clamped
      // values (plus masked intermediates) must stay below 2^62.
      const double headroom = static_cast<double>(n_training) * domain.fixed.clamp_abs *
                              std::ldexp(1.0, domain.fixed.frac_bits);
      if (!(headroom < std::ldexp(1.0, 62)))
        bad("clamp_abs", "n_training * clamp_abs * 2^frac_bits must stay below 2^62");
    }
    if (epochs < 1) bad("epochs", "must be at least 1");
    if (batches_per_epoch < 1) bad("batches_per_epoch", "must be at least 1");
    if (task.samples == 0 || task.samples % std::max(1u, n_training) != 0)
      bad("task.samples", "must divide evenly across data owners");
    else if (static_cast<std::uint64_t>(model.hyperparams.batch_size) * batches_per_epoch >
             task.samples / n_training)
      bad("task.samples", "shards too small for batch_size * batches_per_epoch");
    if (task.features != model.layer_dims.front())
      bad("task.features", "must equal the model input dimension");
    if (task.eval_samples == 0) bad("task.eval_samples", "must be positive");
    if (mode != JobMode::Tree && mask_pool < 1) bad("mask_pool", "must be positive");
    if (min_participants < 1 || min_participants > n_training)
      bad("min_participants", "must be in [1, n_training]");
    for (const auto& f : fault_plan) {
      if (f.target != "aggregator" && f.target != "admin" &&
          f.target.rfind("training-", 0) != 0)
        bad("fault_plan", "unknown target '" + f.target + "'");
      if (f.iteration >= total_iterations())
        bad("fault_plan", "iteration " + std::to_string(f.iteration) + " out of range");
      if (f.action != FaultEvent::Action::Crash && f.target != "aggregator" &&
          f.target.rfind("training-", 0) != 0)
        bad("fault_plan", "delay/inject targets must be training enclaves");
    }

    if (!errors.empty()) {
      std::string msg = "invalid config:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }
};

// ---------------------------------------------------------------------------
// JSON (de)serialization of the job config file.
// ---------------------------------------------------------------------------

namespace cfg_json {

using nlohmann::json;

inline json to_json(const AffineCost& c) {
  return json{{"base", c.base}, {"bytes_per_tick", c.bytes_per_tick}};
}

inline AffineCost affine_from_json(const json& j) {
  return AffineCost{j.at("base").get<Tick>(), j.at("bytes_per_tick").get<std::uint64_t>()};
}

}  // namespace cfg_json

inline nlohmann::json to_json(const JobConfig& cfg) {
  nlohmann::json j;
  j["n_training"] = cfg.n_training;
  j["mode"] = job_mode_name(cfg.mode);
  j["children_c"] = cfg.children_c;
  j["model"] = {
      {"kind", model_kind_name(cfg.model.kind)},
      {"layer_dims", cfg.model.layer_dims},
      {"init_seed", cfg.model.init_seed},
      {"batch_size", cfg.model.hyperparams.batch_size},
      {"lr",
       {{"base", cfg.model.hyperparams.lr_schedule.base_lr},
        {"decay_factor", cfg.model.hyperparams.lr_schedule.decay_factor},
        {"decay_every", cfg.model.hyperparams.lr_schedule.decay_every}}},
      {"clip_norm", cfg.model.hyperparams.clip_norm},
  };
  j["domain"] = domain_name(cfg.domain.domain);
  j["frac_bits"] = cfg.domain.fixed.frac_bits;
  j["clamp_abs"] = cfg.domain.fixed.clamp_abs;
  j["epochs"] = cfg.epochs;
  j["batches_per_epoch"] = cfg.batches_per_epoch;
  j["seed"] = cfg.seed;
  j["latency"] = {{"per_message", cfg.costs.net.per_message_latency},
                  {"bandwidth", cfg.costs.net.bandwidth}};
  j["costs"] = {{"t_train", cfg.costs.t_train},
                {"t_mask", cfg.costs.t_mask},
                {"t_apply", cfg.costs.t_apply},
                {"enc", cfg_json::to_json(cfg.costs.enc)},
                {"dec", cfg_json::to_json(cfg.costs.dec)},
                {"agg", {{"base", cfg.costs.agg.base}, {"per_update", cfg.costs.agg.per_update}}}};
  j["mask_pool"] = cfg.mask_pool;
  j["straggler_timeout"] = cfg.straggler_timeout;
  j["min_participants"] = cfg.min_participants;
  j["task"] = {{"samples", cfg.task.samples},
               {"features", cfg.task.features},
               {"margin", cfg.task.margin},
               {"eval_samples", cfg.task.eval_samples}};
  j["taint_tracking"] = cfg.taint_tracking;
  nlohmann::json faults = nlohmann::json::array();
  for (const auto& f : cfg.fault_plan) {
    nlohmann::json jf{{"target", f.target}, {"iteration", f.iteration}};
    switch (f.action) {
      case FaultEvent::Action::Crash: jf["action"] = "crash"; break;
      case FaultEvent::Action::Delay:
        jf["action"] = "delay";
        jf["ticks"] = f.delay_ticks;
        break;
      case FaultEvent::Action::InjectUnmasked: jf["action"] = "inject_unmasked"; break;
    }
    faults.push_back(jf);
  }
  j["fault_plan"] = faults;
  return j;
}

inline JobConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "n_training", "mode",          "children_c",        "model",
      "domain",     "frac_bits",     "clamp_abs",         "epochs",
      "batches_per_epoch", "seed",   "latency",           "costs",
      "mask_pool",  "straggler_timeout", "min_participants", "task",
      "taint_tracking", "fault_plan"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");

  JobConfig cfg;
  try {
    cfg.n_training = j.at("n_training").get<std::uint32_t>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "mask") cfg.mode = JobMode::Mask;
    else if (mode == "tree") cfg.mode = JobMode::Tree;
    else if (mode == "mask_ssp") cfg.mode = JobMode::MaskSsp;
    else throw ConfigError("mode: expected mask|tree|mask_ssp, got '" + mode + "'");
    cfg.children_c = j.value("children_c", 2u);

    const auto& jm = j.at("model");
    const std::string kind = jm.at("kind").get<std::string>();
    if (kind == "linear_regression") cfg.model.kind = ModelKind::LinearRegression;
    else if (kind == "logistic_regression") cfg.model.kind = ModelKind::LogisticRegression;
    else if (kind == "mlp") cfg.model.kind = ModelKind::Mlp;
    else throw ConfigError("model.kind: unknown kind '" + kind + "'");
    cfg.model.layer_dims = jm.at("layer_dims").get<std::vector<std::uint32_t>>();
    cfg.model.init_seed = jm.value("init_seed", std::uint64_t{1});
    cfg.model.hyperparams.batch_size = jm.value("batch_size", 50u);
    if (jm.contains("lr")) {
      const auto& jl = jm.at("lr");
      cfg.model.hyperparams.lr_schedule = {jl.value("base", 0.5),
                                           jl.value("decay_factor", 1.0),
                                           jl.value("decay_every", 100u)};
    }
    cfg.model.hyperparams.clip_norm = jm.value("clip_norm", 10.0);

    const std::string domain = j.at("domain").get<std::string>();
    if (domain == "fixed64") cfg.domain.domain = Domain::Fixed64;
    else if (domain == "float32") cfg.domain.domain = Domain::Float32;
    else throw ConfigError("domain: expected fixed64|float32, got '" + domain + "'");
    cfg.domain.fixed.frac_bits = j.value("frac_bits", 24);
    cfg.domain.fixed.clamp_abs = j.value("clamp_abs", 64.0);

    cfg.epochs = j.at("epochs").get<std::uint32_t>();
    cfg.batches_per_epoch = j.at("batches_per_epoch").get<std::uint32_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();

    if (j.contains("latency")) {
      const auto& jl = j.at("latency");
      cfg.costs.net = {jl.value("per_message", Tick{1}), jl.value("bandwidth", std::uint64_t{0})};
    }
    if (j.contains("costs")) {
      const auto& jc = j.at("costs");
      cfg.costs.t_train = jc.value("t_train", Tick{10});
      cfg.costs.t_mask = jc.value("t_mask", Tick{1});
      cfg.costs.t_apply = jc.value("t_apply", Tick{2});
      if (jc.contains("enc")) cfg.costs.enc = cfg_json::affine_from_json(jc.at("enc"));
      if (jc.contains("dec")) cfg.costs.dec = cfg_json::affine_from_json(jc.at("dec"));
      if (jc.contains("agg")) {
        cfg.costs.agg = {jc.at("agg").value("base", Tick{0}),
                         jc.at("agg").value("per_update", Tick{8})};
      }
    }
    cfg.mask_pool = j.value("mask_pool", 256u);
    cfg.straggler_timeout = j.value("straggler_timeout", Tick{0});
    cfg.min_participants = j.value("min_participants", 1u);
    if (j.contains("task")) {
      const auto& jt = j.at("task");
      cfg.task.samples = jt.value("samples", 2000u);
      cfg.task.features = jt.value("features", 20u);
      cfg.task.margin = jt.value("margin", 0.5);
      cfg.task.eval_samples = jt.value("eval_samples", 500u);
    }
    cfg.taint_tracking = j.value("taint_tracking", true);
    for (const auto& jf : j.value("fault_plan", nlohmann::json::array())) {
      FaultEvent f;
      f.target = jf.at("target").get<std::string>();
      f.iteration = jf.at("iteration").get<std::uint32_t>();
      const std::string action = jf.at("action").get<std::string>();
      if (action == "crash") f.action = FaultEvent::Action::Crash;
      else if (action == "delay") {
        f.action = FaultEvent::Action::Delay;
        f.delay_ticks = jf.at("ticks").get<Tick>();
      } else if (action == "inject_unmasked") {
        f.action = FaultEvent::Action::InjectUnmasked;
      } else {
        throw ConfigError("fault_plan.action: unknown action '" + action + "'");
      }
      cfg.fault_plan.push_back(f);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return cfg;
}

inline JobConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

// Shipped starting points for the three modes.
inline JobConfig config_template(const std::string& name) {
  JobConfig cfg;
  cfg.model.kind = ModelKind::LogisticRegression;
  cfg.model.layer_dims = {20, 1};
  cfg.model.init_seed = 3;
  cfg.model.hyperparams = {50, {0.5, 1.0, 100}, 10.0};
  if (name == "mask") {
    cfg.mode = JobMode::Mask;
  } else if (name == "tree") {
    cfg.mode = JobMode::Tree;
    cfg.children_c = 2;
  } else if (name == "ssp") {
    cfg.mode = JobMode::MaskSsp;
    cfg.min_participants = 2;
    cfg.fault_plan.push_back({"training-1", 3, FaultEvent::Action::Delay, 45});
  } else {
    throw ConfigError("unknown template '" + name + "' (expected mask|tree|ssp)");
  }
  return cfg;
}

}  // namespace veil
