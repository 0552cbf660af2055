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

// Batch experiment runner and verification entry point. Data goes to stdout,
// diagnostics to stderr. Exit codes: 0 success, 2 invalid input (config,
// flags, unknown suite), 3 privacy-violation hook tripped, 1 anything else.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "veil/veil.hpp"
#include "veil/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kBadInput = 2;
constexpr int kPrivacyViolation = 3;

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw veil::IoError("cannot write " + path.string());
  f << content;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw veil::IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override) {
  veil::JobConfig cfg = veil::load_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  cfg.validate();

  const auto result = veil::run_job(cfg);

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path out(out_dir);
  write_file(out / "metrics.csv", result.metrics_csv);
  write_file(out / "final_model.blob", result.final_model_blob);

  std::ostringstream provision;
  for (const auto& ev : result.provision_log)
    provision << (ev.granted ? "grant " : "deny  ") << ev.enclave_id << ' ' << ev.secret_id
              << ' ' << ev.detail << '\n';
  write_file(out / "provision_log.txt", provision.str());

  std::ostringstream taint;
  for (const auto& ev : result.taint_log)
    taint << "it" << ev.iteration << ' ' << ev.from << "->" << ev.to << ' '
          << frame_type_name(ev.type) << ' ' << ev.label.to_string() << '\n';
  write_file(out / "taint_log.txt", taint.str());
  write_file(out / "trace.txt", result.trace_text());

  std::cout << "mode=" << veil::job_mode_name(cfg.mode) << " n=" << cfg.n_training
            << " iterations=" << result.iterations_run << " accuracy=" << result.eval_accuracy
            << " total_ticks=" << result.total_ticks << '\n';
  return kOk;
}

int cmd_costmodel(const std::string& config_path, const std::string& n_range,
                  std::vector<std::uint32_t> c_list) {
  const veil::JobConfig cfg = veil::load_config(config_path);

  const auto sep = n_range.find("..");
  std::uint32_t n_lo = 0, n_hi = 0;
  try {
    if (sep == std::string::npos) {
      n_lo = n_hi = static_cast<std::uint32_t>(std::stoul(n_range));
    } else {
      n_lo = static_cast<std::uint32_t>(std::stoul(n_range.substr(0, sep)));
      n_hi = static_cast<std::uint32_t>(std::stoul(n_range.substr(sep + 2)));
    }
  } catch (const std::exception&) {
    throw veil::ConfigError("cannot parse --n range '" + n_range + "' (expected a..b)");
  }
  if (n_lo < 1 || n_hi < n_lo) throw veil::ConfigError("empty --n range");
  if (c_list.empty()) throw veil::ConfigError("empty --c list");
  for (auto c : c_list)
    if (c < 2) throw veil::ConfigError("tree fan-in must be at least 2");

  // Feed the estimators the job's real wire sizes.
  veil::CostParams params = cfg.costs;
  const auto payload =
      veil::serialize(veil::GradVector::zeros(cfg.domain.domain, cfg.model.param_shape(),
                                              static_cast<std::uint8_t>(cfg.domain.fixed.frac_bits)));
  veil::EncryptedBlob probe;
  probe.key_id = veil::mask_secret_id(0, 0);
  probe.ciphertext.resize(payload.size());
  params.mask_bytes = veil::serialize_blob(probe).size();
  veil::Body body_probe;
  body_probe.vec = payload;
  if (cfg.taint_tracking) {
    body_probe.label.kind = veil::TaintLabel::Kind::Masked;
    body_probe.label.grads = {0};
    body_probe.label.masks = {0};
  }
  const auto packed = veil::body_wire::pack(veil::FrameType::Update, body_probe,
                                            cfg.taint_tracking);
  veil::EncryptedBlob frame_probe;
  frame_probe.key_id = veil::session_secret_id(veil::training_id(0), veil::kAggregatorId);
  frame_probe.ciphertext.resize(packed.size());
  veil::MessageFrame f;
  f.type = veil::FrameType::Update;
  f.payload = veil::serialize_blob(frame_probe);
  params.update_bytes = f.wire_size(cfg.taint_tracking);

  std::cout << "n,c,t_mask,t_tree,recommended\n";
  for (std::uint32_t n = n_lo; n <= n_hi; ++n) {
    for (auto c : c_list) {
      std::cout << n << ',' << c << ',' << veil::estimate_mask(params, n) << ','
                << veil::estimate_tree(params, n, c) << ','
                << veil::barrier_mode_name(veil::recommend_mode(params, n, c)) << '\n';
    }
  }
  return kOk;
}

int cmd_verify(const std::string& suite) {
  std::vector<veil::verify::SuiteResult> results;
  if (suite == "all") {
    results = veil::verify::run_all();
  } else {
    results.push_back(veil::verify::run_suite(suite));
  }
  bool all_pass = true;
  for (const auto& result : results) {
    for (const auto& check : result.checks) {
      std::cout << (check.pass ? "[PASS] " : "[FAIL] ") << result.suite << ": " << check.name;
      if (!check.detail.empty()) std::cout << " (" << check.detail << ")";
      std::cout << '\n';
      all_pass = all_pass && check.pass;
    }
    std::cerr << "suite " << result.suite << (result.pass() ? " passed" : " FAILED") << " in "
              << result.wall_seconds << "s\n";
  }
  return all_pass ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TEE-style collaborative training simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", n_range = "1..8", suite, template_name;
  std::string gen_out;
  std::optional<std::uint64_t> seed_override;
  std::vector<std::uint32_t> c_list{2};

  auto* run = app.add_subcommand("run", "Run one training job from a config file");
  run->add_option("--config", config_path, "Job config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--seed-override", seed_override, "Replace the config's seed");

  auto* costmodel = app.add_subcommand("costmodel", "Print analytic iteration-time estimates");
  costmodel->add_option("--config", config_path, "Job config (JSON)")->required();
  costmodel->add_option("--n", n_range, "Enclave-count range a..b");
  costmodel->add_option("--c", c_list, "Tree fan-in list");

  auto* verify = app.add_subcommand("verify", "Run a verification suite");
  verify->add_option("--suite", suite, "Suite name or 'all'")->required();

  auto* gen = app.add_subcommand("gen-config", "Print a starter config");
  gen->add_option("--template", template_name, "mask|tree|ssp")->required();
  gen->add_option("--out", gen_out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return kBadInput;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, seed_override);
    if (costmodel->parsed()) return cmd_costmodel(config_path, n_range, c_list);
    if (verify->parsed()) return cmd_verify(suite);
    if (gen->parsed()) {
      const auto cfg = veil::config_template(template_name);
      const std::string text = veil::to_json(cfg).dump(2) + "\n";
      if (gen_out.empty()) {
        std::cout << text;
      } else {
        write_file(gen_out, text);
      }
      return kOk;
    }
  } catch (const veil::PrivacyViolationError& e) {
    std::cerr << "privacy violation: " << e.what() << '\n';
    return kPrivacyViolation;
  } catch (const veil::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kBadInput;
  } catch (const veil::Error& e) {
    std::cerr << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return kFailure;
  }
  return kBadInput;
}
