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

// Acceptance gate: every protocol guarantee, one line per criterion. A
// criterion passes only if all of its checks pass and it finishes inside its
// time budget (0 = no budget).

#include <cstdio>
#include <string>
#include <vector>

#include "veil/verify.hpp"

int main() {
  struct Criterion {
    int number;
    const char* suite;
    const char* title;
    double budget_seconds;
  };
  const std::vector<Criterion> criteria = {
      {1, "zero-sum", "zero-sum exactness across N", 10.0},
      {2, "barrier", "masked aggregation equals unmasked sum", 30.0},
      {3, "tree", "tree aggregation equivalence and structure", 60.0},
      {4, "learning", "end-to-end learning equivalence, 200 iterations", 120.0},
      {5, "privacy", "privacy invariants over a full job", 60.0},
      {6, "ssp", "straggler cut correctness", 0.0},
      {7, "fault-tolerance", "crash/restart converges to the fault-free model", 0.0},
      {8, "cost-model", "simulator matches the analytic estimates", 0.0},
      {9, "determinism", "runs are byte-identical per (config, seed)", 0.0},
  };

  bool all_pass = true;
  for (const auto& criterion : criteria) {
    veil::verify::SuiteResult result;
    std::string error;
    try {
      result = veil::verify::run_suite(criterion.suite);
    } catch (const std::exception& e) {
      error = e.what();
    }
    bool pass = error.empty() && result.pass();
    if (criterion.budget_seconds > 0 && result.wall_seconds >= criterion.budget_seconds)
      pass = false;

    std::printf("[%s] criterion %d: %s (%.2fs)\n", pass ? "PASS" : "FAIL", criterion.number,
                criterion.title, result.wall_seconds);
    if (!error.empty()) std::printf("        error: %s\n", error.c_str());
    for (const auto& check : result.checks) {
      if (!check.pass)
        std::printf("        failed: %s %s\n", check.name.c_str(), check.detail.c_str());
    }
    all_pass = all_pass && pass;
  }
  return all_pass ? 0 : 1;
}
