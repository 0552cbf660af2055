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

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "veil/errors.hpp"
#include "veil/tensors.hpp"

namespace veil {

// Number of reduction levels a c-ary tree needs over n participants:
// ceil(log_c(n)), i.e. the smallest h with c^h >= n.
inline std::uint32_t ceil_log(std::uint32_t n, std::uint32_t c) {
  if (c < 2) throw ConfigError("tree fan-in must be at least 2");
  if (n <= 1) return 0;
  std::uint32_t h = 0;
  std::uint64_t reach = 1;
  while (reach < n) {
    reach *= c;
    ++h;
  }
  return h;
}

// C-ary reduction schedule. Participants are 0..n-1; leaders at level l are
// the indices divisible by c^l, and every other node active at that level
// sends to floor(index / c^l) * c^l. The last round is the surviving
// leader's hand-off to the aggregator, so rounds.size() == ceil_log(n,c)+1.
struct TreePlan {
  // Hand-off target in the final round.
  static constexpr std::uint32_t kAggregator = 0xffffffff;

  struct Edge {
    std::uint32_t sender;
    std::uint32_t leader;
    bool operator==(const Edge&) const = default;
  };

  std::uint32_t n = 0;
  std::uint32_t c = 0;
  std::vector<std::vector<Edge>> rounds;
  std::uint32_t final_leader = 0;

  // Number of active nodes entering level `l` (0-based): the l-fold nested
  // ceiling ceil(...ceil(n/c).../c).
  std::uint32_t active_count(std::uint32_t l) const {
    std::uint64_t active = n;
    for (std::uint32_t i = 0; i < l; ++i) active = (active + c - 1) / c;
    return static_cast<std::uint32_t>(active);
  }
};

inline TreePlan build_tree_plan(std::uint32_t n, std::uint32_t c) {
  if (n < 1) throw ConfigError("tree needs at least one participant");
  if (c < 2) throw ConfigError("tree fan-in must be at least 2");
  TreePlan plan;
  plan.n = n;
  plan.c = c;
  const std::uint32_t height = ceil_log(n, c);
  std::uint64_t stride = 1;  // c^(l-1) while building level l
  for (std::uint32_t l = 1; l <= height; ++l) {
    const std::uint64_t group = stride * c;  // c^l
    std::vector<TreePlan::Edge> edges;
    for (std::uint64_t i = 0; i < n; i += stride) {
      if (i % group == 0) continue;  // leader survives this level
      edges.push_back({static_cast<std::uint32_t>(i),
                       static_cast<std::uint32_t>(i / group * group)});
    }
    plan.rounds.push_back(std::move(edges));
    stride = group;
  }
  plan.final_leader = 0;
  plan.rounds.push_back({{plan.final_leader, TreePlan::kAggregator}});
  return plan;
}

// Fold under add() in ascending participant order. The deterministic order
// keeps Float32 runs reproducible; Fixed64 is order-independent anyway.
inline GradVector flat_aggregate(const std::vector<GradVector>& updates) {
  if (updates.empty()) throw StructuralError("nothing to aggregate");
  GradVector acc = updates.front();
  for (std::size_t i = 1; i < updates.size(); ++i) acc = add(acc, updates[i]);
  return acc;
}

// Transport used by run_tree_aggregation. The simulator provides a real one;
// tests use in-memory channels (possibly lossy, to exercise the timeout
// path). deliver() returns false when the partial never arrives.
class TreeChannel {
 public:
  virtual ~TreeChannel() = default;
  virtual bool deliver(std::uint32_t sender, std::uint32_t leader, const GradVector& partial) = 0;
};

class LoopbackChannel : public TreeChannel {
 public:
  bool deliver(std::uint32_t, std::uint32_t, const GradVector&) override { return true; }
};

// Executes the plan over the participants' local updates: per round, each
// sender's accumulated partial moves to its leader and is folded there in
// ascending sender order. Returns what the aggregator receives, which equals
// flat_aggregate(local_updates) exactly in Fixed64.
inline GradVector run_tree_aggregation(const TreePlan& plan,
                                       const std::vector<GradVector>& local_updates,
                                       TreeChannel& channel) {
  if (local_updates.size() != plan.n)
    throw StructuralError("plan is for " + std::to_string(plan.n) + " participants, got " +
                          std::to_string(local_updates.size()) + " updates");
  std::vector<GradVector> acc = local_updates;
  for (std::size_t r = 0; r + 1 < plan.rounds.size(); ++r) {
    // Edges are emitted in ascending sender order; folding in emission order
    // is the deterministic ascending fold.
    for (const auto& edge : plan.rounds[r]) {
      if (!channel.deliver(edge.sender, edge.leader, acc[edge.sender]))
        throw AggregationIncompleteError("partial from " + std::to_string(edge.sender) +
                                         " to " + std::to_string(edge.leader) +
                                         " missing in round " + std::to_string(r));
      acc[edge.leader] = add(acc[edge.leader], acc[edge.sender]);
    }
  }
  const auto& handoff = plan.rounds.back();
  if (!channel.deliver(handoff.front().sender, TreePlan::kAggregator, acc[plan.final_leader]))
    throw AggregationIncompleteError("final hand-off missing");
  return acc[plan.final_leader];
}

}  // namespace veil
