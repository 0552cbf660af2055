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
#include <string>

#include "veil/aggregation.hpp"
#include "veil/errors.hpp"

namespace veil {

// Simulated time. All costs are integer ticks so "equal" means equal.
using Tick = std::uint64_t;

// base + ceil(bytes / bytes_per_tick); bytes_per_tick == 0 disables the
// size-dependent part.
struct AffineCost {
  Tick base = 0;
  std::uint64_t bytes_per_tick = 0;

  Tick at(std::uint64_t bytes) const {
    return base + (bytes_per_tick ? (bytes + bytes_per_tick - 1) / bytes_per_tick : 0);
  }
};

// latency + ceil(size / bandwidth); bandwidth == 0 means the link is not
// bandwidth-limited.
struct LatencyModel {
  Tick per_message_latency = 1;
  std::uint64_t bandwidth = 0;  // bytes per tick

  Tick transit(std::uint64_t bytes) const {
    return per_message_latency + (bandwidth ? (bytes + bandwidth - 1) / bandwidth : 0);
  }
};

// t_agg(k): folding k updates.
struct AggCost {
  Tick base = 0;
  Tick per_update = 8;

  Tick at(std::uint64_t k) const { return base + per_update * k; }
};

// Per-operation costs shared by the simulator and the analytic estimators.
// One implementation of each component function keeps the two in exact
// agreement.
struct CostParams {
  LatencyModel net{};
  AffineCost enc{1, 0};
  AffineCost dec{1, 0};
  AggCost agg{};
  Tick t_mask = 1;
  Tick t_train = 10;
  Tick t_apply = 2;
  std::uint64_t mask_bytes = 0;    // wire size of one mask blob
  std::uint64_t update_bytes = 0;  // wire size of one update frame
};

// Masked-mode iteration time over n enclaves:
//   t_train + t_net(m) + t_dec(m) + t_mask + t_enc(g) + t_net(g) + t_dec(g)
//   + t_agg(n) + t_apply
inline Tick estimate_mask(const CostParams& p, std::uint32_t n) {
  if (n < 1) throw ConfigError("estimate_mask needs n >= 1");
  return p.t_train + p.net.transit(p.mask_bytes) + p.dec.at(p.mask_bytes) + p.t_mask +
         p.enc.at(p.update_bytes) + p.net.transit(p.update_bytes) + p.dec.at(p.update_bytes) +
         p.agg.at(n) + p.t_apply;
}

// Tree-mode iteration time with fan-in c:
//   (t_enc(g) + t_dec(g) + t_agg(c) + t_net(g)) * (ceil(log_c n) + 1)
//   + t_train + t_apply
inline Tick estimate_tree(const CostParams& p, std::uint32_t n, std::uint32_t c) {
  if (n < 1) throw ConfigError("estimate_tree needs n >= 1");
  if (c < 2) throw ConfigError("estimate_tree needs c >= 2");
  const Tick per_round = p.enc.at(p.update_bytes) + p.dec.at(p.update_bytes) + p.agg.at(c) +
                         p.net.transit(p.update_bytes);
  return per_round * (ceil_log(n, c) + 1) + p.t_train + p.t_apply;
}

enum class BarrierMode : std::uint8_t { Mask, Tree };

// Cheaper of the two estimates; ties go to masking (the simpler protocol).
inline BarrierMode recommend_mode(const CostParams& p, std::uint32_t n, std::uint32_t c) {
  return estimate_mask(p, n) <= estimate_tree(p, n, c) ? BarrierMode::Mask : BarrierMode::Tree;
}

inline const char* barrier_mode_name(BarrierMode m) {
  return m == BarrierMode::Mask ? "mask" : "tree";
}

}  // namespace veil
