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

// Independent recomputation paths used by tests and the verification suites.
// Nothing here touches the protocol machinery it is used to check: sums go
// through GMP big integers, gradients through finite differences, and the
// reference SGD trajectory is written out longhand.

#pragma once

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "veil/models.hpp"
#include "veil/tensors.hpp"

namespace veil::oracle {

// Exact lane-wise sum of residue vectors as arbitrary-precision integers,
// reduced mod 2^64 at the end.
inline std::vector<std::uint64_t> bigint_fold_mod64(
    const std::vector<std::vector<std::uint64_t>>& vectors) {
  if (vectors.empty()) return {};
  const std::size_t lanes = vectors.front().size();
  std::vector<std::uint64_t> out(lanes);
  mpz_class acc, reduced;
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    acc = 0;
    for (const auto& v : vectors) acc += mpz_class(static_cast<unsigned long>(v[lane]));
    mpz_fdiv_r_2exp(reduced.get_mpz_t(), acc.get_mpz_t(), 64);
    out[lane] = static_cast<std::uint64_t>(reduced.get_ui());
  }
  return out;
}

inline std::vector<std::uint64_t> bigint_fold_mod64(const std::vector<GradVector>& vectors) {
  std::vector<std::vector<std::uint64_t>> raw;
  raw.reserve(vectors.size());
  for (const auto& v : vectors) raw.push_back(v.lanes());
  return bigint_fold_mod64(raw);
}

// Central finite difference of the loss, lane by lane.
inline std::vector<double> finite_difference_gradient(const ModelSpec& spec,
                                                      std::span<const double> w,
                                                      const Batch& batch,
                                                      double step = 1e-3) {
  std::vector<double> probe(w.begin(), w.end());
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double hi = loss(spec, probe, batch);
    probe[i] = saved - step;
    const double lo = loss(spec, probe, batch);
    probe[i] = saved;
    g[i] = (hi - lo) / (2.0 * step);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Reference synchronous-SGD trajectory through the same quantization pipeline
// as the protocol, written independently: encode/decode/fold/update are all
// spelled out here rather than calling the library ops.
// ---------------------------------------------------------------------------

struct SgdOracleResult {
  std::vector<std::uint64_t> weight_lanes;  // final weights in the exchange domain
  std::vector<double> weights;              // final weights decoded
  // Per-iteration pre-division aggregate (sum over participants), in lanes.
  std::vector<std::vector<std::uint64_t>> iteration_aggregates;
};

namespace detail {

inline std::uint64_t encode_lane(double x, int frac_bits) {
  return static_cast<std::uint64_t>(
      static_cast<std::int64_t>(std::llround(x * std::ldexp(1.0, frac_bits))));
}

inline double decode_lane(std::uint64_t lane, int frac_bits) {
  return static_cast<double>(static_cast<std::int64_t>(lane)) * std::ldexp(1.0, -frac_bits);
}

}  // namespace detail

// Runs `iterations` steps. participants_at(iter) returns the sorted owner
// indices contributing in that iteration (normally all of them; SSP runs
// drop stragglers). Fixed64 only - the exact pipeline the equality criteria
// are stated for.
template <typename ParticipantsFn>
inline SgdOracleResult run_reference_sgd(const ModelSpec& spec, const ToyTask& task,
                                         const DomainConfig& dc, std::uint32_t iterations,
                                         std::uint32_t batches_per_epoch,
                                         ParticipantsFn&& participants_at) {
  const int frac = dc.fixed.frac_bits;
  const auto start = init_weights(spec, dc);  // shared starting point
  std::vector<std::uint64_t> w_lanes = start.lanes();

  SgdOracleResult result;
  for (std::uint32_t iter = 0; iter < iterations; ++iter) {
    const std::uint32_t t = iter % batches_per_epoch;
    std::vector<double> w(w_lanes.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = detail::decode_lane(w_lanes[i], frac);

    const std::vector<std::uint32_t> participants = participants_at(iter);
    std::vector<std::vector<std::uint64_t>> encoded;
    for (std::uint32_t p : participants) {
      const Batch batch =
          shard_batch(task.shards[p], t, spec.hyperparams.batch_size, batches_per_epoch);
      const auto g = gradient(spec, w, batch);
      std::vector<std::uint64_t> lanes(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) lanes[i] = detail::encode_lane(g[i], frac);
      encoded.push_back(std::move(lanes));
    }
    const auto agg = bigint_fold_mod64(encoded);
    result.iteration_aggregates.push_back(agg);

    // mean -> clip -> step
    std::vector<double> mean(agg.size());
    for (std::size_t i = 0; i < agg.size(); ++i)
      mean[i] = detail::decode_lane(agg[i], frac) / participants.size();
    double sq = 0.0;
    for (double v : mean) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > spec.hyperparams.clip_norm) {
      const double scale = spec.hyperparams.clip_norm / norm;
      for (double& v : mean) v *= scale;
    }
    const double lr = spec.hyperparams.lr_schedule.at(iter);
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * mean[i];
      w_lanes[i] = detail::encode_lane(w[i], frac);
    }
  }

  result.weight_lanes = w_lanes;
  result.weights.resize(w_lanes.size());
  for (std::size_t i = 0; i < w_lanes.size(); ++i)
    result.weights[i] = detail::decode_lane(w_lanes[i], frac);
  return result;
}

inline SgdOracleResult run_reference_sgd(const ModelSpec& spec, const ToyTask& task,
                                         const DomainConfig& dc, std::uint32_t iterations,
                                         std::uint32_t batches_per_epoch) {
  std::vector<std::uint32_t> all(task.shards.size());
  for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
  return run_reference_sgd(spec, task, dc, iterations, batches_per_epoch,
                           [&](std::uint32_t) { return all; });
}

}  // namespace veil::oracle
