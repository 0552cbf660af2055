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
#include <optional>
#include <string>
#include <vector>

#include "veil/cas.hpp"
#include "veil/crypto.hpp"
#include "veil/errors.hpp"
#include "veil/rng.hpp"
#include "veil/storage.hpp"
#include "veil/tensors.hpp"

namespace veil {

inline std::string mask_secret_id(std::uint32_t set, std::uint32_t index) {
  return "mask-key-s" + std::to_string(set) + "-i" + std::to_string(index);
}

inline std::string residual_secret_id(std::uint32_t set) {
  return "mask-key-s" + std::to_string(set) + "-residual";
}

// N masks summing to the group zero, one per training enclave, each with its
// own encryption key. In Fixed64 the fold is the exact zero vector; Float32
// cancellation is approximate (|sum|_inf stays under n * 2^-20).
struct MaskSet {
  std::uint32_t set_index = 0;
  std::uint32_t n = 0;
  std::vector<GradVector> masks;
  std::vector<SymmetricKey> keys;
};

// Sample n-1 masks (Fixed64: uniform over the full group per lane; Float32:
// uniform in [-1, 1)), then close the set with the negated fold so the total
// is zero. n == 1 degenerates to a single zero mask.
inline MaskSet generate_mask_set(std::uint32_t set_index, std::uint32_t n,
                                 const std::vector<std::uint64_t>& shape,
                                 const DomainConfig& dc, SecureRng& rng) {
  if (n < 1) throw ConfigError("a mask set needs at least one mask");
  std::uint64_t total = 0;
  for (auto s : shape) total += s;

  MaskSet set;
  set.set_index = set_index;
  set.n = n;
  std::optional<GradVector> folded;
  for (std::uint32_t i = 0; i + 1 < n; ++i) {
    std::vector<std::uint64_t> lanes(total);
    if (dc.domain == Domain::Fixed64) {
      for (auto& l : lanes) l = rng.next_u64();
    } else {
      for (auto& l : lanes)
        l = std::bit_cast<std::uint32_t>(static_cast<float>(rng.next_double(-1.0, 1.0)));
    }
    GradVector mask(dc.domain, std::move(lanes), shape,
                    dc.domain == Domain::Fixed64
                        ? static_cast<std::uint8_t>(dc.fixed.frac_bits)
                        : std::uint8_t{0});
    folded = folded ? add(*folded, mask) : mask;
    set.masks.push_back(std::move(mask));
  }
  set.masks.push_back(folded ? negate(*folded)
                             : GradVector::zeros(dc.domain, shape,
                                                 static_cast<std::uint8_t>(dc.fixed.frac_bits)));
  for (std::uint32_t i = 0; i < n; ++i)
    set.keys.push_back(keygen(mask_secret_id(set_index, i), OwnerTag::mask_key(set_index, i), rng));
  return set;
}

// One pre-generated mask set per iteration; a set is never reused across
// iterations. `served` keeps grants idempotent within an iteration.
class MaskPool {
 public:
  MaskPool() = default;
  MaskPool(std::vector<MaskSet> sets, std::string admin_id)
      : sets_(std::move(sets)), admin_id_(std::move(admin_id)) {}

  std::uint32_t size() const { return static_cast<std::uint32_t>(sets_.size()); }
  std::uint32_t next_unused() const { return next_unused_; }

  // The set assigned to an iteration. Serving the current (or an already
  // served) iteration again is allowed - that is what makes crash/restart
  // grants idempotent - but the cursor never moves backwards.
  const MaskSet& set_for_iteration(std::uint32_t iteration) {
    if (iteration >= sets_.size())
      throw PoolExhaustedError("mask pool of " + std::to_string(sets_.size()) +
                               " sets has nothing left for iteration " +
                               std::to_string(iteration));
    if (iteration + 1 > next_unused_) next_unused_ = iteration + 1;
    return sets_[iteration];
  }

  // Rebuilds the cursor after an admin restart: everything below the current
  // iteration counts as consumed.
  void fast_forward(std::uint32_t iteration) {
    next_unused_ = std::min<std::uint32_t>(static_cast<std::uint32_t>(sets_.size()), iteration);
  }

  const std::string& admin_id() const { return admin_id_; }

 private:
  std::vector<MaskSet> sets_;
  std::string admin_id_;
  std::uint32_t next_unused_ = 0;
};

// Pre-generates R mask sets, encrypts every mask under its own fresh key,
// uploads the blobs, and deposits the keys with the attestation service under
// one-enclave release rules. Runs in the admin enclave before training; the
// admin never ships mask bytes itself afterwards, it only redirects.
inline MaskPool pregenerate(std::uint32_t pool_size, std::uint32_t n,
                            const std::vector<std::uint64_t>& shape, const DomainConfig& dc,
                            SecureRng& rng, BlobStore& store, Cas& cas,
                            const std::string& admin_enclave_id,
                            const CodeMeasurement& training_measurement) {
  std::vector<MaskSet> sets;
  sets.reserve(pool_size);
  for (std::uint32_t s = 0; s < pool_size; ++s) {
    MaskSet set = generate_mask_set(s, n, shape, dc, rng);
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto plaintext = serialize(set.masks[i]);
      const auto blob = encrypt(set.keys[i], plaintext, rng);
      try {
        store.put(BlobKey::mask(s, i), blob);
      } catch (const ConflictError& e) {
        throw ConfigError(std::string("mask pregeneration collided in storage: ") + e.what());
      }
      cas.register_protocol_secret(
          admin_enclave_id, set.keys[i],
          PolicyRule{mask_secret_id(s, i), Role::training(i), training_measurement, {}});
    }
    sets.push_back(std::move(set));
  }
  return MaskPool(std::move(sets), admin_enclave_id);
}

// What a training enclave needs to pick up its mask: where the blob lives and
// which secret to request from the attestation service.
struct MaskGrant {
  BlobKey blob;
  std::string secret_id;
  bool residual = false;
  // Mask indices this grant's mask covers (own index, plus straggler indices
  // for a residual). Test builds carry this into the taint label.
  std::vector<std::uint32_t> covers;
};

// Admin-side handling of one mask request outside SSP: enclave `index` gets
// mask (set, index) of the iteration's set. Repeated requests return the same
// grant; a request for someone else's mask is denied.
inline MaskGrant serve_mask_request(MaskPool& pool, std::uint32_t iteration,
                                    std::uint32_t enclave_index) {
  const MaskSet& set = pool.set_for_iteration(iteration);
  if (enclave_index >= set.n)
    throw PolicyError("enclave index " + std::to_string(enclave_index) +
                      " out of range for mask set of " + std::to_string(set.n));
  return MaskGrant{BlobKey::mask(set.set_index, enclave_index),
                   mask_secret_id(set.set_index, enclave_index),
                   false,
                   {enclave_index}};
}

// Residual mask for an SSP cut: the fold of every NON-participant's mask plus
// the last participant's own mask, so that
//   m_{p0} + ... + m_{p(K-2)} + residual == 0.
// With no stragglers this is just the last participant's own mask; with a
// single participant it is the whole (zero) set.
inline GradVector residual_mask(const MaskSet& set,
                                const std::vector<std::uint32_t>& participants) {
  if (participants.empty()) throw ConfigError("residual_mask: no participants");
  std::vector<bool> in(set.n, false);
  for (auto p : participants) {
    if (p >= set.n) throw ConfigError("residual_mask: participant index out of range");
    if (in[p]) throw ConfigError("residual_mask: duplicate participant");
    in[p] = true;
  }
  GradVector acc = set.masks[participants.back()];
  for (std::uint32_t i = 0; i < set.n; ++i)
    if (!in[i]) acc = add(acc, set.masks[i]);
  return acc;
}

// Indices a residual grant covers: the last participant plus all stragglers.
inline std::vector<std::uint32_t> residual_cover(std::uint32_t n,
                                                 const std::vector<std::uint32_t>& participants) {
  std::vector<bool> in(n, false);
  for (auto p : participants) in[p] = true;
  std::vector<std::uint32_t> cover{participants.back()};
  for (std::uint32_t i = 0; i < n; ++i)
    if (!in[i]) cover.push_back(i);
  return cover;
}

}  // namespace veil
