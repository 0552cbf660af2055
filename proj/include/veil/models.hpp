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

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "veil/errors.hpp"
#include "veil/rng.hpp"
#include "veil/tensors.hpp"

namespace veil {

enum class ModelKind : std::uint8_t { LinearRegression, LogisticRegression, Mlp };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::LinearRegression: return "linear_regression";
    case ModelKind::LogisticRegression: return "logistic_regression";
    case ModelKind::Mlp: return "mlp";
  }
  return "unknown";
}

// Step-decay learning-rate schedule: base * factor^floor(step / every).
struct LrSchedule {
  double base_lr = 0.5;
  double decay_factor = 1.0;
  std::uint32_t decay_every = 100;

  double at(std::uint64_t step) const {
    if (decay_every == 0) return base_lr;
    return base_lr * std::pow(decay_factor, static_cast<double>(step / decay_every));
  }
};

struct Hyperparams {
  std::uint32_t batch_size = 50;
  LrSchedule lr_schedule{};
  double clip_norm = 10.0;
};

// Model architecture plus the owner's (secret) training hyperparameters.
// The hyperparameter values travel as dynamic config after attestation,
// never inside the shared code identity.
struct ModelSpec {
  ModelKind kind = ModelKind::LogisticRegression;
  std::vector<std::uint32_t> layer_dims;  // e.g. {20, 1} or {20, 32, 1}
  std::uint64_t init_seed = 1;
  Hyperparams hyperparams{};

  // Per-layer parameter block lengths; the shape every exchanged GradVector
  // must carry. Dense layers are [W(in*out), b(out)] pairs.
  std::vector<std::uint64_t> param_shape() const {
    if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least input and output");
    std::vector<std::uint64_t> shape;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
      shape.push_back(static_cast<std::uint64_t>(layer_dims[l]) * layer_dims[l + 1]);
      shape.push_back(layer_dims[l + 1]);
    }
    return shape;
  }

  std::uint64_t param_count() const {
    auto shape = param_shape();
    return std::accumulate(shape.begin(), shape.end(), std::uint64_t{0});
  }

  void validate() const {
    if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least input and output");
    for (auto d : layer_dims)
      if (d == 0) throw ConfigError("layer dimension must be positive");
    if (layer_dims.back() != 1) throw ConfigError("output dimension must be 1");
    if (kind != ModelKind::Mlp && layer_dims.size() != 2)
      throw ConfigError("linear/logistic models take exactly {in, 1} dims");
    if (kind == ModelKind::Mlp && layer_dims.size() != 3)
      throw ConfigError("mlp takes exactly {in, hidden, 1} dims");
    if (hyperparams.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(hyperparams.clip_norm > 0)) throw ConfigError("clip_norm must be positive");
    if (!(hyperparams.lr_schedule.base_lr > 0)) throw ConfigError("base_lr must be positive");
  }
};

struct Batch {
  std::vector<double> features;  // row-major, rows x cols
  std::vector<double> labels;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::string owner_id;

  void validate() const {
    if (static_cast<std::uint64_t>(rows) * cols != features.size() ||
        rows != labels.size())
      throw StructuralError("batch dimensions do not line up");
  }
};

struct ModelState {
  GradVector weights;
  std::uint32_t epoch = 0;
  std::uint32_t batch_index = 0;

  std::uint64_t step(std::uint32_t batches_per_epoch) const {
    return static_cast<std::uint64_t>(epoch) * batches_per_epoch + batch_index;
  }
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Cross-entropy on a sigmoid output, numerically stable form.
inline double xent(double z, double y) {
  // log(1 + e^z) - y*z, with the usual max trick.
  const double m = z > 0 ? z : 0.0;
  return m + std::log(std::exp(-m) + std::exp(z - m)) - y * z;
}

inline void check_batch(const ModelSpec& spec, const Batch& batch) {
  batch.validate();
  if (batch.cols != spec.layer_dims.front())
    throw StructuralError("batch has " + std::to_string(batch.cols) + " features, model expects " +
                          std::to_string(spec.layer_dims.front()));
  if (batch.rows == 0) throw StructuralError("empty batch");
}

}  // namespace detail

// Mean loss over the batch: 0.5*MSE for linear regression, cross-entropy for
// the classifiers. Fixed per model kind.
inline double loss(const ModelSpec& spec, std::span<const double> w, const Batch& batch) {
  detail::check_batch(spec, batch);
  const std::uint32_t d = spec.layer_dims.front();
  double total = 0.0;
  if (spec.kind == ModelKind::Mlp) {
    const std::uint32_t h = spec.layer_dims[1];
    const double* w1 = w.data();                // d*h
    const double* b1 = w1 + std::size_t{d} * h; // h
    const double* w2 = b1 + h;                  // h
    const double* b2 = w2 + h;                  // 1
    std::vector<double> a1(h);
    for (std::uint32_t r = 0; r < batch.rows; ++r) {
      const double* x = &batch.features[std::size_t{r} * d];
      for (std::uint32_t j = 0; j < h; ++j) {
        double z = b1[j];
        for (std::uint32_t i = 0; i < d; ++i) z += x[i] * w1[std::size_t{i} * h + j];
        a1[j] = std::tanh(z);
      }
      double z2 = b2[0];
      for (std::uint32_t j = 0; j < h; ++j) z2 += a1[j] * w2[j];
      total += detail::xent(z2, batch.labels[r]);
    }
  } else {
    const double* wv = w.data();
    const double b = w[d];
    for (std::uint32_t r = 0; r < batch.rows; ++r) {
      const double* x = &batch.features[std::size_t{r} * d];
      double z = b;
      for (std::uint32_t i = 0; i < d; ++i) z += x[i] * wv[i];
      if (spec.kind == ModelKind::LinearRegression) {
        const double err = z - batch.labels[r];
        total += 0.5 * err * err;
      } else {
        total += detail::xent(z, batch.labels[r]);
      }
    }
  }
  return total / batch.rows;
}

// Mean gradient of the loss over the batch, in plain doubles. Deterministic
// given (weights, batch).
inline std::vector<double> gradient(const ModelSpec& spec, std::span<const double> w,
                                    const Batch& batch) {
  detail::check_batch(spec, batch);
  const std::uint32_t d = spec.layer_dims.front();
  std::vector<double> g(w.size(), 0.0);
  if (spec.kind == ModelKind::Mlp) {
    const std::uint32_t h = spec.layer_dims[1];
    const double* w1 = w.data();
    const double* b1 = w1 + std::size_t{d} * h;
    const double* w2 = b1 + h;
    const double* b2 = w2 + h;
    double* g1 = g.data();
    double* gb1 = g1 + std::size_t{d} * h;
    double* g2 = gb1 + h;
    double* gb2 = g2 + h;
    std::vector<double> a1(h), delta1(h);
    for (std::uint32_t r = 0; r < batch.rows; ++r) {
      const double* x = &batch.features[std::size_t{r} * d];
      for (std::uint32_t j = 0; j < h; ++j) {
        double z = b1[j];
        for (std::uint32_t i = 0; i < d; ++i) z += x[i] * w1[std::size_t{i} * h + j];
        a1[j] = std::tanh(z);
      }
      double z2 = b2[0];
      for (std::uint32_t j = 0; j < h; ++j) z2 += a1[j] * w2[j];
      const double delta2 = detail::sigmoid(z2) - batch.labels[r];
      for (std::uint32_t j = 0; j < h; ++j) {
        g2[j] += delta2 * a1[j];
        delta1[j] = delta2 * w2[j] * (1.0 - a1[j] * a1[j]);
        gb1[j] += delta1[j];
      }
      gb2[0] += delta2;
      for (std::uint32_t i = 0; i < d; ++i)
        for (std::uint32_t j = 0; j < h; ++j) g1[std::size_t{i} * h + j] += x[i] * delta1[j];
    }
  } else {
    const double* wv = w.data();
    const double b = w[d];
    for (std::uint32_t r = 0; r < batch.rows; ++r) {
      const double* x = &batch.features[std::size_t{r} * d];
      double z = b;
      for (std::uint32_t i = 0; i < d; ++i) z += x[i] * wv[i];
      const double err = spec.kind == ModelKind::LinearRegression
                             ? z - batch.labels[r]
                             : detail::sigmoid(z) - batch.labels[r];
      for (std::uint32_t i = 0; i < d; ++i) g[i] += err * x[i];
      g[d] += err;
    }
  }
  for (auto& v : g) v /= batch.rows;
  return g;
}

// Spec-facing wrapper: gradients in the exchange domain.
inline GradVector compute_gradients(const ModelSpec& spec, const ModelState& state,
                                    const Batch& batch, const DomainConfig& dc) {
  if (state.weights.size() != spec.param_count())
    throw StructuralError("weight vector does not match model parameter count");
  const auto w = dc.decode(state.weights);
  return dc.encode(gradient(spec, w, batch), spec.param_shape());
}

// Scale a real vector down to the given L2 norm if it exceeds it.
inline std::vector<double> clip_to_norm(std::vector<double> g, double clip_norm) {
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  double sq = 0.0;
  for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (double& v : g) v *= scale;
  }
  return g;
}

inline GradVector clip_gradients(const GradVector& g, double clip_norm, const DomainConfig& dc) {
  return dc.encode(clip_to_norm(dc.decode(g), clip_norm), g.shape());
}

inline double lr_at(const LrSchedule& schedule, std::uint64_t step) { return schedule.at(step); }

struct UpdateRule {
  LrSchedule lr{};
  double clip_norm = 10.0;
  std::uint32_t batches_per_epoch = 1;
};

// One synchronous-SGD model update, aggregator side. `agg` is the SUM over
// `participants` updates; the mean is formed here:
//   w <- w - lr(step) * clip(agg / K)
// The (epoch, batch) counter advances afterwards.
inline ModelState apply_update(const ModelState& state, const GradVector& agg,
                               const UpdateRule& rule, std::uint32_t participants,
                               const DomainConfig& dc) {
  if (agg.shape() != state.weights.shape())
    throw StructuralError("aggregate shape does not match weights");
  if (participants == 0) throw ConfigError("participant count must be positive");
  auto mean = dc.decode(agg);
  for (double& v : mean) v /= participants;
  mean = clip_to_norm(std::move(mean), rule.clip_norm);
  auto w = dc.decode(state.weights);
  const double lr = rule.lr.at(state.step(rule.batches_per_epoch));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * mean[i];

  ModelState next{dc.encode(w, state.weights.shape()), state.epoch, state.batch_index};
  if (next.batch_index + 1 < rule.batches_per_epoch) {
    ++next.batch_index;
  } else {
    next.batch_index = 0;
    ++next.epoch;
  }
  return next;
}

inline GradVector init_weights(const ModelSpec& spec, const DomainConfig& dc) {
  SecureRng rng(spec.init_seed);
  std::vector<double> w(spec.param_count());
  // Small symmetric init; exact values only need to be deterministic.
  for (auto& v : w) v = rng.next_double(-0.05, 0.05);
  return dc.encode(w, spec.param_shape());
}

// Fraction of eval rows classified correctly (logit threshold 0).
inline double eval_accuracy(const ModelSpec& spec, std::span<const double> w, const Batch& eval) {
  detail::check_batch(spec, eval);
  if (spec.kind == ModelKind::LinearRegression)
    throw ConfigError("accuracy is defined for classifiers only");
  std::uint32_t hits = 0;
  const std::uint32_t d = spec.layer_dims.front();
  for (std::uint32_t r = 0; r < eval.rows; ++r) {
    const double* x = &eval.features[std::size_t{r} * d];
    double z;
    if (spec.kind == ModelKind::Mlp) {
      const std::uint32_t h = spec.layer_dims[1];
      const double* w1 = w.data();
      const double* b1 = w1 + std::size_t{d} * h;
      const double* w2 = b1 + h;
      const double* b2 = w2 + h;
      z = b2[0];
      for (std::uint32_t j = 0; j < h; ++j) {
        double zj = b1[j];
        for (std::uint32_t i = 0; i < d; ++i) zj += x[i] * w1[std::size_t{i} * h + j];
        z += std::tanh(zj) * w2[j];
      }
    } else {
      z = w[d];
      for (std::uint32_t i = 0; i < d; ++i) z += x[i] * w[i];
    }
    if ((z > 0.0) == (eval.labels[r] > 0.5)) ++hits;
  }
  return static_cast<double>(hits) / eval.rows;
}

// ---------------------------------------------------------------------------
// Toy task: a linearly separable binary classification problem split into
// per-owner shards. Deterministic per seed.
// ---------------------------------------------------------------------------

struct ToyTaskParams {
  std::uint32_t samples = 2000;
  std::uint32_t features = 20;
  double margin = 0.5;
  std::uint32_t eval_samples = 500;
};

struct ToyTask {
  std::vector<Batch> shards;  // one per owner, whole shard
  Batch eval;
};

inline ToyTask make_toy_task(std::uint64_t seed, std::uint32_t n_owners,
                             const ToyTaskParams& params = {}) {
  if (n_owners == 0) throw ConfigError("need at least one data owner");
  if (params.samples % n_owners != 0)
    throw ConfigError("sample count must divide evenly across owners");
  SecureRng rng = SecureRng(seed).derive("toy-task");

  const std::uint32_t d = params.features;
  std::vector<double> plane(d);
  double norm_sq = 0.0;
  for (auto& v : plane) {
    v = rng.next_double(-1.0, 1.0);
    norm_sq += v * v;
  }
  const double inv_norm = 1.0 / std::sqrt(norm_sq);
  for (auto& v : plane) v *= inv_norm;

  auto draw_sample = [&](std::vector<double>& x) -> double {
    // Rejection-sample until the point clears the margin.
    for (;;) {
      double dot = 0.0;
      for (std::uint32_t i = 0; i < d; ++i) {
        x[i] = rng.next_double(-1.0, 1.0);
        dot += x[i] * plane[i];
      }
      if (std::fabs(dot) >= params.margin) return dot > 0 ? 1.0 : 0.0;
    }
  };

  auto fill_batch = [&](Batch& b, std::uint32_t rows, const std::string& owner) {
    b.rows = rows;
    b.cols = d;
    b.owner_id = owner;
    b.features.resize(std::size_t{rows} * d);
    b.labels.resize(rows);
    std::vector<double> x(d);
    for (std::uint32_t r = 0; r < rows; ++r) {
      b.labels[r] = draw_sample(x);
      std::copy(x.begin(), x.end(), b.features.begin() + std::size_t{r} * d);
    }
  };

  ToyTask task;
  const std::uint32_t per_owner = params.samples / n_owners;
  task.shards.resize(n_owners);
  for (std::uint32_t o = 0; o < n_owners; ++o)
    fill_batch(task.shards[o], per_owner, "owner-" + std::to_string(o));
  fill_batch(task.eval, params.eval_samples, "eval");
  return task;
}

// ---------------------------------------------------------------------------
// Shard wire format (the plaintext a data owner encrypts and uploads):
//   magic "CSH1" | canary (16) | owner u32 LE | rows u32 LE | cols u32 LE |
//   features f64 LE row-major | labels f64 LE
// The canary is a fixed sentinel that privacy scans grep for: it must never
// show up in storage or on the wire outside an enclave.
// ---------------------------------------------------------------------------

inline constexpr char kShardMagic[4] = {'C', 'S', 'H', '1'};
inline constexpr char kDataCanary[17] = "VEIL-DATA-CANARY";  // 16 bytes on the wire

inline std::vector<std::uint8_t> serialize_shard(const Batch& shard, std::uint32_t owner) {
  shard.validate();
  std::vector<std::uint8_t> out;
  out.reserve(32 + 8 * (shard.features.size() + shard.labels.size()));
  out.insert(out.end(), kShardMagic, kShardMagic + 4);
  out.insert(out.end(), kDataCanary, kDataCanary + 16);
  wire::put_u32(out, owner);
  wire::put_u32(out, shard.rows);
  wire::put_u32(out, shard.cols);
  for (double v : shard.features) wire::put_u64(out, std::bit_cast<std::uint64_t>(v));
  for (double v : shard.labels) wire::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Batch parse_shard(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kShardMagic, 4) != 0) throw FormatError("bad shard magic");
  auto canary = r.take(16);
  if (std::memcmp(canary.data(), kDataCanary, 16) != 0) throw FormatError("shard canary mangled");
  Batch b;
  const std::uint32_t owner = r.u32();
  b.owner_id = "owner-" + std::to_string(owner);
  b.rows = r.u32();
  b.cols = r.u32();
  const std::uint64_t cells = static_cast<std::uint64_t>(b.rows) * b.cols;
  if (r.remaining() != (cells + b.rows) * 8) throw FormatError("shard payload truncated");
  b.features.resize(cells);
  for (auto& v : b.features) v = std::bit_cast<double>(r.u64());
  b.labels.resize(b.rows);
  for (auto& v : b.labels) v = std::bit_cast<double>(r.u64());
  return b;
}

// Batch `t` of a shard under a fixed round-robin slicing.
inline Batch shard_batch(const Batch& shard, std::uint32_t batch_index,
                         std::uint32_t batch_size, std::uint32_t batches_per_epoch) {
  if (static_cast<std::uint64_t>(batch_size) * batches_per_epoch > shard.rows)
    throw ConfigError("shard has " + std::to_string(shard.rows) + " rows, schedule needs " +
                      std::to_string(batch_size * batches_per_epoch));
  const std::uint32_t slot = batch_index % batches_per_epoch;
  Batch b;
  b.rows = batch_size;
  b.cols = shard.cols;
  b.owner_id = shard.owner_id;
  const std::size_t row0 = std::size_t{slot} * batch_size;
  b.features.assign(shard.features.begin() + row0 * shard.cols,
                    shard.features.begin() + (row0 + batch_size) * shard.cols);
  b.labels.assign(shard.labels.begin() + row0, shard.labels.begin() + row0 + batch_size);
  return b;
}

}  // namespace veil
