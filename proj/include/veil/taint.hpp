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
#include <set>
#include <string>

#include "veil/errors.hpp"

namespace veil {

// Provenance class of a value or message. Labels are a verification device:
// they ride along in test builds so the information barrier ("the aggregator
// and admin never see raw per-owner values") can be asserted over a whole
// job, and are omitted from release framing.
struct TaintLabel {
  enum class Kind : std::uint8_t {
    RawData = 0,
    RawGradient = 1,
    Masked = 2,
    PartialAggregate = 3,
    FullAggregate = 4,
    ModelWeights = 5,
    MaskMaterial = 6,
    Control = 7,
  };

  Kind kind = Kind::Control;
  std::set<std::uint32_t> grads;  // participant indices whose gradients are in
  std::set<std::uint32_t> masks;  // mask indices applied

  static TaintLabel raw_data(std::uint32_t owner) { return {Kind::RawData, {owner}, {}}; }
  static TaintLabel raw_gradient(std::uint32_t enclave) {
    return {Kind::RawGradient, {enclave}, {}};
  }
  static TaintLabel mask_material(std::set<std::uint32_t> covers) {
    return {Kind::MaskMaterial, {}, std::move(covers)};
  }
  static TaintLabel model_weights() { return {Kind::ModelWeights, {}, {}}; }
  static TaintLabel control() { return {Kind::Control, {}, {}}; }

  bool operator==(const TaintLabel&) const = default;

  std::string to_string() const {
    switch (kind) {
      case Kind::RawData: return "raw-data";
      case Kind::RawGradient: return "raw-gradient";
      case Kind::Masked: return "masked";
      case Kind::PartialAggregate: return "partial-aggregate";
      case Kind::FullAggregate: return "full-aggregate";
      case Kind::ModelWeights: return "model-weights";
      case Kind::MaskMaterial: return "mask-material";
      case Kind::Control: return "control";
    }
    return "unknown";
  }
};

namespace detail {

inline bool is_aggregand(TaintLabel::Kind k) {
  return k == TaintLabel::Kind::RawGradient || k == TaintLabel::Kind::Masked ||
         k == TaintLabel::Kind::PartialAggregate || k == TaintLabel::Kind::FullAggregate;
}

}  // namespace detail

// Label propagation through add(). The rules:
//   RawGradient + MaskMaterial          -> Masked
//   Masked (+ residual MaskMaterial)    -> Masked with widened mask cover
//   aggregand + aggregand               -> PartialAggregate(union)
// Promotion of a partial to FullAggregate needs job context, see
// promote_if_full below.
inline TaintLabel combine_add(const TaintLabel& a, const TaintLabel& b) {
  using K = TaintLabel::Kind;
  auto union_of = [](const std::set<std::uint32_t>& x, const std::set<std::uint32_t>& y) {
    std::set<std::uint32_t> out = x;
    out.insert(y.begin(), y.end());
    return out;
  };

  if (a.kind == K::MaskMaterial || b.kind == K::MaskMaterial) {
    const TaintLabel& mask = a.kind == K::MaskMaterial ? a : b;
    const TaintLabel& value = a.kind == K::MaskMaterial ? b : a;
    if (value.kind == K::MaskMaterial)
      return TaintLabel{K::MaskMaterial, {}, union_of(a.masks, b.masks)};
    if (value.kind == K::RawGradient || value.kind == K::Masked)
      return TaintLabel{K::Masked, value.grads, union_of(value.masks, mask.masks)};
    throw StructuralError("cannot mask a " + value.to_string() + " value");
  }

  if (detail::is_aggregand(a.kind) && detail::is_aggregand(b.kind))
    return TaintLabel{TaintLabel::Kind::PartialAggregate, union_of(a.grads, b.grads),
                      union_of(a.masks, b.masks)};

  throw StructuralError("no label rule for add(" + a.to_string() + ", " + b.to_string() + ")");
}

// A partial becomes the full aggregate once it carries every expected
// participant's gradient and its masks (if any) cover the complete zero-sum
// set, i.e. they cancel.
inline TaintLabel promote_if_full(TaintLabel label, const std::set<std::uint32_t>& participants,
                                  std::uint32_t mask_set_size) {
  if (!detail::is_aggregand(label.kind)) return label;
  if (label.grads != participants) return label;
  if (!label.masks.empty()) {
    if (label.masks.size() != mask_set_size) return label;
    // Mask indices run 0..n-1; a full cover means the set telescopes to zero.
    if (*label.masks.rbegin() != mask_set_size - 1) return label;
  }
  label.kind = TaintLabel::Kind::FullAggregate;
  return label;
}

}  // namespace veil
