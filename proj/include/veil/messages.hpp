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
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "veil/errors.hpp"
#include "veil/taint.hpp"
#include "veil/tensors.hpp"

namespace veil {

enum class FrameType : std::uint8_t {
  MaskReq = 0,
  MaskGrant = 1,
  Update = 2,
  Partial = 3,
  ModelReady = 4,
  Control = 5,
};

inline const char* frame_type_name(FrameType t) {
  switch (t) {
    case FrameType::MaskReq: return "mask-req";
    case FrameType::MaskGrant: return "mask-grant";
    case FrameType::Update: return "update";
    case FrameType::Partial: return "partial";
    case FrameType::ModelReady: return "model-ready";
    case FrameType::Control: return "control";
  }
  return "unknown";
}

// Every inter-enclave message. The payload is an EncryptedBlob (wire form)
// under the channel pair's session key. The label byte exists only when
// taint tracking is on ("test build" framing); release framing omits it.
struct MessageFrame {
  FrameType type = FrameType::Control;
  std::optional<TaintLabel::Kind> label;
  std::vector<std::uint8_t> payload;

  std::size_t wire_size(bool with_label) const {
    return 4 + 1 + (with_label ? 1 : 0) + 8 + payload.size();
  }
};

inline constexpr char kFrameMagic[4] = {'C', 'M', 'S', 'G'};

// Frame layout: magic "CMSG" | type u8 | label u8 (test builds) |
// length u64 LE | payload bytes.
inline std::vector<std::uint8_t> serialize_frame(const MessageFrame& frame, bool with_label) {
  std::vector<std::uint8_t> out;
  out.reserve(frame.wire_size(with_label));
  out.insert(out.end(), kFrameMagic, kFrameMagic + 4);
  out.push_back(static_cast<std::uint8_t>(frame.type));
  if (with_label)
    out.push_back(static_cast<std::uint8_t>(frame.label.value_or(TaintLabel::Kind::Control)));
  wire::put_u64(out, frame.payload.size());
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

inline MessageFrame parse_frame(std::span<const std::uint8_t> bytes, bool with_label) {
  wire::Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kFrameMagic, 4) != 0) throw FormatError("bad frame magic");
  MessageFrame frame;
  const std::uint8_t type = r.u8();
  if (type > static_cast<std::uint8_t>(FrameType::Control))
    throw FormatError("unknown frame type " + std::to_string(type));
  frame.type = static_cast<FrameType>(type);
  if (with_label) {
    const std::uint8_t label = r.u8();
    if (label > static_cast<std::uint8_t>(TaintLabel::Kind::Control))
      throw FormatError("unknown label byte " + std::to_string(label));
    frame.label = static_cast<TaintLabel::Kind>(label);
  }
  const std::uint64_t len = r.u64();
  if (len != r.remaining()) throw FormatError("frame length does not match payload");
  auto payload = r.take(static_cast<std::size_t>(len));
  frame.payload.assign(payload.begin(), payload.end());
  return frame;
}

}  // namespace veil
