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
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "veil/config.hpp"
#include "veil/crypto.hpp"
#include "veil/errors.hpp"
#include "veil/messages.hpp"
#include "veil/taint.hpp"

namespace veil {

// Deterministic discrete-event queue. Ties on time break by insertion
// sequence, so the whole trace is a pure function of (config, seed).
class EventQueue {
 public:
  void schedule(Tick at, std::function<void()> fn) {
    events_.push(Event{at, next_seq_++, std::move(fn)});
  }

  Tick now() const { return now_; }

  void run() {
    while (!events_.empty()) {
      Event ev = std::move(const_cast<Event&>(events_.top()));
      events_.pop();
      now_ = ev.at;
      ev.fn();
    }
  }

 private:
  struct Event {
    Tick at;
    std::uint64_t seq;
    std::function<void()> fn;

    bool operator>(const Event& o) const {
      return at != o.at ? at > o.at : seq > o.seq;
    }
  };

  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t next_seq_ = 0;
  Tick now_ = 0;
};

enum class Phase : std::uint8_t { Training = 0, Masking = 1, Aggregation = 2, Recursive = 3 };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Training: return "training";
    case Phase::Masking: return "masking";
    case Phase::Aggregation: return "aggregation";
    case Phase::Recursive: return "recursive";
  }
  return "unknown";
}

struct MetricsRecord {
  std::uint32_t iteration = 0;
  std::string enclave_id;
  Phase phase = Phase::Training;
  Tick duration = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_recv = 0;
  std::uint64_t messages = 0;  // frames sent during this phase
};

// Accumulates per-(iteration, enclave, phase) counters as the run proceeds.
class MetricsSink {
 public:
  MetricsRecord& bucket(std::uint32_t iteration, const std::string& enclave_id, Phase phase) {
    const auto key = std::make_tuple(iteration, enclave_id, static_cast<int>(phase));
    auto it = buckets_.find(key);
    if (it == buckets_.end()) {
      it = buckets_.emplace(key, MetricsRecord{iteration, enclave_id, phase, 0, 0, 0, 0}).first;
    }
    return it->second;
  }

  std::vector<MetricsRecord> records() const {
    std::vector<MetricsRecord> out;
    out.reserve(buckets_.size());
    for (const auto& [_, rec] : buckets_) out.push_back(rec);
    return out;  // map order == (iteration, enclave_id, phase)
  }

 private:
  std::map<std::tuple<std::uint32_t, std::string, int>, MetricsRecord> buckets_;
};

// CSV with the exact header
//   iteration,enclave_id,phase,duration,bytes_sent,bytes_recv,messages
// rows sorted by (iteration, enclave_id, phase).
inline std::string metrics_to_csv(const std::vector<MetricsRecord>& records) {
  std::vector<MetricsRecord> sorted = records;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.iteration, a.enclave_id, a.phase) <
           std::tie(b.iteration, b.enclave_id, b.phase);
  });
  std::ostringstream out;
  out << "iteration,enclave_id,phase,duration,bytes_sent,bytes_recv,messages\n";
  for (const auto& r : sorted) {
    out << r.iteration << ',' << r.enclave_id << ',' << phase_name(r.phase) << ',' << r.duration
        << ',' << r.bytes_sent << ',' << r.bytes_recv << ',' << r.messages << '\n';
  }
  return out.str();
}

inline void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write metrics to " + path);
  f << metrics_to_csv(records);
}

// One delivered (or dropped) frame. The payload hash stands in for the bytes
// so whole traces stay comparable without holding every frame.
struct DeliveryRecord {
  Tick sent_at = 0;
  Tick delivered_at = 0;
  std::string from;
  std::string to;
  FrameType type = FrameType::Control;
  std::optional<TaintLabel::Kind> label;
  std::uint64_t bytes = 0;
  std::uint32_t iteration = 0;
  bool dropped = false;
  std::string frame_digest;       // hex sha256 of the wire bytes
  std::vector<std::uint8_t> wire;  // full frame bytes, for sentinel scans

  std::string to_line() const {
    std::ostringstream out;
    out << sent_at << '>' << delivered_at << ' ' << from << "->" << to << ' '
        << frame_type_name(type) << ' ' << bytes << 'B'
        << " it" << iteration << (dropped ? " dropped " : " ") << frame_digest;
    return out.str();
  }
};

struct TaintEvent {
  std::uint32_t iteration = 0;
  std::string from;
  std::string to;
  FrameType type = FrameType::Control;
  TaintLabel label;
};

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  ensure_sodium();
  std::array<std::uint8_t, 32> digest;
  crypto_hash_sha256(digest.data(), bytes.data(), bytes.size());
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(16);
  for (int i = 0; i < 8; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// Metrics buckets for frame bytes key off the frame type alone; time charges
// are the actors' business.
inline Phase phase_of_frame(FrameType type) {
  switch (type) {
    case FrameType::MaskReq:
    case FrameType::MaskGrant: return Phase::Masking;
    case FrameType::Update: return Phase::Aggregation;
    case FrameType::Partial: return Phase::Recursive;
    case FrameType::ModelReady:
    case FrameType::Control: return Phase::Training;
  }
  return Phase::Training;
}

// Simulated network. Control-plane frames (mask requests/grants, model-ready,
// control) are free in simulated time; data-plane frames (updates, partials)
// pay latency + size/bandwidth. Per channel pair delivery is FIFO: a later
// send never overtakes an earlier one.
class Net {
 public:
  using Handler = std::function<void(const std::string& from, const MessageFrame&, Tick)>;

  Net(EventQueue& queue, const LatencyModel& latency, bool label_framing, MetricsSink& metrics,
      std::vector<TaintEvent>* taint_log)
      : queue_(queue),
        latency_(latency),
        label_framing_(label_framing),
        metrics_(metrics),
        taint_log_(taint_log) {}

  void register_actor(const std::string& id, Handler handler) {
    handlers_[id] = std::move(handler);
    crashed_.erase(id);
  }

  void mark_crashed(const std::string& id) { crashed_.insert(id); }
  bool is_crashed(const std::string& id) const { return crashed_.count(id) > 0; }
  void clear_crashed() { crashed_.clear(); }

  static bool data_plane(FrameType t) {
    return t == FrameType::Update || t == FrameType::Partial;
  }

  // Sends `frame` at `send_time` (the sender's local clock). The rich label
  // feeds the taint log; the frame itself carries at most the label byte.
  void send(const std::string& from, const std::string& to, MessageFrame frame,
            const TaintLabel& rich_label, Tick send_time, std::uint32_t iteration) {
    const auto bytes = serialize_frame(frame, label_framing_);
    const std::uint64_t size = bytes.size();

    auto& sent_bucket = metrics_.bucket(iteration, from, phase_of_frame(frame.type));
    sent_bucket.bytes_sent += size;
    sent_bucket.messages += 1;
    total_sent_ += size;

    Tick deliver_at = send_time + (data_plane(frame.type) ? latency_.transit(size) : 0);
    auto& channel_floor = fifo_floor_[{from, to}];
    if (deliver_at < channel_floor) deliver_at = channel_floor;
    channel_floor = deliver_at;

    DeliveryRecord rec{send_time, deliver_at, from,      to,
                       frame.type, frame.label, size,     iteration,
                       false,      sha256_hex(bytes),    bytes};
    queue_.schedule(deliver_at, [this, rec, frame = std::move(frame), rich_label,
                                 iteration]() mutable {
      --in_flight_;
      if (crashed_.count(rec.to) || !handlers_.count(rec.to)) {
        rec.dropped = true;
        ++dropped_;
        dropped_bytes_ += rec.bytes;
        trace_.push_back(rec);
        return;
      }
      trace_.push_back(rec);
      auto& recv_bucket = metrics_.bucket(iteration, rec.to, phase_of_frame(frame.type));
      recv_bucket.bytes_recv += rec.bytes;
      total_received_ += rec.bytes;
      if (taint_log_)
        taint_log_->push_back(TaintEvent{iteration, rec.from, rec.to, frame.type, rich_label});
      handlers_.at(rec.to)(rec.from, frame, rec.delivered_at);
    });
    ++in_flight_;
  }

  const std::vector<DeliveryRecord>& trace() const { return trace_; }
  std::uint64_t total_bytes_sent() const { return total_sent_; }
  std::uint64_t total_bytes_received() const { return total_received_; }
  std::uint64_t dropped_frames() const { return dropped_; }
  std::uint64_t dropped_bytes() const { return dropped_bytes_; }
  std::uint64_t in_flight() const { return in_flight_; }
  bool label_framing() const { return label_framing_; }

 private:
  EventQueue& queue_;
  LatencyModel latency_;
  bool label_framing_;
  MetricsSink& metrics_;
  std::vector<TaintEvent>* taint_log_;
  std::map<std::string, Handler> handlers_;
  std::set<std::string> crashed_;
  std::map<std::pair<std::string, std::string>, Tick> fifo_floor_;
  std::vector<DeliveryRecord> trace_;
  std::uint64_t total_sent_ = 0;
  std::uint64_t total_received_ = 0;
  std::uint64_t dropped_ = 0;
  std::uint64_t dropped_bytes_ = 0;
  std::uint64_t in_flight_ = 0;
};

}  // namespace veil
