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
#include <cctype>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "veil/crypto.hpp"
#include "veil/errors.hpp"

namespace veil {

// Model checkpoint version. Ordered lexicographically by (epoch, batch).
struct ModelVersion {
  std::uint32_t epoch = 0;
  std::uint32_t batch = 0;

  auto operator<=>(const ModelVersion&) const = default;

  std::string to_string() const {
    return "e" + std::to_string(epoch) + "-t" + std::to_string(batch);
  }
};

// Address of a blob in the untrusted store. (namespace, version) is unique;
// puts are immutable.
struct BlobKey {
  enum class Kind : std::uint8_t { Data = 0, Model = 1, Mask = 2, Metrics = 3 };

  Kind kind = Kind::Data;
  std::uint32_t owner = 0;      // Data
  std::uint32_t set = 0;        // Mask
  std::uint32_t index = 0;      // Mask
  ModelVersion version{};       // Model: (e,t); Data/Metrics: scalar in .batch

  static BlobKey data(std::uint32_t owner, std::uint32_t version = 0) {
    BlobKey k;
    k.kind = Kind::Data;
    k.owner = owner;
    k.version.batch = version;
    return k;
  }
  static BlobKey model(ModelVersion v) {
    BlobKey k;
    k.kind = Kind::Model;
    k.version = v;
    return k;
  }
  static BlobKey mask(std::uint32_t set, std::uint32_t index) {
    BlobKey k;
    k.kind = Kind::Mask;
    k.set = set;
    k.index = index;
    return k;
  }
  static BlobKey metrics(std::uint32_t version) {
    BlobKey k;
    k.kind = Kind::Metrics;
    k.version.batch = version;
    return k;
  }

  auto operator<=>(const BlobKey&) const = default;

  // Filesystem-safe name used by the directory backend.
  std::string to_string() const {
    switch (kind) {
      case Kind::Data:
        return "data-o" + std::to_string(owner) + "-v" + std::to_string(version.batch);
      case Kind::Model:
        return "model-" + version.to_string();
      case Kind::Mask:
        return "mask-s" + std::to_string(set) + "-i" + std::to_string(index);
      case Kind::Metrics:
        return "metrics-v" + std::to_string(version.batch);
    }
    return "invalid";
  }
};

// Untrusted blob store. Thread-safe; linearizable per key. Holds only
// EncryptedBlobs, so a scan of its raw contents must never turn up
// plaintext (tests plant sentinels to check exactly that).
class BlobStore {
 public:
  virtual ~BlobStore() = default;

  // Immutable put. Re-putting identical bytes is allowed (crash/retry);
  // different bytes under an existing key is a conflict.
  virtual void put(const BlobKey& key, const EncryptedBlob& blob) = 0;
  virtual EncryptedBlob get(const BlobKey& key) const = 0;
  virtual bool contains(const BlobKey& key) const = 0;
  // Keys of one namespace, sorted ascending.
  virtual std::vector<BlobKey> list(BlobKey::Kind kind) const = 0;
  // Raw stored bytes of every blob, for sentinel scans.
  virtual std::vector<std::vector<std::uint8_t>> dump_all_bytes() const = 0;

  // Highest (epoch, batch) model checkpoint.
  std::pair<BlobKey, EncryptedBlob> latest_model() const {
    auto keys = list(BlobKey::Kind::Model);
    if (keys.empty()) throw NotFoundError("no model versions stored");
    return {keys.back(), get(keys.back())};
  }
};

class MemoryBlobStore : public BlobStore {
 public:
  void put(const BlobKey& key, const EncryptedBlob& blob) override {
    std::lock_guard lock(mu_);
    auto it = blobs_.find(key);
    if (it != blobs_.end()) {
      if (it->second == blob) return;  // idempotent re-put
      throw ConflictError("blob '" + key.to_string() + "' already stored with different bytes");
    }
    blobs_.emplace(key, blob);
  }

  EncryptedBlob get(const BlobKey& key) const override {
    std::lock_guard lock(mu_);
    auto it = blobs_.find(key);
    if (it == blobs_.end()) throw NotFoundError("no blob '" + key.to_string() + "'");
    return it->second;
  }

  bool contains(const BlobKey& key) const override {
    std::lock_guard lock(mu_);
    return blobs_.count(key) > 0;
  }

  std::vector<BlobKey> list(BlobKey::Kind kind) const override {
    std::lock_guard lock(mu_);
    std::vector<BlobKey> out;
    for (const auto& [k, _] : blobs_)
      if (k.kind == kind) out.push_back(k);
    return out;  // map iteration is already sorted
  }

  std::vector<std::vector<std::uint8_t>> dump_all_bytes() const override {
    std::lock_guard lock(mu_);
    std::vector<std::vector<std::uint8_t>> out;
    out.reserve(blobs_.size());
    for (const auto& [_, blob] : blobs_) out.push_back(serialize_blob(blob));
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::map<BlobKey, EncryptedBlob> blobs_;
};

// One file per blob, filename = BlobKey::to_string(), bytes = the crypto
// wire layout. Useful for poking at a job's artifacts after a run.
class DirBlobStore : public BlobStore {
 public:
  explicit DirBlobStore(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw IoError("cannot create blob directory " + root_.string());
  }

  void put(const BlobKey& key, const EncryptedBlob& blob) override {
    std::lock_guard lock(mu_);
    const auto path = root_ / key.to_string();
    const auto bytes = serialize_blob(blob);
    if (std::filesystem::exists(path)) {
      if (read_file(path) == bytes) return;
      throw ConflictError("blob '" + key.to_string() + "' already stored with different bytes");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  }

  EncryptedBlob get(const BlobKey& key) const override {
    std::lock_guard lock(mu_);
    const auto path = root_ / key.to_string();
    if (!std::filesystem::exists(path))
      throw NotFoundError("no blob '" + key.to_string() + "'");
    return parse_blob(read_file(path));
  }

  bool contains(const BlobKey& key) const override {
    std::lock_guard lock(mu_);
    return std::filesystem::exists(root_ / key.to_string());
  }

  std::vector<BlobKey> list(BlobKey::Kind kind) const override {
    std::lock_guard lock(mu_);
    std::vector<BlobKey> out;
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
      auto key = parse_key(entry.path().filename().string());
      if (key && key->kind == kind) out.push_back(*key);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<std::vector<std::uint8_t>> dump_all_bytes() const override {
    std::lock_guard lock(mu_);
    std::vector<std::vector<std::uint8_t>> out;
    for (const auto& entry : std::filesystem::directory_iterator(root_))
      out.push_back(read_file(entry.path()));
    return out;
  }

 private:
  static std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
  }

  // Inverse of BlobKey::to_string(); returns nullopt for foreign files.
  static std::optional<BlobKey> parse_key(const std::string& name) {
    auto num_after = [&](const std::string& prefix, std::size_t& pos) -> std::optional<std::uint32_t> {
      if (name.compare(pos, prefix.size(), prefix) != 0) return std::nullopt;
      pos += prefix.size();
      std::size_t end = pos;
      while (end < name.size() && std::isdigit(static_cast<unsigned char>(name[end]))) ++end;
      if (end == pos) return std::nullopt;
      std::uint32_t v = static_cast<std::uint32_t>(std::stoul(name.substr(pos, end - pos)));
      pos = end;
      return v;
    };
    std::size_t pos = 0;
    if (name.rfind("data-", 0) == 0) {
      pos = 5;
      auto owner = num_after("o", pos);
      if (!owner) return std::nullopt;
      auto ver = num_after("-v", pos);
      if (!ver || pos != name.size()) return std::nullopt;
      return BlobKey::data(*owner, *ver);
    }
    if (name.rfind("model-", 0) == 0) {
      pos = 6;
      auto e = num_after("e", pos);
      if (!e) return std::nullopt;
      auto t = num_after("-t", pos);
      if (!t || pos != name.size()) return std::nullopt;
      return BlobKey::model({*e, *t});
    }
    if (name.rfind("mask-", 0) == 0) {
      pos = 5;
      auto set = num_after("s", pos);
      if (!set) return std::nullopt;
      auto index = num_after("-i", pos);
      if (!index || pos != name.size()) return std::nullopt;
      return BlobKey::mask(*set, *index);
    }
    if (name.rfind("metrics-", 0) == 0) {
      pos = 8;
      auto ver = num_after("v", pos);
      if (!ver || pos != name.size()) return std::nullopt;
      return BlobKey::metrics(*ver);
    }
    return std::nullopt;
  }

  std::filesystem::path root_;
  mutable std::mutex mu_;
};

}  // namespace veil
