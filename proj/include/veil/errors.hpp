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

#include <stdexcept>
#include <string>

namespace veil {

// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape/domain mismatch between vectors, or malformed structural input.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A numeric input outside its contracted range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized payload (bad magic, truncation, garbage fields).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value; rejected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Authenticated decryption failure. WrongKey and Tampered are distinct:
// the former is a key-id mismatch, the latter a failed authentication tag.
class AuthError : public Error {
 public:
  enum class Kind { WrongKey, Tampered };

  AuthError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Lookup of a key that was never stored.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Immutable-put collision with different content, or key-id reuse.
class ConflictError : public Error {
 public:
  using Error::Error;
};

// A secret release (or rule) that the policy forbids. Carries the id of the
// violated rule when one is identifiable.
class PolicyError : public Error {
 public:
  explicit PolicyError(const std::string& what, std::string rule_id = "")
      : Error(what), rule_id_(std::move(rule_id)) {}
  const std::string& rule_id() const { return rule_id_; }

 private:
  std::string rule_id_;
};

// The pre-generated mask pool has no set left for the requested iteration.
class PoolExhaustedError : public Error {
 public:
  using Error::Error;
};

// A leader or the aggregator gave up waiting for a partial.
class AggregationIncompleteError : public Error {
 public:
  using Error::Error;
};

// Test hook tripped: a raw (unmasked) value reached a forbidden party.
// Must never fire in a correct run.
class PrivacyViolationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace veil
