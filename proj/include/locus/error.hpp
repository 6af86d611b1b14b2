// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <stdexcept>
#include <string>

namespace locus {

/// Base class of every error thrown by the library. `kind()` is a short
/// machine-parsable tag ("data", "config", "provider", ...) that the CLI
/// prints as the error prefix.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

// Raised by LLM and embedding providers. `retriable()` distinguishes transient
// failures (timeouts, 429, 5xx) from permanent ones (authentication).
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, int status, bool retriable)
      : Error(status == 401 || status == 403 ? "auth" : "provider", what), status_(status), retriable_(retriable) {}

  int status() const noexcept { return status_; }
  bool retriable() const noexcept { return retriable_; }

 private:
  int status_;
  bool retriable_;
};

}  // namespace locus
