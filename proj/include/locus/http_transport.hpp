// Copyright (c) 2026, The LOCUS Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "httplib.h"
#include "locus/generation.hpp"

namespace locus {

/// Chat-completions transport over HTTP(S). HTTPS needs the including
/// translation unit to define CPPHTTPLIB_OPENSSL_SUPPORT and link OpenSSL.
class HttpTransport final : public Transport {
 public:
  HttpTransport(const std::string& endpoint, std::string api_key,
                std::chrono::seconds timeout = std::chrono::seconds(120))
      : api_key_(std::move(api_key)), timeout_(timeout) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an absolute URL: " + endpoint);
    const auto path_start = endpoint.find('/', scheme_end + 3);
    base_ = endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
    const auto scheme = endpoint.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ConfigError("unsupported endpoint scheme: " + scheme);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (scheme == "https") throw ConfigError("this build has no TLS support; use an http:// endpoint");
#endif
  }

  TransportResponse post(const std::string& body, std::size_t, int) override {
    httplib::Client cli(base_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(path_, headers, body, "application/json");
    if (!res) return {0, {}, "transport error: " + httplib::to_string(res.error())};
    return {res->status, res->body, {}};
  }

  std::string describe() const override { return base_ + path_; }

 private:
  std::string base_;
  std::string path_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

}  // namespace locus
