#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <string>
#include <thread>

#include "cirf/error.hpp"

namespace cirf {

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{60};
};

struct Endpoint {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // e.g. "/v1", may be empty

  static Endpoint parse(const std::string& base_url) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos)
      throw ConfigError("base URL must include a scheme: " + base_url);
    const auto path_begin = base_url.find('/', scheme_end + 3);
    Endpoint e;
    e.origin = base_url.substr(0, path_begin);
    if (path_begin != std::string::npos) {
      e.path_prefix = base_url.substr(path_begin);
      while (!e.path_prefix.empty() && e.path_prefix.back() == '/') e.path_prefix.pop_back();
    }
    return e;
  }
};

/// POSTs a JSON body and returns the parsed JSON response. Transport failures,
/// 429 and 5xx are retried with exponential backoff; other statuses fail fast.
inline nlohmann::json post_json(const std::string& base_url, const std::string& path,
                                const nlohmann::json& body, const std::string& api_key,
                                const RetryPolicy& policy) {
  const Endpoint ep = Endpoint::parse(base_url);
  httplib::Client client(ep.origin);
  const auto secs = static_cast<time_t>(policy.timeout.count());
  client.set_connection_timeout(secs, 0);
  client.set_read_timeout(secs, 0);
  client.set_write_timeout(secs, 0);
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  const std::string payload = body.dump();
  auto backoff = policy.initial_backoff;
  int last_status = 0;
  std::string last_detail;
  bool timed_out = false;
  const int attempts = std::max(1, policy.attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = client.Post(ep.path_prefix + path, headers, payload, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded()) throw HttpError(res->status, attempt, "response is not JSON");
      return j;
    }
    if (res) {
      last_status = res->status;
      last_detail = res->body.substr(0, 200);
      timed_out = false;
      if (res->status != 429 && res->status < 500)
        throw HttpError(res->status, attempt, last_detail);
    } else {
      last_status = 0;
      last_detail = httplib::to_string(res.error());
      timed_out = res.error() == httplib::Error::Read || res.error() == httplib::Error::Write ||
                  res.error() == httplib::Error::ConnectionTimeout;
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  if (timed_out) throw TimeoutError(last_detail + " after " + std::to_string(attempts) + " attempt(s)");
  throw HttpError(last_status, attempts, last_detail);
}

}  // namespace cirf
