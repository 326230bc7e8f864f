// SPDX-License-Identifier: Apache-2.0
#include "raggym/http.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "raggym/error.hpp"

namespace raggym {

void to_json(json& j, const HttpEndpoint& e) {
  j = json{{"url", e.url},
           {"timeout_ms", e.timeout_ms},
           {"max_retries", e.max_retries},
           {"initial_backoff_ms", e.initial_backoff_ms},
           {"backoff_factor", e.backoff_factor},
           {"headers", e.headers}};
}

void from_json(const json& j, HttpEndpoint& e) {
  e.url = j.at("url").get<std::string>();
  e.timeout_ms = j.value("timeout_ms", 30000);
  e.max_retries = j.value("max_retries", 3);
  e.initial_backoff_ms = j.value("initial_backoff_ms", 250);
  e.backoff_factor = j.value("backoff_factor", 2.0);
  e.headers = j.value("headers", std::map<std::string, std::string>{});
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host:port
  std::string base;    // path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::config, "endpoint url lacks a scheme", url);
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  out.base = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.base.empty() && out.base.back() == '/') out.base.pop_back();
  return out;
}

}  // namespace

json post_json(const HttpEndpoint& endpoint, const std::string& path, const json& body) {
  const auto url = split_url(endpoint.url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::milliseconds(endpoint.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  for (const auto& [k, v] : endpoint.headers) headers.emplace(k, v);

  const std::string payload = body.dump();
  const std::string full_path = url.base + path;
  std::string last_error;
  double delay_ms = endpoint.initial_backoff_ms;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(delay_ms)));
      delay_ms *= endpoint.backoff_factor;
    }
    auto res = client.Post(full_path, headers, payload, "application/json");
    if (!res) {
      last_error = "connection error: " + httplib::to_string(res.error());
      spdlog::warn("POST {}{} attempt {} failed: {}", url.origin, full_path, attempt + 1, last_error);
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      spdlog::warn("POST {}{} attempt {} failed: {}", url.origin, full_path, attempt + 1, last_error);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorKind::gateway, "HTTP " + std::to_string(res->status) + ": " + res->body, endpoint.url);
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::gateway, std::string("malformed JSON reply: ") + e.what(), endpoint.url);
    }
  }
  throw Error(ErrorKind::gateway,
              "request failed after " + std::to_string(endpoint.max_retries + 1) + " attempts: " + last_error,
              endpoint.url);
}

}  // namespace raggym
