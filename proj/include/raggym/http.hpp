// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "raggym/util.hpp"

namespace raggym {

struct HttpEndpoint {
  std::string url;  // scheme://host[:port][/base-path]
  int timeout_ms = 30000;
  int max_retries = 3;
  int initial_backoff_ms = 250;
  double backoff_factor = 2.0;
  std::map<std::string, std::string> headers;
  bool operator==(const HttpEndpoint&) const = default;
};

void to_json(json& j, const HttpEndpoint& e);
void from_json(const json& j, HttpEndpoint& e);

/// POSTs `body` to `url`+`path` and returns the parsed JSON reply.
/// Connection failures, 429 and 5xx are retried with exponential backoff;
/// other statuses fail immediately. Throws gateway errors.
json post_json(const HttpEndpoint& endpoint, const std::string& path, const json& body);

}  // namespace raggym
