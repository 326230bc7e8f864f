// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace raggym {

enum class ErrorKind {
  invalid_input,
  invalid_action,
  environment,
  unscorable,
  ingestion,
  gateway,
  replay_miss,
  parse,
  annotation,
  scoring,
  training,
  config,
  io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure surfaced by the library. `context` carries the offending
/// value (a query, a request digest, a doc id) when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string context = {})
      : std::runtime_error(message), kind_(kind), context_(std::move(context)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& context() const noexcept { return context_; }

 private:
  ErrorKind kind_;
  std::string context_;
};

}  // namespace raggym
