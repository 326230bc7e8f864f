// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace raggym {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the raggym command line: index | collect | run |
/// train-critic | eval | report | replay. Failures print one JSON object
/// {"error": {...}} on stderr and return a nonzero exit code.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace raggym
