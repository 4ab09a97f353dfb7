// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace embops::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // bad flags, bad config, missing inputs
inline constexpr int kExitRuntime = 3;  // client, training or internal failures

/// Runs one command line (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace embops::cli
