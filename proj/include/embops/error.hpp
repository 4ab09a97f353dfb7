// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace embops {

// Broad failure classes; the CLI maps them onto exit codes.
enum class ErrorKind {
    invalid_argument,  // caller violated a precondition
    format,            // malformed file or payload
    io,                // filesystem failure
    config,            // incompatible or invalid configuration
    client,            // external model client failure
    training,          // optimisation aborted
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) {
        throw Error(kind, what);
    }
}

}  // namespace embops
