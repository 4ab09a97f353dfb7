// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "embops/error.hpp"

namespace embops {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) {
        fail(ErrorKind::invalid_argument, "Rng::below(0)");
    }
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> Rng::normal_vector(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal();
    return v;
}

std::string Rng::state() const {
    std::ostringstream ss;
    ss << engine_;
    return ss.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream ss(state);
    ss >> engine_;
    if (!ss) {
        fail(ErrorKind::format, "corrupt rng state");
    }
}

}  // namespace embops
