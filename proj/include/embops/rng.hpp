// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace embops {

/// Seeded generator with portable, stateless distributions.
///
/// The standard distributions are implementation-defined and
/// `std::normal_distribution` caches a spare variate, which would break
/// bitwise checkpoint restoration. Everything here draws directly from the
/// engine so `state()`/`restore()` capture the full stream position.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller (one variate per call).
    double normal();
    std::vector<double> normal_vector(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }

    [[nodiscard]] std::string state() const;
    void restore(const std::string& state);

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace embops
