// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "embops/embedding.hpp"

namespace embops {

// The prior consumes 77 condition slots (the width of the original text
// context), then one timestep token, then the embedding being denoised.
inline constexpr std::size_t kConditionSlots = 77;
inline constexpr std::size_t kTimeTokenIndex = 77;
inline constexpr std::size_t kNoisedTokenIndex = 78;
inline constexpr std::size_t kSequenceLength = 79;

struct SlotCondition {
    std::size_t slot = 0;
    Embedding value;
};

/// Token layout fed to the prior. Unassigned slots are exactly zero.
class TokenSequence {
public:
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] std::size_t length() const noexcept { return kSequenceLength; }
    [[nodiscard]] std::size_t output_index() const noexcept { return kNoisedTokenIndex; }
    [[nodiscard]] int timestep() const noexcept { return timestep_; }

    [[nodiscard]] std::span<const double> slot(std::size_t i) const;
    [[nodiscard]] bool is_assigned(std::size_t i) const { return assigned_.at(i); }
    [[nodiscard]] std::span<const double> noised() const noexcept { return noised_; }
    [[nodiscard]] std::size_t assigned_count() const;

    friend TokenSequence build_sequence(std::span<const SlotCondition> conditions, int t, const Embedding& noised);

private:
    std::size_t dim_ = 0;
    int timestep_ = 0;
    std::vector<double> slots_;  // kConditionSlots * dim_, row-major
    std::array<bool, kConditionSlots> assigned_{};
    std::vector<double> noised_;
};

/// Places each condition at its slot, zero-fills the rest, then appends the
/// timestep and noised tokens. Rejects duplicate/out-of-range slots and
/// dimension mismatches.
TokenSequence build_sequence(std::span<const SlotCondition> conditions, int t, const Embedding& noised);

}  // namespace embops
