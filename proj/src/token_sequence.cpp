// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/token_sequence.hpp"

#include <algorithm>
#include <string>

#include "embops/error.hpp"

namespace embops {

std::span<const double> TokenSequence::slot(std::size_t i) const {
    if (i >= kConditionSlots) {
        fail(ErrorKind::invalid_argument, "slot index " + std::to_string(i) + " out of range");
    }
    return std::span<const double>(slots_).subspan(i * dim_, dim_);
}

std::size_t TokenSequence::assigned_count() const {
    return static_cast<std::size_t>(std::count(assigned_.begin(), assigned_.end(), true));
}

TokenSequence build_sequence(std::span<const SlotCondition> conditions, int t, const Embedding& noised) {
    TokenSequence seq;
    seq.dim_ = noised.dim();
    seq.timestep_ = t;
    seq.slots_.assign(kConditionSlots * seq.dim_, 0.0);
    seq.noised_.assign(noised.values().begin(), noised.values().end());
    if (seq.dim_ == 0) {
        fail(ErrorKind::invalid_argument, "zero-dimensional noised embedding");
    }
    for (const auto& c : conditions) {
        if (c.slot >= kConditionSlots) {
            fail(ErrorKind::invalid_argument, "slot index " + std::to_string(c.slot) + " out of range [0,77)");
        }
        if (seq.assigned_[c.slot]) {
            fail(ErrorKind::invalid_argument, "duplicate slot index " + std::to_string(c.slot));
        }
        if (c.value.dim() != seq.dim_) {
            fail(ErrorKind::invalid_argument, "dimension mismatch in slot " + std::to_string(c.slot));
        }
        seq.assigned_[c.slot] = true;
        std::copy(c.value.values().begin(), c.value.values().end(),
                  seq.slots_.begin() + static_cast<std::ptrdiff_t>(c.slot * seq.dim_));
    }
    return seq;
}

}  // namespace embops
