// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embops/embedding.hpp"
#include "embops/rng.hpp"
#include "embops/token_sequence.hpp"

namespace embops {

/// The five learned operators plus `identity`, which exists for tree tests.
enum class OperatorName { texturing, scene, union_op, instruct, composition, identity };

std::string to_string(OperatorName name);
/// Accepts canonical names and the tree-language short forms
/// (`texture`, `compose`, `id`).
OperatorName operator_from_string(const std::string& name);
const std::vector<OperatorName>& all_operators();

struct SlotEntry {
    std::string role;
    std::size_t slot = 0;
    SpaceTag space = SpaceTag::image;

    friend bool operator==(const SlotEntry&, const SlotEntry&) = default;
};

class SlotMap {
public:
    SlotMap() = default;
    explicit SlotMap(std::vector<SlotEntry> entries);

    [[nodiscard]] std::size_t arity() const noexcept { return entries_.size(); }
    [[nodiscard]] const std::vector<SlotEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] bool contains_slot(std::size_t slot) const;
    [[nodiscard]] const SlotEntry& entry_for_slot(std::size_t slot) const;

    friend bool operator==(const SlotMap&, const SlotMap&) = default;

private:
    std::vector<SlotEntry> entries_;
};

enum class LossKind { mse_only, mse_plus_similarity };
enum class SimilarityKind { cosine, raw_dot };

struct LossConfig {
    LossKind kind = LossKind::mse_only;
    double lambda = 0.3;
    SimilarityKind similarity = SimilarityKind::cosine;

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Training-time condition dropping. `joint` zeroes every slot at once (the
/// guidance branch); `per_slot` zeroes slots independently so the operator
/// learns to complete missing inputs.
struct DropConfig {
    double joint = 0.1;
    double per_slot = 0.0;

    void validate() const;
    friend bool operator==(const DropConfig&, const DropConfig&) = default;
};

struct OperatorSpec {
    OperatorName name = OperatorName::union_op;
    SlotMap slot_map;
    LossConfig loss;
    DropConfig drop;
    bool allows_null_conditions = false;

    /// Throws if the spec breaks the per-operator invariants.
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static OperatorSpec from_json(const nlohmann::json& j);

    friend bool operator==(const OperatorSpec&, const OperatorSpec&) = default;
};

inline constexpr std::size_t kCompositionCategories = 12;

OperatorSpec builtin_spec(OperatorName name);
OperatorSpec builtin_spec(const std::string& name);

struct LossAndGrad {
    double value = 0.0;
    std::vector<double> grad;  // dLoss/dprediction
};

/// mse = |target - prediction|^2 / d, plus lambda * (1 - cos(e_text, prediction))
/// for similarity-supervised operators.
double operator_loss(const OperatorSpec& spec, const Embedding& prediction, const Embedding& target,
                     const std::optional<Embedding>& e_text);

LossAndGrad operator_loss_grad(const OperatorSpec& spec, std::span<const double> prediction,
                               std::span<const double> target, const std::optional<Embedding>& e_text);

/// With probability p_drop replaces every condition by zeros; one draw per call.
std::vector<SlotCondition> drop_conditions(std::span<const SlotCondition> conditions, double p_drop, Rng& rng);

/// Joint drop followed (if not dropped) by independent per-slot drops.
std::vector<SlotCondition> drop_conditions(std::span<const SlotCondition> conditions, const DropConfig& drop,
                                           Rng& rng);

}  // namespace embops
