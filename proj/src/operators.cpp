// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/operators.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "embops/error.hpp"

namespace embops {

std::string to_string(OperatorName name) {
    switch (name) {
        case OperatorName::texturing: return "texturing";
        case OperatorName::scene: return "scene";
        case OperatorName::union_op: return "union";
        case OperatorName::instruct: return "instruct";
        case OperatorName::composition: return "composition";
        case OperatorName::identity: return "identity";
    }
    return "unknown";
}

OperatorName operator_from_string(const std::string& name) {
    if (name == "texturing" || name == "texture") return OperatorName::texturing;
    if (name == "scene") return OperatorName::scene;
    if (name == "union") return OperatorName::union_op;
    if (name == "instruct") return OperatorName::instruct;
    if (name == "composition" || name == "compose") return OperatorName::composition;
    if (name == "identity" || name == "id") return OperatorName::identity;
    fail(ErrorKind::invalid_argument, "unknown operator '" + name + "'");
}

const std::vector<OperatorName>& all_operators() {
    static const std::vector<OperatorName> ops{OperatorName::texturing, OperatorName::scene,
                                               OperatorName::union_op,  OperatorName::instruct,
                                               OperatorName::composition, OperatorName::identity};
    return ops;
}

SlotMap::SlotMap(std::vector<SlotEntry> entries) : entries_(std::move(entries)) {
    std::set<std::size_t> seen;
    for (const auto& e : entries_) {
        if (e.slot >= kConditionSlots) {
            fail(ErrorKind::config, "slot map index " + std::to_string(e.slot) + " out of range");
        }
        if (!seen.insert(e.slot).second) {
            fail(ErrorKind::config, "slot map index " + std::to_string(e.slot) + " assigned twice");
        }
    }
}

bool SlotMap::contains_slot(std::size_t slot) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const SlotEntry& e) { return e.slot == slot; });
}

const SlotEntry& SlotMap::entry_for_slot(std::size_t slot) const {
    for (const auto& e : entries_) {
        if (e.slot == slot) return e;
    }
    fail(ErrorKind::invalid_argument, "slot " + std::to_string(slot) + " not in slot map");
}

void DropConfig::validate() const {
    require(joint >= 0.0 && joint <= 1.0, ErrorKind::config, "joint drop probability must be in [0,1]");
    require(per_slot >= 0.0 && per_slot <= 1.0, ErrorKind::config, "per-slot drop probability must be in [0,1]");
}

void OperatorSpec::validate() const {
    drop.validate();
    const bool similarity = loss.kind == LossKind::mse_plus_similarity;
    if ((name == OperatorName::instruct) != similarity) {
        fail(ErrorKind::config, "operator '" + to_string(name) +
                                    "': only instruct uses the similarity-augmented loss");
    }
    const std::size_t expected = name == OperatorName::composition ? kCompositionCategories
                                 : name == OperatorName::identity  ? 1
                                                                   : 2;
    if (slot_map.arity() != expected) {
        fail(ErrorKind::config, "operator '" + to_string(name) + "' must have arity " + std::to_string(expected));
    }
    require(std::isfinite(loss.lambda) && loss.lambda >= 0.0, ErrorKind::config, "lambda must be >= 0");
}

namespace {

std::string loss_name(LossKind k) { return k == LossKind::mse_only ? "mse_only" : "mse_plus_similarity"; }

}  // namespace

nlohmann::json OperatorSpec::to_json() const {
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& e : slot_map.entries()) {
        slots.push_back({{"role", e.role}, {"slot", e.slot}, {"space", embops::to_string(e.space)}});
    }
    return {{"name", embops::to_string(name)},
            {"slot_map", slots},
            {"loss", loss_name(loss.kind)},
            {"lambda", loss.lambda},
            {"similarity", loss.similarity == SimilarityKind::cosine ? "cosine" : "raw_dot"},
            {"p_drop", drop.joint},
            {"per_slot_drop", drop.per_slot},
            {"allows_null_conditions", allows_null_conditions}};
}

OperatorSpec OperatorSpec::from_json(const nlohmann::json& j) {
    try {
        OperatorSpec s;
        s.name = operator_from_string(j.at("name").get<std::string>());
        std::vector<SlotEntry> entries;
        for (const auto& e : j.at("slot_map")) {
            entries.push_back(SlotEntry{e.at("role").get<std::string>(), e.at("slot").get<std::size_t>(),
                                        space_tag_from_string(e.value("space", std::string("image")))});
        }
        s.slot_map = SlotMap(std::move(entries));
        const auto loss = j.value("loss", std::string("mse_only"));
        require(loss == "mse_only" || loss == "mse_plus_similarity", ErrorKind::config, "unknown loss '" + loss + "'");
        s.loss.kind = loss == "mse_only" ? LossKind::mse_only : LossKind::mse_plus_similarity;
        s.loss.lambda = j.value("lambda", 0.3);
        s.loss.similarity = j.value("similarity", std::string("cosine")) == "raw_dot" ? SimilarityKind::raw_dot
                                                                                       : SimilarityKind::cosine;
        s.drop.joint = j.value("p_drop", 0.1);
        s.drop.per_slot = j.value("per_slot_drop", 0.0);
        s.allows_null_conditions = j.value("allows_null_conditions", false);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("bad operator spec: ") + e.what());
    }
}

namespace {

// ATR label order restricted to garments and accessories.
const std::vector<std::string>& composition_roles() {
    static const std::vector<std::string> roles{"hat",   "hair",  "sunglasses", "upper_clothes", "skirt",    "pants",
                                                "dress", "belt",  "left_shoe",  "right_shoe",    "bag",      "scarf"};
    return roles;
}

}  // namespace

OperatorSpec builtin_spec(OperatorName name) {
    OperatorSpec s;
    s.name = name;
    switch (name) {
        case OperatorName::texturing:
            s.slot_map = SlotMap({{"object", 0, SpaceTag::image}, {"texture", 1, SpaceTag::image}});
            s.drop.per_slot = 0.1;
            s.allows_null_conditions = true;
            break;
        case OperatorName::scene:
            s.slot_map = SlotMap({{"object", 0, SpaceTag::image}, {"background", 1, SpaceTag::image}});
            break;
        case OperatorName::union_op:
            s.slot_map = SlotMap({{"a", 0, SpaceTag::image}, {"b", 1, SpaceTag::image}});
            break;
        case OperatorName::instruct:
            s.slot_map = SlotMap({{"object", 0, SpaceTag::image}, {"adjective", 1, SpaceTag::text}});
            s.loss.kind = LossKind::mse_plus_similarity;
            break;
        case OperatorName::composition: {
            std::vector<SlotEntry> entries;
            const auto& roles = composition_roles();
            for (std::size_t k = 0; k < kCompositionCategories; ++k) entries.push_back({roles[k], k, SpaceTag::image});
            s.slot_map = SlotMap(std::move(entries));
            s.allows_null_conditions = true;  // absent garments are zero slots
            break;
        }
        case OperatorName::identity:
            s.slot_map = SlotMap({{"input", 0, SpaceTag::image}});
            break;
    }
    s.validate();
    return s;
}

OperatorSpec builtin_spec(const std::string& name) { return builtin_spec(operator_from_string(name)); }

LossAndGrad operator_loss_grad(const OperatorSpec& spec, std::span<const double> prediction,
                               std::span<const double> target, const std::optional<Embedding>& e_text) {
    const std::size_t d = prediction.size();
    require(target.size() == d, ErrorKind::invalid_argument, "prediction/target dimension mismatch");
    LossAndGrad out;
    out.grad.assign(d, 0.0);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = prediction[i] - target[i];
        out.value += diff * diff * inv_d;
        out.grad[i] = 2.0 * diff * inv_d;
    }
    if (spec.loss.kind == LossKind::mse_only) {
        return out;
    }
    if (!e_text) {
        fail(ErrorKind::invalid_argument, "operator '" + to_string(spec.name) + "' requires a text embedding");
    }
    require(e_text->dim() == d, ErrorKind::invalid_argument, "text embedding dimension mismatch");
    const double lambda = spec.loss.lambda;
    double dp = 0.0;
    double pp = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        dp += (*e_text)[i] * prediction[i];
        pp += prediction[i] * prediction[i];
    }
    if (spec.loss.similarity == SimilarityKind::raw_dot) {
        out.value += lambda * (1.0 - dp);
        for (std::size_t i = 0; i < d; ++i) out.grad[i] -= lambda * (*e_text)[i];
        return out;
    }
    const double np = std::sqrt(pp);
    const double ne = e_text->norm();
    if (np == 0.0 || ne == 0.0) {
        fail(ErrorKind::invalid_argument, "degenerate embedding in similarity loss");
    }
    const double cos = dp / (np * ne);
    out.value += lambda * (1.0 - cos);
    for (std::size_t i = 0; i < d; ++i) {
        const double dcos = (*e_text)[i] / (np * ne) - cos * prediction[i] / pp;
        out.grad[i] -= lambda * dcos;
    }
    return out;
}

double operator_loss(const OperatorSpec& spec, const Embedding& prediction, const Embedding& target,
                     const std::optional<Embedding>& e_text) {
    if (spec.loss.kind == LossKind::mse_plus_similarity && !e_text) {
        fail(ErrorKind::invalid_argument, "operator '" + to_string(spec.name) + "' requires a text embedding");
    }
    if (spec.loss.kind == LossKind::mse_only && e_text) {
        fail(ErrorKind::invalid_argument, "operator '" + to_string(spec.name) + "' takes no text embedding");
    }
    return operator_loss_grad(spec, prediction.values(), target.values(), e_text).value;
}

std::vector<SlotCondition> drop_conditions(std::span<const SlotCondition> conditions, double p_drop, Rng& rng) {
    require(p_drop >= 0.0 && p_drop <= 1.0, ErrorKind::invalid_argument, "p_drop must be in [0,1]");
    std::vector<SlotCondition> out(conditions.begin(), conditions.end());
    if (rng.bernoulli(p_drop)) {
        for (auto& c : out) c.value = Embedding::zeros(c.value.dim(), c.value.space());
    }
    return out;
}

std::vector<SlotCondition> drop_conditions(std::span<const SlotCondition> conditions, const DropConfig& drop,
                                           Rng& rng) {
    drop.validate();
    const bool joint = rng.bernoulli(drop.joint);
    std::vector<SlotCondition> out(conditions.begin(), conditions.end());
    for (auto& c : out) {
        const bool zero = joint || (drop.per_slot > 0.0 && rng.bernoulli(drop.per_slot));
        if (zero) c.value = Embedding::zeros(c.value.dim(), c.value.space());
    }
    return out;
}

}  // namespace embops
