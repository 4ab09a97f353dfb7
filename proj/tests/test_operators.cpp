// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "embops/operators.hpp"
#include "support.hpp"

using namespace embops;

TEST_CASE("builtin specs: slot maps") {
    const auto tex = builtin_spec("texturing");
    CHECK(tex.slot_map.arity() == 2);
    CHECK(tex.slot_map.entries()[0].role == "object");
    CHECK(tex.slot_map.entries()[0].slot == 0);
    CHECK(tex.slot_map.entries()[1].role == "texture");
    CHECK(tex.slot_map.entries()[1].slot == 1);
    for (const auto& e : tex.slot_map.entries()) CHECK(e.space == SpaceTag::image);

    const auto scene = builtin_spec(OperatorName::scene);
    CHECK(scene.slot_map.entries()[1].role == "background");
    const auto uni = builtin_spec(OperatorName::union_op);
    CHECK(uni.slot_map.entries()[0].role == "a");
    CHECK(uni.slot_map.entries()[1].role == "b");

    const auto ins = builtin_spec(OperatorName::instruct);
    CHECK(ins.slot_map.entries()[0].space == SpaceTag::image);
    CHECK(ins.slot_map.entries()[1].space == SpaceTag::text);
    CHECK(ins.loss.kind == LossKind::mse_plus_similarity);

    const auto comp = builtin_spec(OperatorName::composition);
    CHECK(comp.slot_map.arity() == 12);
    for (std::size_t k = 0; k < 12; ++k) CHECK(comp.slot_map.entries()[k].slot == k);
}

TEST_CASE("builtin specs: per-operator invariants") {
    for (const auto op : all_operators()) {
        const auto s = builtin_spec(op);
        CHECK_NOTHROW(s.validate());
        CHECK((s.loss.kind == LossKind::mse_plus_similarity) == (op == OperatorName::instruct));
        const std::size_t want = op == OperatorName::composition ? 12 : op == OperatorName::identity ? 1 : 2;
        CHECK(s.slot_map.arity() == want);
        CHECK(OperatorSpec::from_json(s.to_json()) == s);
        CHECK(operator_from_string(to_string(op)) == op);
    }
    CHECK(builtin_spec(OperatorName::texturing).drop.per_slot == 0.1);
    CHECK(builtin_spec(OperatorName::union_op).drop.joint == 0.1);
    CHECK_THROWS_WITH(builtin_spec("sharpen"), doctest::Contains("unknown operator"));
}

TEST_CASE("slot map rejects bad indices") {
    CHECK_THROWS(SlotMap({{"a", 0, SpaceTag::image}, {"b", 0, SpaceTag::image}}));
    CHECK_THROWS(SlotMap({{"a", 77, SpaceTag::image}}));
    auto bad = builtin_spec(OperatorName::instruct);
    bad.loss.kind = LossKind::mse_only;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("operator loss: reference values") {
    const auto uni = builtin_spec(OperatorName::union_op);
    CHECK(operator_loss(uni, Embedding({1, 1}), Embedding({0, 0}), std::nullopt) == 1.0);
    CHECK(operator_loss(uni, Embedding({0.3, -2}), Embedding({0.3, -2}), std::nullopt) == 0.0);

    const auto ins = builtin_spec(OperatorName::instruct);
    const Embedding p({1, 2, 3});
    CHECK(operator_loss(ins, p, p, p) == doctest::Approx(0.0).epsilon(1e-15));
    // mse 0, cosine 0: loss is lambda.
    CHECK(operator_loss(ins, Embedding({1, 0}), Embedding({1, 0}), Embedding({0, 5})) ==
          doctest::Approx(ins.loss.lambda));
    CHECK_THROWS_WITH(operator_loss(ins, p, p, std::nullopt), doctest::Contains("requires a text embedding"));
    CHECK_THROWS_WITH(operator_loss(ins, Embedding::zeros(3), p, p), doctest::Contains("degenerate"));
}

TEST_CASE("operator loss: non-negative, scale-invariant in e_text") {
    Rng rng(4);
    const auto ins = builtin_spec(OperatorName::instruct);
    const auto uni = builtin_spec(OperatorName::union_op);
    for (int n = 0; n < 200; ++n) {
        const Embedding p(rng.normal_vector(16));
        const Embedding t(rng.normal_vector(16));
        const Embedding e(rng.normal_vector(16));
        std::vector<double> scaled(e.values().begin(), e.values().end());
        for (auto& v : scaled) v *= 3.7;
        const double l = operator_loss(ins, p, t, e);
        CHECK(l >= 0.0);
        CHECK(operator_loss(uni, p, t, std::nullopt) >= 0.0);
        CHECK(operator_loss(ins, p, t, Embedding(scaled)) == doctest::Approx(l).epsilon(1e-12));
    }
}

TEST_CASE("operator loss gradient matches differences") {
    Rng rng(5);
    for (const auto op : {OperatorName::union_op, OperatorName::instruct}) {
        const auto spec = builtin_spec(op);
        const auto p = rng.normal_vector(8);
        const auto t = rng.normal_vector(8);
        const std::optional<Embedding> e =
            op == OperatorName::instruct ? std::optional(Embedding(rng.normal_vector(8))) : std::nullopt;
        const auto lg = operator_loss_grad(spec, p, t, e);
        for (std::size_t i = 0; i < 8; ++i) {
            auto hi = p;
            auto lo = p;
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            const double fd = (operator_loss(spec, Embedding(hi), Embedding(t), e) -
                               operator_loss(spec, Embedding(lo), Embedding(t), e)) /
                              2e-6;
            CHECK(lg.grad[i] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("drop_conditions") {
    Rng rng(6);
    const std::vector<SlotCondition> conds{{0, Embedding(rng.normal_vector(4))}, {1, Embedding(rng.normal_vector(4))}};

    const auto kept = drop_conditions(conds, 0.0, rng);
    for (std::size_t i = 0; i < 2; ++i) CHECK(kept[i].value == conds[i].value);
    const auto dropped = drop_conditions(conds, 1.0, rng);
    for (const auto& c : dropped) CHECK(c.value.is_zero());

    // Joint: both zero or neither.
    int drops = 0;
    for (int n = 0; n < 10000; ++n) {
        const auto out = drop_conditions(conds, 0.1, rng);
        CHECK(out[0].value.is_zero() == out[1].value.is_zero());
        drops += out[0].value.is_zero() ? 1 : 0;
    }
    CHECK(std::abs(drops / 10000.0 - 0.1) <= 0.01);

    // Same rng state, same decisions.
    Rng a(42), b(42);
    for (int n = 0; n < 100; ++n) {
        CHECK(drop_conditions(conds, 0.5, a)[0].value.is_zero() == drop_conditions(conds, 0.5, b)[0].value.is_zero());
    }
}

TEST_CASE("drop_conditions: per-slot extension") {
    Rng rng(7);
    const std::vector<SlotCondition> conds{{0, Embedding(rng.normal_vector(4))}, {1, Embedding(rng.normal_vector(4))}};
    DropConfig cfg;
    cfg.joint = 0.0;
    cfg.per_slot = 0.1;
    int zero0 = 0, only_one = 0;
    for (int n = 0; n < 10000; ++n) {
        const auto out = drop_conditions(conds, cfg, rng);
        zero0 += out[0].value.is_zero() ? 1 : 0;
        only_one += out[0].value.is_zero() != out[1].value.is_zero() ? 1 : 0;
    }
    CHECK(std::abs(zero0 / 10000.0 - 0.1) <= 0.01);
    // Independent drops: P(exactly one) = 2 * 0.1 * 0.9.
    CHECK(std::abs(only_one / 10000.0 - 0.18) <= 0.015);
}
