// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "embops/operators.hpp"
#include "embops/prior_net.hpp"
#include "embops/token_sequence.hpp"
#include "support.hpp"

using namespace embops;
using embops::test::same_bits;

namespace {

double slot_norm(const TokenSequence& seq, std::size_t i) {
    double s = 0.0;
    for (const double v : seq.slot(i)) s += v * v;
    return std::sqrt(s);
}

std::vector<SlotCondition> random_conditions(Rng& rng, std::vector<std::size_t> slots, std::size_t d) {
    std::vector<SlotCondition> out;
    for (const auto s : slots) out.push_back({s, Embedding(rng.normal_vector(d))});
    return out;
}

}  // namespace

TEST_CASE("build_sequence: binary layout") {
    Rng rng(1);
    const auto conds = random_conditions(rng, {0, 1}, 16);
    const auto seq = build_sequence(conds, 42, Embedding(rng.normal_vector(16)));
    CHECK(seq.length() == 79);
    CHECK(seq.output_index() == 78);
    CHECK(seq.timestep() == 42);
    CHECK(seq.assigned_count() == 2);
    double rest = 0.0;
    for (std::size_t i = 2; i < kConditionSlots; ++i) rest += slot_norm(seq, i);
    CHECK(rest == 0.0);
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(seq.slot(0)[k] == conds[0].value[k]);
        CHECK(seq.slot(1)[k] == conds[1].value[k]);
    }
}

TEST_CASE("build_sequence: unconditional and composition layouts") {
    Rng rng(2);
    const auto empty = build_sequence({}, 0, Embedding(rng.normal_vector(8)));
    for (std::size_t i = 0; i < kConditionSlots; ++i) CHECK(slot_norm(empty, i) == 0.0);

    std::vector<std::size_t> twelve(12);
    std::iota(twelve.begin(), twelve.end(), 0);
    const auto seq = build_sequence(random_conditions(rng, twelve, 8), 5, Embedding(rng.normal_vector(8)));
    for (std::size_t i = 0; i < 12; ++i) CHECK(slot_norm(seq, i) > 0.0);
    for (std::size_t i = 12; i < kConditionSlots; ++i) CHECK(slot_norm(seq, i) == 0.0);
}

TEST_CASE("build_sequence: errors") {
    Rng rng(3);
    const Embedding noised(rng.normal_vector(8));
    CHECK_THROWS_WITH(build_sequence(random_conditions(rng, {0, 0}, 8), 0, noised), doctest::Contains("duplicate"));
    CHECK_THROWS_WITH(build_sequence(random_conditions(rng, {77}, 8), 0, noised), doctest::Contains("out of range"));
    CHECK_THROWS_WITH(build_sequence(random_conditions(rng, {0}, 4), 0, noised), doctest::Contains("dimension"));
}

TEST_CASE("prior config validation") {
    PriorConfig cfg;
    cfg.width = 66;
    CHECK_THROWS(cfg.validate());
    cfg = PriorConfig{};
    cfg.layers = 0;
    CHECK_THROWS(cfg.validate());
    cfg = PriorConfig{};
    cfg.attention = AttentionKind::full;
    cfg.time_embedding = TimeEmbeddingKind::learned;
    CHECK(PriorConfig::from_json(cfg.to_json()) == cfg);
}

TEST_CASE("denoise: deterministic, shape d, and zero slots are content-free") {
    for (const auto att : {AttentionKind::causal, AttentionKind::full}) {
        PriorConfig cfg;
        cfg.attention = att;
        PriorNet<float> net(cfg);
        net.init_random(5);
        Rng rng(6);
        const auto conds = random_conditions(rng, {0, 1}, 16);
        const Embedding noised(rng.normal_vector(16));
        const auto a = net.denoise(build_sequence(conds, 100, noised));
        const auto b = net.denoise(build_sequence(conds, 100, noised));
        CHECK(a.dim() == 16);
        CHECK(same_bits(a, b));

        // Filling slot 5 explicitly with zeros matches leaving it unassigned.
        auto with_zero = conds;
        with_zero.push_back({5, Embedding::zeros(16)});
        CHECK(same_bits(a, net.denoise(build_sequence(with_zero, 100, noised))));

        // Content in a slot does change the output, so the check above is not vacuous.
        auto with_content = conds;
        with_content.push_back({5, Embedding(rng.normal_vector(16))});
        CHECK_FALSE(same_bits(a, net.denoise(build_sequence(with_content, 100, noised))));
        // Position matters: the same content in a different slot differs.
        auto moved = conds;
        moved[1].slot = 2;
        CHECK_FALSE(same_bits(a, net.denoise(build_sequence(moved, 100, noised))));
        // So does the timestep.
        CHECK_FALSE(same_bits(a, net.denoise(build_sequence(conds, 101, noised))));
    }
}

TEST_CASE("denoise: float and double paths agree") {
    PriorNet<float> net(PriorConfig{});
    net.init_random(9);
    const auto wide = to_double(net);
    Rng rng(10);
    const auto seq = build_sequence(random_conditions(rng, {0, 1}, 16), 700, Embedding(rng.normal_vector(16)));
    const auto a = net.denoise(seq);
    const auto b = wide.denoise(seq);
    for (std::size_t i = 0; i < 16; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-4));
}

TEST_CASE("denoise rejects a dimension mismatch") {
    PriorNet<float> net(PriorConfig{});
    net.init_random(1);
    Rng rng(2);
    CHECK_THROWS(net.denoise(build_sequence({}, 0, Embedding(rng.normal_vector(8)))));
}

TEST_CASE("freeze_policy") {
    PriorConfig cfg;
    const ParamLayout layout(cfg);
    const auto all = freeze_policy(layout, cfg, FreezePolicy::all());
    CHECK(all.trainable_count() == layout.total());

    const auto first = freeze_policy(layout, cfg, FreezePolicy::subset({0}));
    CHECK(first.any());
    for (std::size_t g = 0; g < layout.groups().size(); ++g) {
        CHECK(first.group_trainable(g) == (layout.groups()[g].layer == 0));
    }
    std::size_t expected = 0;
    for (const auto& g : layout.groups()) expected += g.layer == 0 ? g.size() : 0;
    CHECK(first.trainable_count() == expected);

    CHECK_FALSE(freeze_policy(layout, cfg, FreezePolicy::subset({})).any());
    CHECK_THROWS_WITH(freeze_policy(layout, cfg, FreezePolicy::subset({4})), doctest::Contains("out of range"));
}

namespace {

// Relative error of analytic vs central-difference gradients on `count`
// randomly drawn parameters with non-negligible analytic gradient.
double worst_gradient_error(const OperatorSpec& spec, const PriorConfig& cfg, std::uint64_t seed, int count) {
    PriorNet<double> net(cfg);
    net.init_random(seed);
    Rng rng(seed + 1);
    const auto seq = build_sequence(random_conditions(rng, {0, 1}, cfg.dim), 321, Embedding(rng.normal_vector(cfg.dim)));
    const auto target = rng.normal_vector(cfg.dim);
    std::optional<Embedding> e_text;
    if (spec.loss.kind == LossKind::mse_plus_similarity) e_text = Embedding(rng.normal_vector(cfg.dim));

    // Loss written out directly: mean squared error plus lambda (1 - cos).
    const auto loss = [&] {
        const auto y = net.forward(seq);
        double mse = 0.0;
        for (std::size_t i = 0; i < cfg.dim; ++i) mse += (y(i) - target[i]) * (y(i) - target[i]);
        mse /= static_cast<double>(cfg.dim);
        if (!e_text) return mse;
        double dot = 0.0, ny = 0.0, nt = 0.0;
        for (std::size_t i = 0; i < cfg.dim; ++i) {
            dot += y(i) * (*e_text)[i];
            ny += y(i) * y(i);
            nt += (*e_text)[i] * (*e_text)[i];
        }
        return mse + spec.loss.lambda * (1.0 - dot / std::sqrt(ny * nt));
    };

    PriorNet<double>::Cache cache;
    const auto y = net.forward(seq, &cache);
    const auto lg = operator_loss_grad(spec, std::span<const double>(y.data(), cfg.dim), target, e_text);
    CHECK(lg.value == doctest::Approx(loss()).epsilon(1e-12));
    const Eigen::VectorXd go = Eigen::Map<const Eigen::VectorXd>(lg.grad.data(), cfg.dim);
    std::vector<double> grad(net.params().size(), 0.0);
    net.backward(cache, go, grad);

    double worst = 0.0;
    int checked = 0;
    while (checked < count) {
        const std::size_t i = rng.below(grad.size());
        if (std::abs(grad[i]) < 1e-8) continue;
        const double h = 1e-3;
        const double orig = net.params()[i];
        net.params()[i] = orig + h;
        const double lp = loss();
        net.params()[i] = orig - h;
        const double lm = loss();
        net.params()[i] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - grad[i]) / std::max(std::abs(fd), std::abs(grad[i])));
        ++checked;
    }
    return worst;
}

}  // namespace

TEST_CASE("gradients match central differences") {
    PriorConfig cfg;
    cfg.layers = 2;
    CHECK(worst_gradient_error(builtin_spec(OperatorName::union_op), cfg, 7, 30) <= 1e-4);
    CHECK(worst_gradient_error(builtin_spec(OperatorName::instruct), cfg, 8, 30) <= 1e-4);
}

TEST_CASE("gradients for the alternative architecture knobs") {
    // Full attention and learned time tables change the code path; the
    // finite-difference check is looser here only because of float64 noise
    // in the softmax around large logits.
    PriorConfig cfg;
    cfg.layers = 2;
    cfg.attention = AttentionKind::full;
    cfg.time_embedding = TimeEmbeddingKind::learned;
    CHECK(worst_gradient_error(builtin_spec(OperatorName::union_op), cfg, 11, 30) <= 1e-3);
}
