// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "embops/bytes.hpp"
#include "embops/image.hpp"
#include "embops/tree.hpp"
#include "support.hpp"
#include "tree_corpus.hpp"

using namespace embops;
using embops::test::random_embedding;
using embops::test::same_bits;
using embops::test::TempDir;
using embops::test::malformed_trees;
using embops::test::TreeGen;

namespace {

// --- evaluation fixtures ----------------------------------------------------

std::shared_ptr<const OperatorModel> untrained(OperatorName op, std::uint64_t seed) {
    auto cfg = TrainConfig::toy();
    cfg.seed = seed;
    PriorConfig prior;
    prior.layers = 1;
    return std::make_shared<const OperatorModel>(
        to_checkpoint(init_train_state(prior, NoiseSchedule::make(), builtin_spec(op), cfg)));
}

struct Fixture {
    TempDir dir{"tree"};
    MockEncoder encoder{16};
    OperatorRegistry registry;
    std::vector<Embedding> embs;

    Fixture() {
        Rng rng(21);
        for (int i = 0; i < 3; ++i) embs.push_back(random_embedding(rng, 16));
        write_embeddings(dir / "e.pops", EmbeddingBatch(embs));
        write_png(dir / "cat.png", Image::filled(8, 8, 3, 40));
        write_png(dir / "hat.png", Image::filled(8, 8, 3, 200));
        registry.add(OperatorName::union_op, untrained(OperatorName::union_op, 1));
        registry.add(OperatorName::instruct, untrained(OperatorName::instruct, 2));
        registry.add(OperatorName::identity, std::make_shared<const OperatorModel>(make_identity_checkpoint(16)));
    }

    EvalOptions options(std::vector<std::string>* trace = nullptr) const {
        EvalOptions o;
        o.seed = 9;
        o.base_dir = dir.path();
        o.encoder = &encoder;
        if (trace) o.trace = [trace](const std::string& line) { trace->push_back(line); };
        return o;
    }
};

std::string parse_error_at(const std::string& text, std::size_t* line, std::size_t* column) {
    try {
        parse_tree(text);
    } catch (const ParseError& e) {
        *line = e.line();
        *column = e.column();
        return e.message();
    }
    return "";
}

}  // namespace

TEST_CASE("grammar: nested example") {
    const auto p = parse_tree(R"((union (instruct (image cat.png) (text "spiky")) (image hat.png)))");
    REQUIRE(p.bindings.empty());
    const auto& root = std::get<Apply>(p.root->body);
    CHECK(root.op == OperatorName::union_op);
    REQUIRE(root.args.size() == 2);
    const auto& inner = std::get<Apply>(root.args[0].node->body);
    CHECK(inner.op == OperatorName::instruct);
    const auto& text = std::get<Leaf>(inner.args[1].node->body);
    CHECK(text.kind == Leaf::Kind::text);
    CHECK(text.value == "spiky");
    CHECK(std::get<Leaf>(root.args[1].node->body).value == "hat.png");
    CHECK(resolve_slots(root) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("grammar: slots, options, bindings and aliases") {
    const auto p = parse_tree(
        "; a comment\n"
        "(let obj (texturing (image a.png) (image t.png) :seed 4))\n"
        "(compose :slot 3 obj :slot 0 (emb hats.pops#2) :scale 2.5)\n");
    REQUIRE(p.bindings.size() == 1);
    CHECK(p.bindings[0].first == "obj");
    const auto& tex = std::get<Apply>(p.bindings[0].second->body);
    CHECK(tex.op == OperatorName::texturing);
    CHECK(tex.seed == 4u);
    const auto& root = std::get<Apply>(p.root->body);
    CHECK(root.op == OperatorName::composition);
    CHECK(root.scale == 2.5);
    CHECK(resolve_slots(root) == std::vector<std::size_t>{3, 0});
    CHECK(std::get<BindingRef>(root.args[0].node->body).name == "obj");

    CHECK(structurally_equal(parse_tree("(texture (image a.png) (image b.png))"),
                             parse_tree("(texturing (image a.png) (image b.png))")));
    CHECK(structurally_equal(parse_tree("(id (emb x.pops))"), parse_tree("(identity (emb x.pops))")));
    CHECK(std::get<Leaf>(parse_tree("(sample union :seed 3)").root->body).kind == Leaf::Kind::sample);
}

TEST_CASE("serialize: canonical whitespace") {
    const auto messy = parse_tree("  ( union\n\t(image   a.png)   ; left\n (image b.png)  :seed   7 )  ");
    CHECK(serialize(messy) == "(union (image a.png) (image b.png) :seed 7)\n");
    CHECK(serialize(parse_tree(serialize(messy))) == serialize(messy));
}

TEST_CASE("serialize/parse round-trip on random programs") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        TreeGen gen(s);
        const auto p = gen.program();
        const auto text = serialize(p);
        CAPTURE(text);
        const auto back = parse_tree(text);
        CHECK(structurally_equal(p, back));
        CHECK(serialize(back) == text);
    }
}

TEST_CASE("malformed programs report line and column") {
    for (const auto& c : malformed_trees()) {
        CAPTURE(c.text);
        std::size_t line = 0, column = 0;
        const auto msg = parse_error_at(c.text, &line, &column);
        CHECK(msg.find(c.message) != std::string::npos);
        CHECK(line == c.line);
        CHECK(column == c.column);
    }
}

TEST_CASE("evaluate: identity operator returns its input") {
    Fixture f;
    const auto out = evaluate(parse_tree("(id (emb e.pops#1))"), f.registry, f.options());
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(out[i] - f.embs[1][i]) <= 1e-3);
    const auto twice = evaluate(parse_tree("(id (id (emb e.pops#2)))"), f.registry, f.options());
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(twice[i] - f.embs[2][i]) <= 1e-3);
}

TEST_CASE("evaluate: post-order trace and determinism") {
    Fixture f;
    const auto p = parse_tree(R"((union (instruct (image cat.png) (text "spiky")) (image hat.png)))");
    std::vector<std::string> trace;
    const auto a = evaluate(p, f.registry, f.options(&trace));
    CHECK(trace == std::vector<std::string>{"leaf image cat.png", "leaf text spiky", "apply instruct",
                                            "leaf image hat.png", "apply union"});
    CHECK(a.dim() == 16);
    CHECK(same_bits(a, evaluate(p, f.registry, f.options())));
    auto other = f.options();
    other.seed = 10;
    CHECK_FALSE(same_bits(a, evaluate(p, f.registry, other)));
}

TEST_CASE("evaluate: bindings are evaluated once") {
    Fixture f;
    std::vector<std::string> trace;
    evaluate(parse_tree("(let a (union (emb e.pops#0) (emb e.pops#1)))\n(union a a)"), f.registry,
             f.options(&trace));
    CHECK(std::count(trace.begin(), trace.end(), "apply union") == 2);
    CHECK(std::count(trace.begin(), trace.end(), "bind a") == 1);
    CHECK(trace.back() == "apply union");
}

TEST_CASE("evaluate: inlining a seeded binding gives the same root") {
    Fixture f;
    const auto with_let = evaluate(
        parse_tree("(let a (union (emb e.pops#0) (emb e.pops#1) :seed 44))\n(union a (emb e.pops#2) :seed 5)"),
        f.registry, f.options());
    const auto inlined = evaluate(
        parse_tree("(union (union (emb e.pops#0) (emb e.pops#1) :seed 44) (emb e.pops#2) :seed 5)"), f.registry,
        f.options());
    CHECK(same_bits(with_let, inlined));
}

TEST_CASE("evaluate: explicit seed overrides the inherited one") {
    Fixture f;
    const auto p = parse_tree("(union (emb e.pops#0) (emb e.pops#1) :seed 3)");
    auto o1 = f.options();
    auto o2 = f.options();
    o2.seed = 1234;
    CHECK(same_bits(evaluate(p, f.registry, o1), evaluate(p, f.registry, o2)));
}

TEST_CASE("evaluate: errors") {
    Fixture f;
    CHECK_THROWS_WITH(evaluate(parse_tree("(scene (emb e.pops#0) (emb e.pops#1))"), f.registry, f.options()),
                      doctest::Contains("no checkpoint registered"));

    write_embeddings(f.dir / "small.pops", EmbeddingBatch(std::vector<Embedding>{Embedding({1, 2, 3, 4})}));
    CHECK_THROWS_WITH(evaluate(parse_tree("(union (emb small.pops) (emb e.pops#1))"), f.registry, f.options()),
                      doctest::Contains("dimension mismatch"));

    auto no_encoder = f.options();
    no_encoder.encoder = nullptr;
    CHECK_THROWS_WITH(evaluate(parse_tree("(id (image cat.png))"), f.registry, no_encoder),
                      doctest::Contains("no encoder"));
    CHECK_THROWS(evaluate(parse_tree("(id (emb e.pops#7))"), f.registry, f.options()));
    CHECK_THROWS(evaluate(parse_tree("(id (emb missing.pops))"), f.registry, f.options()));
}

TEST_CASE("registry from file") {
    Fixture f;
    save_checkpoint(f.dir / "id.ckpt", make_identity_checkpoint(16));
    write_text_file(f.dir / "registry.json", R"({"identity": "id.ckpt"})");
    const auto reg = OperatorRegistry::from_file(f.dir / "registry.json");
    CHECK(reg.contains(OperatorName::identity));
    CHECK(reg.dim() == 16u);
    CHECK_FALSE(reg.contains(OperatorName::union_op));
    CHECK_THROWS_WITH(OperatorRegistry::from_file(f.dir / "nope.json"), doctest::Contains("registry not found"));
    write_text_file(f.dir / "bad.json", R"({"sharpen": "id.ckpt"})");
    CHECK_THROWS(OperatorRegistry::from_file(f.dir / "bad.json"));
    CHECK_FALSE(OperatorRegistry{}.dim().has_value());
}
