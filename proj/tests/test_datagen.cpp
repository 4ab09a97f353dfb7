// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "embops/bytes.hpp"
#include "embops/datagen.hpp"
#include "embops/error.hpp"
#include "embops/operators.hpp"
#include "support.hpp"

using namespace embops;
using embops::test::same_bits;
using embops::test::TempDir;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v = Vocabulary::load(Vocabulary::default_dir());
    return v;
}

DatagenOptions opts(std::size_t n, std::uint64_t seed = 1) {
    DatagenOptions o;
    o.n = n;
    o.seed = seed;
    return o;
}

}  // namespace

TEST_CASE("vocabulary sizes") {
    const auto& v = vocab();
    CHECK(v.objects.size() == kObjectCount);
    CHECK(v.placements.size() == kPlacementCount);
    CHECK(v.textures.size() == kTextureCount);
    CHECK(v.backgrounds.size() == kBackgroundCount);
    CHECK(v.adjectives.size() == kAdjectiveCount);
    CHECK(v.atr_categories.size() == kCompositionCategories);
    CHECK(v.classes_from_fallback);
    CHECK(v.classes == v.objects);
    for (const auto* list : {&v.objects, &v.textures, &v.backgrounds, &v.adjectives}) {
        CHECK(std::set<std::string>(list->begin(), list->end()).size() == list->size());
    }
}

TEST_CASE("class list: 20000-line descriptions file") {
    TempDir dir("classes");
    const auto path = dir / "class-descriptions.csv";
    {
        std::ofstream out(path);
        out << "LabelName,DisplayName\n";
        for (std::size_t i = 0; i < kOpenImagesClassCount; ++i) out << "/m/" << i << ",Class " << i << "\n";
    }
    const auto classes = load_class_list(path);
    REQUIRE(classes.size() == kOpenImagesClassCount);
    CHECK(classes.front() == "Class 0");
    CHECK(classes.back() == "Class 19999");

    const auto v = Vocabulary::load(Vocabulary::default_dir(), path);
    CHECK_FALSE(v.classes_from_fallback);
    CHECK(v.classes.size() == kOpenImagesClassCount);
    CHECK_THROWS(load_class_list(dir / "missing.csv"));
}

TEST_CASE("word list parsing skips comments and blanks") {
    TempDir dir("words");
    write_text_file(dir / "w.txt", "# header\nalpha\n\n  beta  \n# more\ngamma\n");
    CHECK(load_word_list(dir / "w.txt") == std::vector<std::string>{"alpha", "beta", "gamma"});
}

TEST_CASE("prompt templates") {
    CHECK(object_prompt("teapot", "on a table") == "A photo of a teapot on a table.");
    CHECK(textured_prompt("teapot", {"moss", "rust"}, "on a table") ==
          "A photo of a teapot made from moss, rust on a table.");
    CHECK(detection_prompt("teapot") == "A teapot");
    CHECK(union_prompt("dog", "hat") == "a dog and a hat");
    CHECK(instruct_text("spiky", "cat") == "a spiky cat");
}

TEST_CASE("texture patch lies strictly inside the detection") {
    Rng rng(3);
    int produced = 0;
    for (int n = 0; n < 1000; ++n) {
        const int x0 = static_cast<int>(rng.below(40));
        const int y0 = static_cast<int>(rng.below(40));
        const Box det{x0, y0, x0 + 3 + static_cast<int>(rng.below(60)), y0 + 3 + static_cast<int>(rng.below(60)), 1.0};
        const auto patch = texture_patch_box(det, rng);
        if (!patch) continue;
        ++produced;
        CHECK(det.strictly_contains(*patch));
        CHECK(patch->width() == patch->height());
        const int expect = std::max(1, static_cast<int>(std::lround(0.2 * std::min(det.width(), det.height()))));
        CHECK(patch->width() == expect);
    }
    CHECK(produced > 900);
    CHECK_FALSE(texture_patch_box(Box{0, 0, 2, 2, 1.0}, rng).has_value());
}

TEST_CASE("paste copies exactly the mask pixels") {
    Image src = Image::filled(8, 8, 3, 200);
    Image mask = Image::filled(8, 8, 1, 0);
    for (int y = 2; y < 5; ++y) {
        for (int x = 1; x < 7; ++x) mask.at(x, y)[0] = 255;
    }
    Image canvas = Image::filled(8, 8, 3, 10);
    CHECK(paste_masked(src, mask, canvas) == mask_area(mask));
    CHECK(mask_area(mask) == 18);
    CHECK(canvas.at(1, 2)[0] == 200);
    CHECK(canvas.at(0, 0)[0] == 10);
}

TEST_CASE("texturing pipeline") {
    const auto clients = make_mock_datagen_clients(16);
    const auto ds = gen_texturing(clients, vocab(), opts(12));
    CHECK(ds.header.operator_name == "texturing");
    CHECK(ds.header.attempted == 12);
    CHECK(ds.header.count == ds.samples.size());
    for (const auto& s : ds.samples) {
        REQUIRE(s.conditions.size() == 2);
        CHECK(s.conditions[0].slot == 0);
        CHECK(s.conditions[1].slot == 1);
        const auto k = s.provenance.at("textures").size();
        CHECK(k >= 1);
        CHECK(k <= 5);
    }
}

TEST_CASE("texturing: detector misses are skipped, not fatal") {
    const auto clients = make_mock_datagen_clients(16, 1.0);
    std::vector<std::string> log;
    auto o = opts(5);
    o.log = [&](const std::string& l) { log.push_back(l); };
    const auto ds = gen_texturing(clients, vocab(), o);
    CHECK(ds.samples.empty());
    CHECK(ds.header.attempted == 5);
    CHECK(log.size() == 5);
}

TEST_CASE("scene pipeline: white background frequency and mask accounting") {
    const auto clients = make_mock_datagen_clients(8);
    auto o = opts(10000, 7);
    o.white_background_probability = 0.5;
    const auto ds = gen_scene(clients, vocab(), o);
    REQUIRE(ds.samples.size() == 10000);
    int white = 0;
    for (const auto& s : ds.samples) {
        white += s.provenance.at("white_background").get<bool>() ? 1 : 0;
        CHECK(s.provenance.at("mask_area").get<long>() == s.provenance.at("pasted_area").get<long>());
        CHECK(s.provenance.contains("paste_background") != s.provenance.at("white_background").get<bool>());
    }
    CHECK(std::abs(white / 10000.0 - 0.5) <= 0.01);
}

TEST_CASE("union pipeline: crops from distinct classes") {
    const auto clients = make_mock_datagen_clients(16);
    const auto ds = gen_union(clients, vocab(), opts(20));
    REQUIRE_FALSE(ds.samples.empty());
    for (const auto& s : ds.samples) {
        CHECK(s.provenance.at("a") != s.provenance.at("b"));
        const auto crops = s.provenance.at("crops").get<std::string>();
        CHECK((crops == "overlapping") == (s.provenance.at("iou").get<double>() > 0.0));
        CHECK_FALSE(same_bits(s.conditions[0].value, s.conditions[1].value));
    }
}

TEST_CASE("instruct pipeline: adjective embedding is shared across objects") {
    const auto clients = make_mock_datagen_clients(16);
    const auto ds = gen_instruct(clients, vocab(), opts(200));
    std::map<std::string, Embedding> by_adjective;
    std::map<std::string, std::set<std::string>> objects;
    for (const auto& s : ds.samples) {
        REQUIRE(s.e_text.has_value());
        CHECK(same_bits(s.target, s.conditions[0].value));
        CHECK(s.conditions[1].value.space() == SpaceTag::text);
        const auto adj = s.provenance.at("adjective").get<std::string>();
        CHECK(s.provenance.at("text") == instruct_text(adj, s.provenance.at("object")));
        objects[adj].insert(s.provenance.at("object").get<std::string>());
        const auto [it, fresh] = by_adjective.emplace(adj, s.conditions[1].value);
        if (!fresh) CHECK(same_bits(it->second, s.conditions[1].value));
    }
    bool shared = false;
    for (const auto& [adj, objs] : objects) shared = shared || objs.size() > 1;
    CHECK(shared);
}

TEST_CASE("composition from a labelled parsing fixture") {
    TempDir dir("atr");
    std::filesystem::create_directories(dir / "JPEGImages");
    std::filesystem::create_directories(dir / "SegmentationClassAug");
    Image img = Image::filled(20, 20, 3, 90);
    for (int y = 0; y < 20; ++y) {
        for (int x = 0; x < 20; ++x) img.at(x, y)[1] = static_cast<std::uint8_t>(10 * x);
    }
    Image seg = Image::filled(20, 20, 1, 0);
    for (int y = 0; y < 4; ++y) {
        for (int x = 5; x < 12; ++x) seg.at(x, y)[0] = 1;  // hat -> slot 0
    }
    for (int y = 8; y < 14; ++y) {
        for (int x = 2; x < 18; ++x) seg.at(x, y)[0] = 4;  // upper clothes -> slot 3
    }
    write_png(dir / "JPEGImages" / "p0.png", img);
    write_png(dir / "SegmentationClassAug" / "p0.png", seg);
    write_png(dir / "JPEGImages" / "p1.png", img);  // no mask: skipped

    const MockEncoder enc(16);
    const auto ds = gen_composition(dir.path(), enc, opts(10));
    REQUIRE(ds.samples.size() == 1);
    CHECK(ds.header.attempted == 2);
    const auto& s = ds.samples[0];
    REQUIRE(s.conditions.size() == 2);
    CHECK(s.conditions[0].slot == 0);
    CHECK(s.conditions[1].slot == 3);
    CHECK(same_bits(s.target, enc.encode_image(img)));
    CHECK(atr_label_ids().size() == kCompositionCategories);
    CHECK_THROWS(gen_composition(dir / "nowhere", enc, opts(1)));
}

TEST_CASE("toy oracles") {
    const Embedding a({1, 2, 3});
    const Embedding b({3, 2, 1});
    CHECK(ToyOracle{ToyOracle::Kind::midpoint}.apply({a, b}) == Embedding({2, 2, 2}));
    CHECK(same_bits(ToyOracle{ToyOracle::Kind::first_arg}.apply({a, b}), a));
    ToyOracle mix{ToyOracle::Kind::weighted_mix, 0.25};
    CHECK(mix.apply({a, b}) == Embedding({2.5, 2, 1.5}));

    // Rotations preserve norms.
    ToyOracle rot{ToyOracle::Kind::rotate, 0.5, 9};
    CHECK(rot.apply({a}).norm() == doctest::Approx(a.norm()).epsilon(1e-12));
    const auto q = rotation_matrix(16, 9);
    CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(16, 16)).norm() <= 1e-10);
    CHECK(toy_oracle_from_string(to_string(ToyOracle::Kind::weighted_mix)) == ToyOracle::Kind::weighted_mix);
}

TEST_CASE("toy datasets: seeded, float32-exact targets") {
    const ToyOracle mid{ToyOracle::Kind::midpoint};
    const auto a = gen_toy(mid, 64, 5, 16);
    const auto b = gen_toy(mid, 64, 5, 16);
    CHECK(dataset_digest(a) == dataset_digest(b));
    CHECK(dataset_digest(a) != dataset_digest(gen_toy(mid, 64, 6, 16)));
    CHECK(a.header.toy);
    for (const auto& s : a.samples) {
        CHECK(same_bits(quantize_f32(s.target), s.target));
        const auto want = quantize_f32(mid.apply({s.conditions[0].value, s.conditions[1].value}));
        CHECK(same_bits(want, s.target));
    }
}

TEST_CASE("dataset manifest round-trip") {
    TempDir dir("ds");
    const auto clients = make_mock_datagen_clients(16);
    const auto ds = gen_instruct(clients, vocab(), opts(6));
    write_dataset(dir / "m.jsonl", ds);
    const auto back = load_dataset(dir / "m.jsonl");
    CHECK(dataset_digest(back) == dataset_digest(ds));
    CHECK(back.samples[0].provenance == ds.samples[0].provenance);
    const auto header = read_manifest_header(dir / "m.jsonl");
    CHECK(header.operator_name == "instruct");
    CHECK(header.count == ds.samples.size());

    CHECK(parse_embedding_ref("x.pops#3") == std::pair<std::string, std::size_t>{"x.pops", 3});
    CHECK(parse_embedding_ref("x.pops") == std::pair<std::string, std::size_t>{"x.pops", 0});
}

TEST_CASE("dataset load errors") {
    TempDir dir("dsbad");
    CHECK_THROWS_WITH(load_dataset(dir / "none.jsonl"), doctest::Contains("not found"));
    write_text_file(dir / "bad.jsonl", "not json\n");
    CHECK_THROWS(load_dataset(dir / "bad.jsonl"));

    const auto ds = gen_toy(ToyOracle{}, 3, 1, 8);
    write_dataset(dir / "m.jsonl", ds);
    std::filesystem::remove(dir / "m.pops");
    CHECK_THROWS(load_dataset(dir / "m.jsonl"));
}
