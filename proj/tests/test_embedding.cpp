// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "embops/bytes.hpp"
#include "embops/embedding.hpp"
#include "embops/error.hpp"
#include "support.hpp"

using namespace embops;
using embops::test::random_embedding;
using embops::test::same_bits;
using embops::test::TempDir;

namespace {

Embedding vec(std::vector<double> v) { return Embedding(std::move(v)); }

}  // namespace

TEST_CASE("average: componentwise mean") {
    const std::vector<Embedding> two{vec({1, 0}), vec({0, 1})};
    CHECK(average(two) == vec({0.5, 0.5}));
    const std::vector<Embedding> one{vec({2, 2})};
    CHECK(average(one) == vec({2, 2}));
}

TEST_CASE("average: matches extended-precision sum/n on 100 vectors") {
    Rng rng(11);
    std::vector<Embedding> items;
    for (int i = 0; i < 100; ++i) items.push_back(Embedding(rng.normal_vector(16)));
    const Embedding mean = average(EmbeddingBatch(items));
    for (std::size_t k = 0; k < 16; ++k) {
        long double sum = 0;
        for (const auto& e : items) sum += static_cast<long double>(e[k]);
        CHECK(std::abs(static_cast<double>(sum / 100.0L) - mean[k]) <= 1e-9);
    }
}

TEST_CASE("average: permutation invariant and keeps the space tag") {
    Rng rng(2);
    std::vector<Embedding> items;
    for (int i = 0; i < 9; ++i) items.push_back(random_embedding(rng, 8, SpaceTag::text));
    const Embedding a = average(items);
    std::reverse(items.begin(), items.end());
    const Embedding b = average(items);
    CHECK(a.space() == SpaceTag::text);
    for (std::size_t k = 0; k < 8; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-15));
}

TEST_CASE("average: empty batch is rejected") {
    CHECK_THROWS_WITH(average(std::vector<Embedding>{}), "empty batch");
    CHECK_THROWS_WITH(EmbeddingBatch(std::vector<Embedding>{}), "empty batch");
}

TEST_CASE("cosine: reference values") {
    CHECK(cosine(vec({1, 0}), vec({1, 0})) == 1.0);
    CHECK(cosine(vec({1, 0}), vec({0, 1})) == 0.0);
    CHECK(cosine(vec({1, 2, 2}), vec({2, 1, 2})) == doctest::Approx(8.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("cosine: self-similarity and scale invariance") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto a = Embedding(rng.normal_vector(16));
        const auto b = Embedding(rng.normal_vector(16));
        std::vector<double> scaled(a.values().begin(), a.values().end());
        const double alpha = 0.1 + 10.0 * rng.uniform();
        for (auto& x : scaled) x *= alpha;
        CHECK(cosine(a, a) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(cosine(Embedding(scaled), b) == doctest::Approx(cosine(a, b)).epsilon(1e-12));
        const double c = cosine(a, b);
        CHECK(c >= -1.0);
        CHECK(c <= 1.0);
    }
}

TEST_CASE("cosine: zero norm is degenerate") {
    CHECK_THROWS_WITH(cosine(vec({0, 0}), vec({1, 0})), "degenerate embedding");
}

TEST_CASE("embedding rejects non-finite components") {
    CHECK_THROWS(vec({1.0, std::numeric_limits<double>::quiet_NaN()}));
    CHECK_THROWS(vec({std::numeric_limits<double>::infinity()}));
}

TEST_CASE("POPS: round-trip is bit exact") {
    TempDir dir("emb");
    Rng rng(3);
    std::vector<Embedding> items;
    for (int i = 0; i < 3; ++i) items.push_back(random_embedding(rng, 16));
    const auto path = dir / "x.pops";
    write_embeddings(path, EmbeddingBatch(items));
    const auto back = read_embeddings(path);
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(same_bits(back[i], items[i]));
}

TEST_CASE("POPS: byte layout") {
    const std::vector<Embedding> items{Embedding({1.0, -2.0}, SpaceTag::text)};
    const auto bytes = encode_embeddings(EmbeddingBatch(items));
    // magic(4) version(2) tag(1) d(4) count(8) then 2 floats
    REQUIRE(bytes.size() == 4 + 2 + 1 + 4 + 8 + 2 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "POPS");
    ByteReader r(bytes);
    r.raw(4);
    CHECK(r.u16() == kPopsVersionF32);
    CHECK(r.u8() == static_cast<std::uint8_t>(SpaceTag::text));
    CHECK(r.u32() == 2);
    CHECK(r.u64() == 1);
    CHECK(r.f32() == 1.0f);
    CHECK(r.f32() == -2.0f);
}

TEST_CASE("POPS: malformed files") {
    Rng rng(4);
    const std::vector<Embedding> items{random_embedding(rng, 16), random_embedding(rng, 16)};
    auto bytes = encode_embeddings(EmbeddingBatch(items));

    SUBCASE("magic") {
        auto bad = bytes;
        std::fill_n(bad.begin(), 4, std::uint8_t{'X'});
        CHECK_THROWS_WITH(decode_embeddings(bad), doctest::Contains("magic mismatch"));
    }
    SUBCASE("count larger than payload") {
        auto bad = bytes;
        bad[4 + 2 + 1 + 4] = 3;  // count low byte
        CHECK_THROWS_WITH(decode_embeddings(bad), doctest::Contains("truncated"));
    }
    SUBCASE("cut short") {
        bytes.resize(bytes.size() - 3);
        CHECK_THROWS_WITH(decode_embeddings(bytes), doctest::Contains("truncated"));
    }
    SUBCASE("dimension differs from the configured space") {
        CHECK_THROWS_WITH(decode_embeddings(bytes, 32), doctest::Contains("dimension mismatch"));
    }
}

TEST_CASE("POPS: meta sidecar") {
    TempDir dir("meta");
    const auto path = dir / "e.pops";
    write_meta(path, EmbeddingMeta{SpaceTag::text, 16, "mock-16"});
    CHECK(meta_path_for(path).filename() == "e.meta.json");
    const auto meta = read_meta(path);
    CHECK(meta.space == SpaceTag::text);
    CHECK(meta.dim == 16);
    CHECK(meta.encoder_id == "mock-16");
}

TEST_CASE("quantize_f32 is idempotent") {
    Rng rng(9);
    const auto e = Embedding(rng.normal_vector(16));
    const auto q = quantize_f32(e);
    CHECK(same_bits(quantize_f32(q), q));
    for (std::size_t i = 0; i < 16; ++i) CHECK(q[i] == static_cast<double>(static_cast<float>(e[i])));
}
