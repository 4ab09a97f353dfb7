// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "embops/bytes.hpp"
#include "embops/error.hpp"

namespace embops {

namespace {

constexpr std::string_view kMagic = "POPS";

void check_same_dim(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim()) {
        fail(ErrorKind::invalid_argument, "dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                                              std::to_string(b.dim()));
    }
}

}  // namespace

std::string to_string(SpaceTag tag) {
    switch (tag) {
        case SpaceTag::image: return "image";
        case SpaceTag::text: return "text";
        case SpaceTag::tensor: return "tensor";
    }
    return "unknown";
}

SpaceTag space_tag_from_string(const std::string& name) {
    if (name == "image") return SpaceTag::image;
    if (name == "text") return SpaceTag::text;
    if (name == "tensor") return SpaceTag::tensor;
    fail(ErrorKind::format, "unknown space tag '" + name + "'");
}

Embedding::Embedding(std::vector<double> values, SpaceTag tag) : values_(std::move(values)), tag_(tag) {
    for (double v : values_) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::invalid_argument, "non-finite embedding component");
        }
    }
}

Embedding Embedding::zeros(std::size_t dim, SpaceTag tag) { return Embedding(std::vector<double>(dim, 0.0), tag); }

double Embedding::norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
}

bool Embedding::is_zero() const {
    for (double v : values_) {
        if (v != 0.0) return false;
    }
    return true;
}

EmbeddingBatch::EmbeddingBatch(std::vector<Embedding> items) : items_(std::move(items)) {
    if (items_.empty()) {
        fail(ErrorKind::invalid_argument, "empty batch");
    }
    for (const auto& e : items_) {
        if (e.dim() != items_.front().dim()) {
            fail(ErrorKind::invalid_argument, "inhomogeneous batch dimension");
        }
        if (e.space() != items_.front().space()) {
            fail(ErrorKind::invalid_argument, "inhomogeneous batch space");
        }
    }
}

Embedding average(std::span<const Embedding> items) {
    if (items.empty()) {
        fail(ErrorKind::invalid_argument, "empty batch");
    }
    const std::size_t d = items.front().dim();
    std::vector<double> acc(d, 0.0);
    for (const auto& e : items) {
        check_same_dim(e, items.front());
        for (std::size_t i = 0; i < d; ++i) acc[i] += e[i];
    }
    const double n = static_cast<double>(items.size());
    for (auto& v : acc) v /= n;
    return Embedding(std::move(acc), items.front().space());
}

double dot(const Embedding& a, const Embedding& b) {
    check_same_dim(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
    return s;
}

double cosine(const Embedding& a, const Embedding& b) {
    check_same_dim(a, b);
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        fail(ErrorKind::invalid_argument, "degenerate embedding");
    }
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingBatch& batch) {
    if (batch.dim() > std::numeric_limits<std::uint32_t>::max()) {
        fail(ErrorKind::invalid_argument, "dimension too large for POPS");
    }
    ByteWriter w;
    w.raw(kMagic);
    w.u16(kPopsVersionF32);
    w.u8(static_cast<std::uint8_t>(batch.space()));
    w.u32(static_cast<std::uint32_t>(batch.dim()));
    w.u64(batch.size());
    for (const auto& e : batch) {
        for (double v : e.values()) w.f32(static_cast<float>(v));
    }
    return w.take();
}

EmbeddingBatch decode_embeddings(std::span<const std::uint8_t> bytes, std::optional<std::size_t> expected_dim) {
    ByteReader r(bytes);
    if (bytes.size() < kMagic.size() ||
        std::string_view(reinterpret_cast<const char*>(bytes.data()), kMagic.size()) != kMagic) {
        fail(ErrorKind::format, "magic mismatch: not a POPS file");
    }
    r.raw(kMagic.size());
    const auto version = r.u16();
    if (version != kPopsVersionF32 && version != kPopsVersionF64) {
        fail(ErrorKind::format, "unsupported POPS version " + std::to_string(version));
    }
    const auto tag_raw = r.u8();
    if (tag_raw > static_cast<std::uint8_t>(SpaceTag::tensor)) {
        fail(ErrorKind::format, "invalid space tag " + std::to_string(tag_raw));
    }
    const auto tag = static_cast<SpaceTag>(tag_raw);
    const std::size_t d = r.u32();
    const std::uint64_t count = r.u64();
    if (expected_dim && *expected_dim != d) {
        fail(ErrorKind::format, "dimension mismatch: file has d=" + std::to_string(d) + ", expected " +
                                    std::to_string(*expected_dim));
    }
    const std::size_t width = version == kPopsVersionF32 ? 4 : 8;
    if (d == 0 || count == 0) {
        fail(ErrorKind::format, "empty POPS payload");
    }
    if (count > r.remaining() / (d * width)) {
        fail(ErrorKind::format, "truncated payload: header declares " + std::to_string(count) + " vectors");
    }
    std::vector<Embedding> items;
    items.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
        std::vector<double> v(d);
        for (std::size_t i = 0; i < d; ++i) {
            v[i] = version == kPopsVersionF32 ? static_cast<double>(r.f32()) : r.f64();
        }
        items.emplace_back(std::move(v), tag);
    }
    return EmbeddingBatch(std::move(items));
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch) {
    write_file_bytes(path, encode_embeddings(batch));
}

EmbeddingBatch read_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
    return decode_embeddings(read_file_bytes(path), expected_dim);
}

std::vector<std::uint8_t> encode_tensor_f32(std::span<const float> values) {
    ByteWriter w;
    w.raw(kMagic);
    w.u16(kPopsVersionF32);
    w.u8(static_cast<std::uint8_t>(SpaceTag::tensor));
    w.u32(static_cast<std::uint32_t>(values.size()));
    w.u64(1);
    for (float v : values) w.f32(v);
    return w.take();
}

std::vector<float> decode_tensor_f32(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (bytes.size() < kMagic.size() ||
        std::string_view(reinterpret_cast<const char*>(bytes.data()), kMagic.size()) != kMagic) {
        fail(ErrorKind::format, "magic mismatch: not a POPS tensor blob");
    }
    r.raw(kMagic.size());
    if (r.u16() != kPopsVersionF32) {
        fail(ErrorKind::format, "tensor blob must be float32");
    }
    if (r.u8() != static_cast<std::uint8_t>(SpaceTag::tensor)) {
        fail(ErrorKind::format, "blob is not tagged as a tensor");
    }
    const std::size_t n = r.u32();
    if (r.u64() != 1) {
        fail(ErrorKind::format, "tensor blob must hold exactly one vector");
    }
    if (n > r.remaining() / 4) {
        fail(ErrorKind::format, "truncated payload");
    }
    std::vector<float> out(n);
    for (auto& v : out) v = r.f32();
    return out;
}

std::filesystem::path meta_path_for(const std::filesystem::path& pops_path) {
    auto p = pops_path;
    p.replace_extension(".meta.json");
    return p;
}

void write_meta(const std::filesystem::path& pops_path, const EmbeddingMeta& meta) {
    nlohmann::json j = {{"space_tag", to_string(meta.space)}, {"d", meta.dim}, {"encoder_id", meta.encoder_id}};
    write_text_file(meta_path_for(pops_path), j.dump(2) + "\n");
}

EmbeddingMeta read_meta(const std::filesystem::path& pops_path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(meta_path_for(pops_path)));
        return EmbeddingMeta{space_tag_from_string(j.at("space_tag").get<std::string>()),
                             j.at("d").get<std::size_t>(), j.at("encoder_id").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("bad embedding sidecar: ") + e.what());
    }
}

Embedding quantize_f32(const Embedding& e) {
    std::vector<double> v(e.dim());
    for (std::size_t i = 0; i < e.dim(); ++i) v[i] = static_cast<double>(static_cast<float>(e[i]));
    return Embedding(std::move(v), e.space());
}

}  // namespace embops
