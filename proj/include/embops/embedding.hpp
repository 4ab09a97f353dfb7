// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace embops {

/// Which encoder produced a vector. `tensor` marks raw parameter blobs that
/// reuse the embedding container format.
enum class SpaceTag : std::uint8_t { image = 0, text = 1, tensor = 2 };

std::string to_string(SpaceTag tag);
SpaceTag space_tag_from_string(const std::string& name);

/// A fixed-length real vector in an encoder's embedding space.
///
/// Components are held in double precision and always finite. Values are
/// stored raw; nothing here normalises them.
class Embedding {
public:
    Embedding() = default;
    explicit Embedding(std::vector<double> values, SpaceTag tag = SpaceTag::image);

    static Embedding zeros(std::size_t dim, SpaceTag tag = SpaceTag::image);

    [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] SpaceTag space() const noexcept { return tag_; }
    [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }

    [[nodiscard]] double norm() const;
    [[nodiscard]] bool is_zero() const;

    /// Same values tagged with another space.
    [[nodiscard]] Embedding retagged(SpaceTag tag) const { return Embedding(values_, tag); }

    friend bool operator==(const Embedding& a, const Embedding& b) = default;

private:
    std::vector<double> values_;
    SpaceTag tag_ = SpaceTag::image;
};

/// Non-empty, dimension- and space-homogeneous list of embeddings.
class EmbeddingBatch {
public:
    explicit EmbeddingBatch(std::vector<Embedding> items);

    [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return items_.front().dim(); }
    [[nodiscard]] SpaceTag space() const noexcept { return items_.front().space(); }
    [[nodiscard]] const Embedding& operator[](std::size_t i) const { return items_[i]; }
    [[nodiscard]] const std::vector<Embedding>& items() const noexcept { return items_; }

    [[nodiscard]] auto begin() const noexcept { return items_.begin(); }
    [[nodiscard]] auto end() const noexcept { return items_.end(); }

private:
    std::vector<Embedding> items_;
};

/// Componentwise mean (the latent-averaging baseline).
Embedding average(std::span<const Embedding> items);
inline Embedding average(const EmbeddingBatch& batch) { return average(batch.items()); }

double dot(const Embedding& a, const Embedding& b);
/// dot(a,b)/(|a||b|); throws on zero-norm input.
double cosine(const Embedding& a, const Embedding& b);

// --- persistence -----------------------------------------------------------
//
// Layout (little-endian):
//   "POPS" | u16 version | u8 space_tag | u32 d | u64 count | count*d values
// Version 1 stores float32 values, version 2 float64 (parameter blobs only).

inline constexpr std::uint16_t kPopsVersionF32 = 1;
inline constexpr std::uint16_t kPopsVersionF64 = 2;

struct EmbeddingMeta {
    SpaceTag space = SpaceTag::image;
    std::size_t dim = 0;
    std::string encoder_id;
};

/// Serialises as float32. Bit-exact for components that are float32-representable.
std::vector<std::uint8_t> encode_embeddings(const EmbeddingBatch& batch);
EmbeddingBatch decode_embeddings(std::span<const std::uint8_t> bytes,
                                 std::optional<std::size_t> expected_dim = std::nullopt);

void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch);
EmbeddingBatch read_embeddings(const std::filesystem::path& path,
                               std::optional<std::size_t> expected_dim = std::nullopt);

/// Raw float32 tensor blob (tag `tensor`, count 1).
std::vector<std::uint8_t> encode_tensor_f32(std::span<const float> values);
std::vector<float> decode_tensor_f32(std::span<const std::uint8_t> bytes);

/// `<stem>.meta.json` next to a POPS file.
std::filesystem::path meta_path_for(const std::filesystem::path& pops_path);
void write_meta(const std::filesystem::path& pops_path, const EmbeddingMeta& meta);
EmbeddingMeta read_meta(const std::filesystem::path& pops_path);

/// Round to float32 precision, the resolution embeddings have on disk.
Embedding quantize_f32(const Embedding& e);

}  // namespace embops
