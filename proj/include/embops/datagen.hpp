// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "embops/clients.hpp"
#include "embops/dataset.hpp"
#include "embops/rng.hpp"

namespace embops {

inline constexpr std::size_t kObjectCount = 290;
inline constexpr std::size_t kPlacementCount = 24;
inline constexpr std::size_t kTextureCount = 310;
inline constexpr std::size_t kBackgroundCount = 208;
inline constexpr std::size_t kAdjectiveCount = 60;
inline constexpr std::size_t kOpenImagesClassCount = 20000;

/// Word lists driving the synthetic pipelines.
struct Vocabulary {
    std::vector<std::string> objects;
    std::vector<std::string> placements;
    std::vector<std::string> textures;
    std::vector<std::string> backgrounds;
    std::vector<std::string> adjectives;
    std::vector<std::string> atr_categories;
    /// Union/instruct class pool. Falls back to `objects` when no class list
    /// file is supplied.
    std::vector<std::string> classes;
    bool classes_from_fallback = true;

    /// Reads `<dir>/{objects,placements,textures,backgrounds,adjectives,atr_categories}.txt`.
    static Vocabulary load(const std::filesystem::path& dir,
                           const std::optional<std::filesystem::path>& class_list = std::nullopt);
    /// $POPS_DATA_DIR/vocab, else the source-tree data directory.
    static std::filesystem::path default_dir();
};

/// One entry per line; blank lines and '#' comments skipped.
std::vector<std::string> load_word_list(const std::filesystem::path& path);

/// Class descriptions CSV (`LabelName,DisplayName`, optional header) or a
/// plain list. Display names are returned, de-duplicated, in file order.
std::vector<std::string> load_class_list(const std::filesystem::path& path);

// --- prompts ------------------------------------------------------------------

std::string object_prompt(const std::string& object, const std::string& placement);
std::string textured_prompt(const std::string& object, const std::vector<std::string>& textures,
                            const std::string& placement);
std::string detection_prompt(const std::string& object);
std::string union_prompt(const std::string& a, const std::string& b);
std::string instruct_text(const std::string& adjective, const std::string& object);
std::string scene_prompt(const std::string& object, const std::string& background);
std::string background_prompt(const std::string& background);

// --- geometry -------------------------------------------------------------------

/// Square patch, side = 20% of the box's shorter side (at least 1 px), placed
/// uniformly so it lies strictly inside `detection`. Empty when the box is
/// too small to hold one.
std::optional<Box> texture_patch_box(const Box& detection, Rng& rng);

/// Object pixels (mask != 0) copied onto `canvas`; returns the number pasted.
long paste_masked(const Image& source, const Image& mask, Image& canvas);

// --- pipelines ----------------------------------------------------------------

struct DatagenOptions {
    std::size_t n = 100;
    std::uint64_t seed = 0;
    double white_background_probability = 0.5;
    std::size_t min_textures = 1;
    std::size_t max_textures = 5;
    int client_retries = 2;
    /// Receives one line per skipped sample.
    std::function<void(const std::string&)> log;
};

/// Emits up to n samples; skips are counted in header.attempted.
Dataset gen_texturing(const DatagenClients& clients, const Vocabulary& vocab, const DatagenOptions& options);
Dataset gen_scene(const DatagenClients& clients, const Vocabulary& vocab, const DatagenOptions& options);
Dataset gen_union(const DatagenClients& clients, const Vocabulary& vocab, const DatagenOptions& options);

/// Slot 0 = e_object, slot 1 = e_instruct (text space), target = e_object,
/// e_text = encode_text("a <adjective> <object>").
Dataset gen_instruct(const DatagenClients& clients, const Vocabulary& vocab, const DatagenOptions& options);

/// ATR label indices for the twelve garment/accessory slots.
const std::vector<int>& atr_label_ids();

/// Reads `<root>/JPEGImages` (or `images`) and `<root>/SegmentationClassAug`
/// (or `masks`), sorted by file name; the first n images are used.
Dataset gen_composition(const std::filesystem::path& atr_root, const EncoderClient& encoder,
                        const DatagenOptions& options);

/// Known embedding maps for desk-scale verification.
struct ToyOracle {
    enum class Kind { midpoint, first_arg, weighted_mix, rotate };
    Kind kind = Kind::midpoint;
    double weight = 0.5;         // weighted_mix: w*a + (1-w)*b
    std::uint64_t matrix_seed = 0;  // rotate

    [[nodiscard]] std::size_t arity() const noexcept { return kind == Kind::rotate ? 1 : 2; }
    /// Default operator the toy manifest is tagged with.
    [[nodiscard]] std::string default_operator() const { return kind == Kind::rotate ? "identity" : "union"; }
    [[nodiscard]] Embedding apply(const std::vector<Embedding>& inputs) const;
    [[nodiscard]] nlohmann::json to_json() const;
};

std::string to_string(ToyOracle::Kind kind);
ToyOracle::Kind toy_oracle_from_string(const std::string& s);

/// Deterministic orthogonal matrix from a seed (QR of a Gaussian matrix).
Eigen::MatrixXd rotation_matrix(std::size_t d, std::uint64_t seed);

/// Unit-Gaussian conditions rounded to float32, target = oracle rounded to float32.
Dataset gen_toy(const ToyOracle& oracle, std::size_t n, std::uint64_t seed, std::size_t d,
                const std::string& operator_name = "");

}  // namespace embops
