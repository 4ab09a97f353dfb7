// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embops/embedding.hpp"
#include "embops/token_sequence.hpp"

namespace embops {

class EncoderClient;

/// One paired example: conditions in their slots and the embedding to reach.
struct TrainingSample {
    std::vector<SlotCondition> conditions;
    Embedding target;
    std::optional<Embedding> e_text;  // similarity-supervised operators only
    nlohmann::json provenance = nlohmann::json::object();
};

struct ManifestHeader {
    std::string operator_name;
    std::size_t count = 0;      // emitted samples == entry lines
    std::size_t attempted = 0;  // including skipped ones
    std::size_t dim = 0;
    bool toy = false;
    std::string encoder_id;
    nlohmann::json extra = nlohmann::json::object();
};

struct Dataset {
    ManifestHeader header;
    std::vector<TrainingSample> samples;
};

/// Writes `<manifest>` (JSONL: a header line then one line per sample) plus
/// `<stem>.pops` / `<stem>.text.pops` holding the referenced embeddings.
/// Entry lines look like
///   {"conditions":[{"slot":0,"ref":"x.pops#0"}],"target_ref":"x.pops#2","provenance":{...}}
void write_dataset(const std::filesystem::path& manifest, const Dataset& dataset);

/// Loads and resolves every reference. Image refs (png/jpg) are encoded when
/// an encoder is given and rejected otherwise.
Dataset load_dataset(const std::filesystem::path& manifest, const EncoderClient* encoder = nullptr);

/// Reads only the header line.
ManifestHeader read_manifest_header(const std::filesystem::path& manifest);

/// Digest over header fields and every embedding bit; equal datasets hash equal.
std::uint64_t dataset_digest(const Dataset& dataset);

/// Parses "file.pops#3" into (file, 3); a bare path means index 0.
std::pair<std::string, std::size_t> parse_embedding_ref(const std::string& ref);

}  // namespace embops
