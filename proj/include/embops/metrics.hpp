// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "embops/clients.hpp"
#include "embops/embedding.hpp"

namespace embops {

/// Scores of one generated output against its source object.
struct EvalRecord {
    std::string object_id;
    std::string adjective;
    std::string method;
    double image_similarity = 0.0;
    double text_similarity = 0.0;
    double sentence_similarity = 0.0;

    /// Throws unless every similarity lies in [-1, 1].
    void validate() const;
    bool operator==(const EvalRecord&) const = default;
};

/// "A <adjective> photo"
std::string text_prompt(const std::string& adjective);

/// "A photo of a <adjective> <caption>." A leading article on the caption is dropped.
std::string sentence_reference(const std::string& adjective, const std::string& caption);

/// Cosine of the two embeddings; throws on zero norm.
double text_similarity(const Embedding& e_image, const Embedding& e_prompt);

/// Cosine of the sentence embeddings of the two captions.
double sentence_similarity(const std::string& caption_a, const std::string& caption_b,
                           const SentenceEncoderClient& encoder);

/// Mean of sentence_similarity over the pairs; throws when empty.
double mean_sentence_similarity(std::span<const std::pair<std::string, std::string>> pairs,
                                const SentenceEncoderClient& encoder);

struct MethodSummary {
    std::string method;
    std::size_t n = 0;
    double image_sim_mean = 0.0;
    double text_sim_mean = 0.0;
    double sent_sim_mean = 0.0;
    bool operator==(const MethodSummary&) const = default;
};

/// Per-method means sorted by method name. Independent of record order.
std::vector<MethodSummary> aggregate(std::span<const EvalRecord> records);

// CSV columns: method,n,image_sim_mean,text_sim_mean,sent_sim_mean
std::string summary_csv(std::span<const MethodSummary> rows);
std::vector<MethodSummary> parse_summary_csv(const std::string& text);
void write_summary_csv(const std::filesystem::path& path, std::span<const MethodSummary> rows);
std::vector<MethodSummary> read_summary_csv(const std::filesystem::path& path);

// CSV columns: object_id,adjective,method,image_similarity,text_similarity,sentence_similarity
std::string records_csv(std::span<const EvalRecord> records);
std::vector<EvalRecord> parse_records_csv(const std::string& text);

/// Published scores for the instruct operator, for side-by-side context only.
struct ReferenceScores {
    std::string method;
    double image_similarity;
    double text_similarity;
    double sentence_similarity;
};

const std::vector<ReferenceScores>& instruct_reference_scores();
/// Printable table with a note on how image similarity was measured.
std::string reference_table(bool image_similarity_is_proxy);

}  // namespace embops
