// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "embops/bytes.hpp"
#include "embops/error.hpp"

namespace embops {

namespace {

void check_range(double v, const char* name) {
    if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
        fail(ErrorKind::format, std::string(name) + " outside [-1, 1]: " + std::to_string(v));
    }
}

// Rounding can push a cosine a hair past +-1.
double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

std::string real_text(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_real(const std::string& s, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        fail(ErrorKind::format, "csv line " + std::to_string(line) + ": bad number '" + s + "'");
    }
    return v;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

// Returns (line number, fields) for each data row after the expected header.
std::vector<std::pair<std::size_t, std::vector<std::string>>> read_rows(const std::string& text,
                                                                         const std::string& header,
                                                                         std::size_t columns) {
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    bool seen_header = false;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!seen_header) {
            if (line != header) fail(ErrorKind::format, "csv header must be '" + header + "', got '" + line + "'");
            seen_header = true;
            continue;
        }
        auto fields = split_csv_line(line);
        if (fields.size() != columns) {
            fail(ErrorKind::format, "csv line " + std::to_string(number) + ": expected " + std::to_string(columns) +
                                        " fields, got " + std::to_string(fields.size()));
        }
        rows.emplace_back(number, std::move(fields));
    }
    if (!seen_header) fail(ErrorKind::format, "csv is empty");
    return rows;
}

// Sorting first makes the sum independent of input order.
double order_free_mean(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (const double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

constexpr const char* kSummaryHeader = "method,n,image_sim_mean,text_sim_mean,sent_sim_mean";
constexpr const char* kRecordsHeader =
    "object_id,adjective,method,image_similarity,text_similarity,sentence_similarity";

}  // namespace

void EvalRecord::validate() const {
    check_range(image_similarity, "image_similarity");
    check_range(text_similarity, "text_similarity");
    check_range(sentence_similarity, "sentence_similarity");
}

std::string text_prompt(const std::string& adjective) { return "A " + adjective + " photo"; }

std::string sentence_reference(const std::string& adjective, const std::string& caption) {
    std::string body = caption;
    for (const std::string article : {"a ", "an ", "the "}) {
        if (body.size() > article.size() &&
            std::equal(article.begin(), article.end(), body.begin(),
                       [](char a, char b) { return a == std::tolower(static_cast<unsigned char>(b)); })) {
            body = body.substr(article.size());
            break;
        }
    }
    while (!body.empty() && body.back() == '.') body.pop_back();
    return "A photo of a " + adjective + " " + body + ".";
}

double text_similarity(const Embedding& e_image, const Embedding& e_prompt) {
    return clamp_unit(cosine(e_image, e_prompt));
}

double sentence_similarity(const std::string& caption_a, const std::string& caption_b,
                           const SentenceEncoderClient& encoder) {
    return clamp_unit(cosine(encoder.embed(caption_a), encoder.embed(caption_b)));
}

double mean_sentence_similarity(std::span<const std::pair<std::string, std::string>> pairs,
                                const SentenceEncoderClient& encoder) {
    require(!pairs.empty(), ErrorKind::invalid_argument, "no caption pairs to average");
    double sum = 0.0;
    for (const auto& [a, b] : pairs) sum += sentence_similarity(a, b, encoder);
    return sum / static_cast<double>(pairs.size());
}

std::vector<MethodSummary> aggregate(std::span<const EvalRecord> records) {
    struct Columns {
        std::vector<double> image, text, sentence;
    };
    std::map<std::string, Columns> by_method;
    for (const auto& r : records) {
        r.validate();
        auto& c = by_method[r.method];
        c.image.push_back(r.image_similarity);
        c.text.push_back(r.text_similarity);
        c.sentence.push_back(r.sentence_similarity);
    }
    std::vector<MethodSummary> out;
    for (auto& [method, c] : by_method) {
        out.push_back({method, c.image.size(), order_free_mean(std::move(c.image)), order_free_mean(std::move(c.text)),
                       order_free_mean(std::move(c.sentence))});
    }
    return out;
}

std::string summary_csv(std::span<const MethodSummary> rows) {
    std::string out = std::string(kSummaryHeader) + "\n";
    for (const auto& r : rows) {
        out += csv_field(r.method) + "," + std::to_string(r.n) + "," + real_text(r.image_sim_mean) + "," +
               real_text(r.text_sim_mean) + "," + real_text(r.sent_sim_mean) + "\n";
    }
    return out;
}

std::vector<MethodSummary> parse_summary_csv(const std::string& text) {
    std::vector<MethodSummary> out;
    for (const auto& [line, f] : read_rows(text, kSummaryHeader, 5)) {
        MethodSummary s;
        s.method = f[0];
        const auto res = std::from_chars(f[1].data(), f[1].data() + f[1].size(), s.n);
        if (res.ec != std::errc() || res.ptr != f[1].data() + f[1].size()) {
            fail(ErrorKind::format, "csv line " + std::to_string(line) + ": bad count '" + f[1] + "'");
        }
        s.image_sim_mean = parse_real(f[2], line);
        s.text_sim_mean = parse_real(f[3], line);
        s.sent_sim_mean = parse_real(f[4], line);
        out.push_back(std::move(s));
    }
    return out;
}

void write_summary_csv(const std::filesystem::path& path, std::span<const MethodSummary> rows) {
    write_text_file(path, summary_csv(rows));
}

std::vector<MethodSummary> read_summary_csv(const std::filesystem::path& path) {
    return parse_summary_csv(read_text_file(path));
}

std::string records_csv(std::span<const EvalRecord> records) {
    std::string out = std::string(kRecordsHeader) + "\n";
    for (const auto& r : records) {
        out += csv_field(r.object_id) + "," + csv_field(r.adjective) + "," + csv_field(r.method) + "," +
               real_text(r.image_similarity) + "," + real_text(r.text_similarity) + "," +
               real_text(r.sentence_similarity) + "\n";
    }
    return out;
}

std::vector<EvalRecord> parse_records_csv(const std::string& text) {
    std::vector<EvalRecord> out;
    for (const auto& [line, f] : read_rows(text, kRecordsHeader, 6)) {
        EvalRecord r{f[0], f[1], f[2], parse_real(f[3], line), parse_real(f[4], line), parse_real(f[5], line)};
        r.validate();
        out.push_back(std::move(r));
    }
    return out;
}

const std::vector<ReferenceScores>& instruct_reference_scores() {
    static const std::vector<ReferenceScores> rows{
        {"InstructPix2Pix", 0.455, 0.237, 0.424},
        {"IP-Adapter (0.5)", 0.826, 0.211, 0.544},
        {"IP-Adapter (0.1)", 0.584, 0.219, 0.531},
        {"instruct operator", 0.6607, 0.236, 0.437},
    };
    return rows;
}

std::string reference_table(bool image_similarity_is_proxy) {
    std::ostringstream out;
    out << "published instruct-operator scores (context only, not comparable to proxy runs)\n";
    out << "method,image_sim,text_sim,sent_sim\n";
    for (const auto& r : instruct_reference_scores()) {
        out << r.method << "," << real_text(r.image_similarity) << "," << real_text(r.text_similarity) << ","
            << real_text(r.sentence_similarity) << "\n";
    }
    if (image_similarity_is_proxy) out << "note: image_sim in this run is a proxy (embedding cosine), not DreamSim\n";
    return out.str();
}

}  // namespace embops
