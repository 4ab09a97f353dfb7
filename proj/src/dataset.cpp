// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/dataset.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "embops/bytes.hpp"
#include "embops/clients.hpp"
#include "embops/error.hpp"

namespace embops {

namespace fs = std::filesystem;

std::pair<std::string, std::size_t> parse_embedding_ref(const std::string& ref) {
    const auto hash = ref.rfind('#');
    if (hash == std::string::npos) return {ref, 0};
    const auto index = ref.substr(hash + 1);
    if (index.empty() || index.find_first_not_of("0123456789") != std::string::npos) {
        fail(ErrorKind::format, "bad embedding reference '" + ref + "'");
    }
    return {ref.substr(0, hash), static_cast<std::size_t>(std::stoull(index))};
}

namespace {

nlohmann::json header_json(const ManifestHeader& h) {
    return {{"operator", h.operator_name}, {"count", h.count}, {"attempted", h.attempted}, {"d", h.dim},
            {"toy", h.toy},                {"encoder_id", h.encoder_id}, {"extra", h.extra}};
}

ManifestHeader header_from(const nlohmann::json& line) {
    try {
        const auto& j = line.at("header");
        ManifestHeader h;
        h.operator_name = j.at("operator").get<std::string>();
        h.count = j.at("count").get<std::size_t>();
        h.attempted = j.value("attempted", h.count);
        h.dim = j.at("d").get<std::size_t>();
        h.toy = j.value("toy", false);
        h.encoder_id = j.value("encoder_id", std::string());
        h.extra = j.value("extra", nlohmann::json::object());
        return h;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("bad manifest header: ") + e.what());
    }
}

// Collects embeddings per space into one POPS file each.
class RefWriter {
public:
    RefWriter(const fs::path& manifest) : stem_(manifest.stem().string()), dir_(manifest.parent_path()) {}

    std::string add(const Embedding& e) {
        auto& bucket = e.space() == SpaceTag::text ? text_ : image_;
        bucket.push_back(e);
        return file_for(e.space()) + "#" + std::to_string(bucket.size() - 1);
    }

    void flush(const std::string& encoder_id) const {
        for (const auto tag : {SpaceTag::image, SpaceTag::text}) {
            const auto& bucket = tag == SpaceTag::text ? text_ : image_;
            if (bucket.empty()) continue;
            const auto path = dir_ / file_for(tag);
            write_embeddings(path, EmbeddingBatch(bucket));
            write_meta(path, EmbeddingMeta{tag, bucket.front().dim(), encoder_id});
        }
    }

private:
    [[nodiscard]] std::string file_for(SpaceTag tag) const {
        return stem_ + (tag == SpaceTag::text ? ".text.pops" : ".pops");
    }

    std::string stem_;
    fs::path dir_;
    std::vector<Embedding> image_;
    std::vector<Embedding> text_;
};

bool is_image_path(const std::string& file) {
    const auto ext = fs::path(file).extension().string();
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

class RefResolver {
public:
    RefResolver(fs::path dir, const EncoderClient* encoder) : dir_(std::move(dir)), encoder_(encoder) {}

    Embedding resolve(const std::string& ref) {
        const auto [file, index] = parse_embedding_ref(ref);
        const fs::path path = fs::path(file).is_absolute() ? fs::path(file) : dir_ / file;
        if (is_image_path(file)) {
            if (encoder_ == nullptr) {
                fail(ErrorKind::config, "manifest references image '" + file + "' but no encoder is configured");
            }
            if (!fs::exists(path)) fail(ErrorKind::io, "referenced file not found: " + path.string());
            return encoder_->encode_image(read_image(path));
        }
        auto it = cache_.find(path.string());
        if (it == cache_.end()) {
            if (!fs::exists(path)) fail(ErrorKind::io, "referenced file not found: " + path.string());
            it = cache_.emplace(path.string(), read_embeddings(path).items()).first;
        }
        if (index >= it->second.size()) {
            fail(ErrorKind::format, "reference '" + ref + "' past end of " + file);
        }
        return it->second[index];
    }

private:
    fs::path dir_;
    const EncoderClient* encoder_;
    std::map<std::string, std::vector<Embedding>> cache_;
};

}  // namespace

void write_dataset(const fs::path& manifest, const Dataset& dataset) {
    RefWriter refs(manifest);
    std::ostringstream out;
    ManifestHeader header = dataset.header;
    header.count = dataset.samples.size();
    header.attempted = std::max(header.attempted, header.count);
    out << nlohmann::json{{"header", header_json(header)}}.dump() << '\n';
    for (const auto& s : dataset.samples) {
        nlohmann::json conds = nlohmann::json::array();
        for (const auto& c : s.conditions) conds.push_back({{"slot", c.slot}, {"ref", refs.add(c.value)}});
        nlohmann::json line{{"conditions", conds}, {"target_ref", refs.add(s.target)}};
        if (s.e_text) line["e_text_ref"] = refs.add(*s.e_text);
        line["provenance"] = s.provenance;
        out << line.dump() << '\n';
    }
    refs.flush(header.encoder_id);
    write_text_file(manifest, out.str());
}

ManifestHeader read_manifest_header(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) fail(ErrorKind::io, "manifest not found: " + manifest.string());
    std::string first;
    std::getline(in, first);
    try {
        return header_from(nlohmann::json::parse(first));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::format, "manifest header is not JSON: " + std::string(e.what()));
    }
}

Dataset load_dataset(const fs::path& manifest, const EncoderClient* encoder) {
    std::ifstream in(manifest);
    if (!in) fail(ErrorKind::io, "manifest not found: " + manifest.string());
    Dataset ds;
    RefResolver refs(manifest.parent_path(), encoder);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorKind::format, manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (lineno == 1) {
            ds.header = header_from(j);
            continue;
        }
        try {
            TrainingSample s;
            for (const auto& c : j.at("conditions")) {
                s.conditions.push_back(
                    SlotCondition{c.at("slot").get<std::size_t>(), refs.resolve(c.at("ref").get<std::string>())});
            }
            s.target = refs.resolve(j.at("target_ref").get<std::string>());
            if (j.contains("e_text_ref")) s.e_text = refs.resolve(j["e_text_ref"].get<std::string>());
            s.provenance = j.value("provenance", nlohmann::json::object());
            const auto check = [&](const Embedding& e) {
                if (e.dim() != ds.header.dim) {
                    fail(ErrorKind::format, manifest.string() + ":" + std::to_string(lineno) +
                                                ": dimension mismatch (" + std::to_string(e.dim()) + " vs header " +
                                                std::to_string(ds.header.dim) + ")");
                }
            };
            for (const auto& c : s.conditions) check(c.value);
            check(s.target);
            if (s.e_text) check(*s.e_text);
            ds.samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::format, manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (lineno == 0) fail(ErrorKind::format, "empty manifest: " + manifest.string());
    if (ds.samples.size() != ds.header.count) {
        fail(ErrorKind::format, "manifest count " + std::to_string(ds.header.count) + " does not match " +
                                    std::to_string(ds.samples.size()) + " entry lines");
    }
    return ds;
}

std::uint64_t dataset_digest(const Dataset& dataset) {
    ByteWriter w;
    w.raw(dataset.header.operator_name);
    w.u64(dataset.header.dim);
    w.u8(dataset.header.toy ? 1 : 0);
    w.u64(dataset.samples.size());
    const auto put = [&](const Embedding& e) {
        w.u8(static_cast<std::uint8_t>(e.space()));
        for (const double v : e.values()) w.f64(v);
    };
    for (const auto& s : dataset.samples) {
        w.u64(s.conditions.size());
        for (const auto& c : s.conditions) {
            w.u64(c.slot);
            put(c.value);
        }
        put(s.target);
        w.u8(s.e_text ? 1 : 0);
        if (s.e_text) put(*s.e_text);
    }
    return fnv1a64(w.bytes());
}

}  // namespace embops
