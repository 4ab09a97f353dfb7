// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include "embops/bytes.hpp"
#include "embops/error.hpp"
#include "embops/operators.hpp"

#ifndef EMBOPS_DATA_DIR
#define EMBOPS_DATA_DIR "data"
#endif

namespace embops {

namespace fs = std::filesystem;

std::vector<std::string> load_word_list(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "word list not found: " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto last = line.find_last_not_of(" \t\r");
        out.push_back(line.substr(first, last - first + 1));
    }
    return out;
}

std::vector<std::string> load_class_list(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "class list not found: " + path.string());
    std::vector<std::string> out;
    std::set<std::string> seen;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        std::string name = line;
        const auto comma = line.find(',');
        if (comma != std::string::npos) {
            name = line.substr(comma + 1);
            if (name.size() >= 2 && name.front() == '"' && name.back() == '"') name = name.substr(1, name.size() - 2);
            if (first && (line.rfind("LabelName", 0) == 0)) {
                first = false;
                continue;
            }
        }
        first = false;
        if (!name.empty() && seen.insert(name).second) out.push_back(name);
    }
    return out;
}

Vocabulary Vocabulary::load(const fs::path& dir, const std::optional<fs::path>& class_list) {
    Vocabulary v;
    v.objects = load_word_list(dir / "objects.txt");
    v.placements = load_word_list(dir / "placements.txt");
    v.textures = load_word_list(dir / "textures.txt");
    v.backgrounds = load_word_list(dir / "backgrounds.txt");
    v.adjectives = load_word_list(dir / "adjectives.txt");
    v.atr_categories = load_word_list(dir / "atr_categories.txt");
    require(v.atr_categories.size() == kCompositionCategories, ErrorKind::config,
            "atr_categories.txt must list " + std::to_string(kCompositionCategories) + " categories");
    if (class_list) {
        v.classes = load_class_list(*class_list);
        v.classes_from_fallback = false;
    } else {
        v.classes = v.objects;
        v.classes_from_fallback = true;
    }
    for (const auto* list : {&v.objects, &v.placements, &v.textures, &v.backgrounds, &v.adjectives, &v.classes}) {
        require(!list->empty(), ErrorKind::config, "empty vocabulary list in " + dir.string());
    }
    return v;
}

fs::path Vocabulary::default_dir() {
    if (const char* env = std::getenv("POPS_DATA_DIR")) return fs::path(env) / "vocab";
    return fs::path(EMBOPS_DATA_DIR) / "vocab";
}

// --- prompts ------------------------------------------------------------------

std::string object_prompt(const std::string& object, const std::string& placement) {
    return "A photo of a " + object + " " + placement + ".";
}

std::string textured_prompt(const std::string& object, const std::vector<std::string>& textures,
                            const std::string& placement) {
    std::string joined;
    for (std::size_t i = 0; i < textures.size(); ++i) {
        if (i > 0) joined += ", ";
        joined += textures[i];
    }
    return "A photo of a " + object + " made from " + joined + " " + placement + ".";
}

std::string detection_prompt(const std::string& object) { return "A " + object; }

std::string union_prompt(const std::string& a, const std::string& b) { return "a " + a + " and a " + b; }

std::string instruct_text(const std::string& adjective, const std::string& object) {
    return "a " + adjective + " " + object;
}

namespace {

std::string lower_first(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
    return s;
}

}  // namespace

std::string scene_prompt(const std::string& object, const std::string& background) {
    return "A photo of a " + object + " " + lower_first(background) + ".";
}

std::string background_prompt(const std::string& background) {
    return "A photo " + lower_first(background) + ".";
}

// --- geometry -------------------------------------------------------------------

std::optional<Box> texture_patch_box(const Box& detection, Rng& rng) {
    if (!detection.valid()) return std::nullopt;
    const int shorter = std::min(detection.width(), detection.height());
    const int side = std::max(1, static_cast<int>(std::lround(0.2 * shorter)));
    // Strict containment needs a one-pixel margin on each side.
    const int slack_x = detection.width() - side - 2;
    const int slack_y = detection.height() - side - 2;
    if (slack_x < 0 || slack_y < 0) return std::nullopt;
    Box p;
    p.x0 = detection.x0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(slack_x) + 1));
    p.y0 = detection.y0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(slack_y) + 1));
    p.x1 = p.x0 + side;
    p.y1 = p.y0 + side;
    return p;
}

long paste_masked(const Image& source, const Image& mask, Image& canvas) {
    require(source.width == canvas.width && source.height == canvas.height && mask.width == source.width &&
                mask.height == source.height && source.channels == canvas.channels,
            ErrorKind::invalid_argument, "paste: image, mask and canvas sizes differ");
    long pasted = 0;
    for (int y = 0; y < source.height; ++y) {
        for (int x = 0; x < source.width; ++x) {
            if (mask.at(x, y)[0] == 0) continue;
            std::copy_n(source.at(x, y), source.channels, canvas.at(x, y));
            ++pasted;
        }
    }
    return pasted;
}

// --- pipelines ----------------------------------------------------------------

namespace {

class Skip : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename F>
auto with_retries(int retries, const char* what, F&& fn) -> decltype(fn()) {
    std::string last;
    for (int attempt = 0; attempt <= retries; ++attempt) {
        try {
            return fn();
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::client) throw;
            last = e.what();
        }
    }
    throw Skip(std::string(what) + " failed after retries: " + last);
}

const std::string& pick(const std::vector<std::string>& list, Rng& rng) {
    return list[static_cast<std::size_t>(rng.below(list.size()))];
}

void require_clients(const DatagenClients& c, bool detector, bool depth, bool removal) {
    require(c.generator && c.encoder, ErrorKind::config, "datagen needs a generator and an encoder");
    if (detector) require(static_cast<bool>(c.detector), ErrorKind::config, "datagen needs a detector");
    if (depth) require(static_cast<bool>(c.depth), ErrorKind::config, "datagen needs a depth estimator");
    if (removal) {
        require(c.background_remover && c.inpainter, ErrorKind::config,
                "datagen needs background removal and inpainting clients");
    }
}

nlohmann::json box_json(const Box& b) { return {b.x0, b.y0, b.x1, b.y1, b.score}; }

// Drives the per-sample loop: derives seeds, catches skips, fills the header.
template <typename MakeSample>
Dataset run_pipeline(const std::string& op, const DatagenClients& clients, const DatagenOptions& options,
                     MakeSample&& make) {
    Dataset ds;
    ds.header.operator_name = op;
    ds.header.dim = clients.encoder->dim();
    ds.header.encoder_id = clients.encoder->id();
    ds.header.extra = {{"seed", options.seed}};
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < options.n; ++i) {
        const std::uint64_t sample_seed = mix_seed(options.seed, i);
        Rng rng(sample_seed);
        try {
            TrainingSample s = make(rng, sample_seed);
            s.provenance["index"] = i;
            s.provenance["seed"] = sample_seed;
            ds.samples.push_back(std::move(s));
        } catch (const Skip& e) {
            ++skipped;
            if (options.log) options.log(op + " sample " + std::to_string(i) + " skipped: " + e.what());
        }
    }
    ds.header.count = ds.samples.size();
    ds.header.attempted = options.n;
    ds.header.extra["skipped"] = skipped;
    return ds;
}

}  // namespace

Dataset gen_texturing(const DatagenClients& clients, const Vocabulary& vocab, const DatagenOptions& options) {
    require_clients(clients, true, true, false);
    require(options.min_textures >= 1 && options.max_textures >= options.min_textures, ErrorKind::config,
            "texture count range must satisfy 1 <= min <= max");
    const int retries = options.client_retries;
    return run_pipeline("texturing", clients, options, [&](Rng& rng, std::uint64_t seed) {
        const auto& object = pick(vocab.objects, rng);
        const auto& placement = pick(vocab.placements, rng);
        const auto n_tex = options.min_textures +
                           static_cast<std::size_t>(rng.below(options.max_textures - options.min_textures + 1));
        std::vector<std::string> textures;
        while (textures.size() < std::min(n_tex, vocab.textures.size())) {
            const auto& t = pick(vocab.textures, rng);
            if (std::find(textures.begin(), textures.end(), t) == textures.end()) textures.push_back(t);
        }
        const auto p_obj = object_prompt(object, placement);
        const auto p_tgt = textured_prompt(object, textures, placement);
        const Image obj = with_retries(retries, "generator", [&] { return clients.generator->generate(p_obj, seed); });
        const Image depth = with_retries(retries, "depth", [&] { return clients.depth->estimate(obj); });
        const Image tgt =
            with_retries(retries, "depth generator", [&] { return clients.generator->generate(p_tgt, seed, &depth); });
        const auto boxes =
            with_retries(retries, "detector", [&] { return clients.detector->detect(tgt, detection_prompt(object)); });
        if (boxes.empty()) throw Skip("no detection for '" + detection_prompt(object) + "'");
        const auto patch = texture_patch_box(boxes.front(), rng);
        if (!patch) throw Skip("detection box too small for a patch");
        const Image tex = crop(tgt, *patch);
        TrainingSample s;
        s.conditions = {{0, with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(obj); })},
                        {1, with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(tex); })}};
        s.target = with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(tgt); });
        s.provenance = {{"object", object},         {"placement", placement},       {"textures", textures},
                        {"object_prompt", p_obj},   {"target_prompt", p_tgt},       {"detection", box_json(boxes.front())},
                        {"patch", box_json(*patch)}};
        return s;
    });
}

Dataset gen_scene(const DatagenClients& clients, const Vocabulary& vocab, const DatagenOptions& options) {
    require_clients(clients, false, false, true);
    require(options.white_background_probability >= 0.0 && options.white_background_probability <= 1.0,
            ErrorKind::config, "white background probability must be in [0,1]");
    const int retries = options.client_retries;
    return run_pipeline("scene", clients, options, [&](Rng& rng, std::uint64_t seed) {
        const auto& object = pick(vocab.objects, rng);
        const auto& background = pick(vocab.backgrounds, rng);
        const auto prompt = scene_prompt(object, background);
        const Image tgt = with_retries(retries, "generator", [&] { return clients.generator->generate(prompt, seed); });
        const Image mask =
            with_retries(retries, "background removal", [&] { return clients.background_remover->remove_background(tgt); });
        require(mask.width == tgt.width && mask.height == tgt.height && mask.channels == 1, ErrorKind::client,
                "background removal returned a mask of the wrong shape");
        const long area = mask_area(mask);
        if (area == 0) throw Skip("empty object mask");
        const bool white = rng.bernoulli(options.white_background_probability);
        std::string canvas_background;
        Image canvas;
        if (white) {
            canvas = Image::filled(tgt.width, tgt.height, tgt.channels, 255);
        } else {
            canvas_background = pick(vocab.backgrounds, rng);
            canvas = with_retries(retries, "generator", [&] {
                return clients.generator->generate(background_prompt(canvas_background), mix_seed(seed, 1));
            });
            require(canvas.width == tgt.width && canvas.height == tgt.height, ErrorKind::client,
                    "generated background has the wrong resolution");
            canvas = canvas.channels == tgt.channels ? canvas : to_rgb(canvas);
        }
        const long pasted = paste_masked(tgt, mask, canvas);
        const Image back = with_retries(retries, "inpainting", [&] { return clients.inpainter->inpaint(tgt, mask, seed); });
        TrainingSample s;
        s.conditions = {{0, with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(canvas); })},
                        {1, with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(back); })}};
        s.target = with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(tgt); });
        s.provenance = {{"object", object},          {"background", background}, {"prompt", prompt},
                        {"white_background", white}, {"mask_area", area},        {"pasted_area", pasted}};
        if (!white) s.provenance["paste_background"] = canvas_background;
        return s;
    });
}

Dataset gen_union(const DatagenClients& clients, const Vocabulary& vocab, const DatagenOptions& options) {
    require_clients(clients, true, false, false);
    require(vocab.classes.size() >= 2, ErrorKind::config, "union needs at least two classes");
    const int retries = options.client_retries;
    return run_pipeline("union", clients, options, [&](Rng& rng, std::uint64_t seed) {
        const auto& a = pick(vocab.classes, rng);
        std::string b = pick(vocab.classes, rng);
        while (b == a) b = pick(vocab.classes, rng);
        const auto prompt = union_prompt(a, b);
        const Image tgt = with_retries(retries, "generator", [&] { return clients.generator->generate(prompt, seed); });
        const auto box_a = with_retries(retries, "detector", [&] { return clients.detector->detect(tgt, "a " + a); });
        const auto box_b = with_retries(retries, "detector", [&] { return clients.detector->detect(tgt, "a " + b); });
        if (box_a.empty() || box_b.empty()) {
            throw Skip("missing detection for " + std::string(box_a.empty() ? a : b));
        }
        const double iou = intersection_over_union(box_a.front(), box_b.front());
        TrainingSample s;
        s.conditions = {
            {0, with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(crop(tgt, box_a.front())); })},
            {1, with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(crop(tgt, box_b.front())); })}};
        s.target = with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(tgt); });
        s.provenance = {{"a", a},
                        {"b", b},
                        {"prompt", prompt},
                        {"box_a", box_json(box_a.front())},
                        {"box_b", box_json(box_b.front())},
                        {"iou", iou},
                        {"crops", iou > 0.0 ? "overlapping" : "disjoint"}};
        return s;
    });
}

Dataset gen_instruct(const DatagenClients& clients, const Vocabulary& vocab, const DatagenOptions& options) {
    require_clients(clients, false, false, false);
    const int retries = options.client_retries;
    std::map<std::string, Embedding> adjective_cache;
    return run_pipeline("instruct", clients, options, [&](Rng& rng, std::uint64_t seed) {
        const auto& object = pick(vocab.classes, rng);
        const auto& adjective = pick(vocab.adjectives, rng);
        const auto prompt = "A photo of a " + object + ".";
        const Image img = with_retries(retries, "generator", [&] { return clients.generator->generate(prompt, seed); });
        auto it = adjective_cache.find(adjective);
        if (it == adjective_cache.end()) {
            it = adjective_cache
                     .emplace(adjective, with_retries(retries, "encoder",
                                                      [&] { return clients.encoder->encode_text(adjective); }))
                     .first;
        }
        const auto text = instruct_text(adjective, object);
        TrainingSample s;
        const Embedding e_object = with_retries(retries, "encoder", [&] { return clients.encoder->encode_image(img); });
        s.conditions = {{0, e_object}, {1, it->second.retagged(SpaceTag::text)}};
        s.target = e_object;
        s.e_text = with_retries(retries, "encoder", [&] { return clients.encoder->encode_text(text); });
        s.provenance = {{"object", object}, {"adjective", adjective}, {"prompt", prompt}, {"text", text}};
        return s;
    });
}

const std::vector<int>& atr_label_ids() {
    // ATR labels: 1 hat, 2 hair, 3 sunglasses, 4 upper clothes, 5 skirt,
    // 6 pants, 7 dress, 8 belt, 9 left shoe, 10 right shoe, 16 bag, 17 scarf.
    static const std::vector<int> ids{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 16, 17};
    return ids;
}

namespace {

fs::path first_existing(const fs::path& root, std::initializer_list<const char*> names) {
    for (const char* n : names) {
        if (fs::is_directory(root / n)) return root / n;
    }
    fail(ErrorKind::io, "ATR root " + root.string() + " lacks an image or mask directory");
}

}  // namespace

Dataset gen_composition(const fs::path& atr_root, const EncoderClient& encoder, const DatagenOptions& options) {
    const auto image_dir = first_existing(atr_root, {"JPEGImages", "images"});
    const auto mask_dir = first_existing(atr_root, {"SegmentationClassAug", "masks"});
    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(image_dir)) {
        const auto ext = entry.path().extension().string();
        if (ext == ".jpg" || ext == ".jpeg" || ext == ".png") images.push_back(entry.path());
    }
    std::sort(images.begin(), images.end());
    Dataset ds;
    ds.header.operator_name = "composition";
    ds.header.dim = encoder.dim();
    ds.header.encoder_id = encoder.id();
    std::size_t skipped = 0;
    const auto& labels = atr_label_ids();
    const std::size_t limit = std::min(options.n, images.size());
    for (std::size_t i = 0; i < limit; ++i) {
        const auto& path = images[i];
        const auto mask_path = mask_dir / (path.stem().string() + ".png");
        try {
            if (!fs::exists(mask_path)) throw Skip("no mask for " + path.filename().string());
            const Image img = to_rgb(read_image(path));
            const Image seg = read_image(mask_path);
            if (seg.width != img.width || seg.height != img.height) throw Skip("mask size differs from image");
            TrainingSample s;
            nlohmann::json present = nlohmann::json::array();
            for (std::size_t k = 0; k < labels.size(); ++k) {
                Box box{img.width, img.height, 0, 0, 1.0};
                for (int y = 0; y < seg.height; ++y) {
                    for (int x = 0; x < seg.width; ++x) {
                        if (seg.at(x, y)[0] != labels[k]) continue;
                        box.x0 = std::min(box.x0, x);
                        box.y0 = std::min(box.y0, y);
                        box.x1 = std::max(box.x1, x + 1);
                        box.y1 = std::max(box.y1, y + 1);
                    }
                }
                if (!box.valid()) continue;  // absent category stays a zero slot
                Image part = Image::filled(box.width(), box.height(), 3, 255);
                for (int y = box.y0; y < box.y1; ++y) {
                    for (int x = box.x0; x < box.x1; ++x) {
                        if (seg.at(x, y)[0] == labels[k]) std::copy_n(img.at(x, y), 3, part.at(x - box.x0, y - box.y0));
                    }
                }
                s.conditions.push_back({k, with_retries(options.client_retries, "encoder",
                                                        [&] { return encoder.encode_image(part); })});
                present.push_back(k);
            }
            if (s.conditions.empty()) throw Skip("no garment categories in " + path.filename().string());
            s.target = with_retries(options.client_retries, "encoder", [&] { return encoder.encode_image(img); });
            s.provenance = {{"image", path.filename().string()}, {"categories", present}};
            ds.samples.push_back(std::move(s));
        } catch (const Skip& e) {
            ++skipped;
            if (options.log) options.log("composition image " + path.filename().string() + " skipped: " + e.what());
        }
    }
    ds.header.count = ds.samples.size();
    ds.header.attempted = limit;
    ds.header.extra = {{"skipped", skipped}, {"available_images", images.size()}};
    return ds;
}

// --- toy ----------------------------------------------------------------------

std::string to_string(ToyOracle::Kind kind) {
    switch (kind) {
        case ToyOracle::Kind::midpoint: return "midpoint";
        case ToyOracle::Kind::first_arg: return "first_arg";
        case ToyOracle::Kind::weighted_mix: return "weighted_mix";
        case ToyOracle::Kind::rotate: return "rotate";
    }
    return "unknown";
}

ToyOracle::Kind toy_oracle_from_string(const std::string& s) {
    if (s == "midpoint") return ToyOracle::Kind::midpoint;
    if (s == "first_arg") return ToyOracle::Kind::first_arg;
    if (s == "weighted_mix") return ToyOracle::Kind::weighted_mix;
    if (s == "rotate") return ToyOracle::Kind::rotate;
    fail(ErrorKind::invalid_argument, "unknown toy oracle '" + s + "'");
}

Eigen::MatrixXd rotation_matrix(std::size_t d, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x707a7e));
    Eigen::MatrixXd g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // Sign-fix so the factorisation is unique.
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    return q;
}

Embedding ToyOracle::apply(const std::vector<Embedding>& inputs) const {
    require(inputs.size() == arity(), ErrorKind::invalid_argument,
            "toy oracle " + to_string(kind) + " takes " + std::to_string(arity()) + " inputs");
    const std::size_t d = inputs.front().dim();
    for (const auto& e : inputs) require(e.dim() == d, ErrorKind::invalid_argument, "toy oracle dimension mismatch");
    std::vector<double> out(d);
    switch (kind) {
        case Kind::midpoint:
            for (std::size_t i = 0; i < d; ++i) out[i] = 0.5 * (inputs[0][i] + inputs[1][i]);
            break;
        case Kind::first_arg: return inputs[0];
        case Kind::weighted_mix:
            for (std::size_t i = 0; i < d; ++i) out[i] = weight * inputs[0][i] + (1.0 - weight) * inputs[1][i];
            break;
        case Kind::rotate: {
            const Eigen::MatrixXd q = rotation_matrix(d, matrix_seed);
            const Eigen::Map<const Eigen::VectorXd> a(inputs[0].values().data(), static_cast<Eigen::Index>(d));
            const Eigen::VectorXd r = q * a;
            out.assign(r.data(), r.data() + r.size());
            break;
        }
    }
    return Embedding(std::move(out), inputs[0].space());
}

nlohmann::json ToyOracle::to_json() const {
    nlohmann::json j{{"kind", to_string(kind)}};
    if (kind == Kind::weighted_mix) j["weight"] = weight;
    if (kind == Kind::rotate) j["matrix_seed"] = matrix_seed;
    return j;
}

Dataset gen_toy(const ToyOracle& oracle, std::size_t n, std::uint64_t seed, std::size_t d,
                const std::string& operator_name) {
    require(d > 0, ErrorKind::invalid_argument, "toy dimension must be positive");
    const auto op = operator_name.empty() ? oracle.default_operator() : operator_name;
    const auto spec = builtin_spec(op);
    require(spec.slot_map.arity() == oracle.arity(), ErrorKind::config,
            "toy oracle " + to_string(oracle.kind) + " has arity " + std::to_string(oracle.arity()) +
                " but operator '" + op + "' takes " + std::to_string(spec.slot_map.arity()));
    Dataset ds;
    ds.header.operator_name = to_string(spec.name);
    ds.header.count = n;
    ds.header.attempted = n;
    ds.header.dim = d;
    ds.header.toy = true;
    ds.header.encoder_id = "toy";
    ds.header.extra = {{"oracle", oracle.to_json()}, {"seed", seed}};
    Rng rng(seed);
    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        TrainingSample s;
        std::vector<Embedding> inputs;
        for (std::size_t k = 0; k < oracle.arity(); ++k) {
            const auto& entry = spec.slot_map.entries()[k];
            inputs.push_back(quantize_f32(Embedding(rng.normal_vector(d))));
            s.conditions.push_back({entry.slot, inputs.back()});
        }
        s.target = quantize_f32(oracle.apply(inputs));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace embops
