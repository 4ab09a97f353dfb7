// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "embops/bytes.hpp"
#include "embops/clients.hpp"
#include "embops/datagen.hpp"
#include "embops/dataset.hpp"
#include "embops/embedding.hpp"
#include "embops/error.hpp"
#include "embops/image.hpp"
#include "embops/metrics.hpp"
#include "embops/trainer.hpp"
#include "embops/tree.hpp"

namespace embops::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Signals a usage problem found after CLI11 parsing (missing flag, bad value).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void need(const CLI::Option* opt) {
    if (opt->count() == 0) throw UsageError(opt->get_name() + " is required");
}

// --config: a JSON object whose keys are long flag names ("batch_size" or
// "batch-size"). Flags given on the command line win.
void apply_config_file(CLI::App& sub, const std::string& path) {
    if (path.empty()) return;
    if (!fs::exists(path)) throw UsageError("config file not found: " + path);
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw UsageError("config file " + path + " is not JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
        std::string name = key;
        std::replace(name.begin(), name.end(), '_', '-');
        if (name == "config") throw UsageError("config files cannot nest");
        CLI::Option* opt = sub.get_option_no_throw("--" + name);
        if (opt == nullptr) throw UsageError("unknown config key '" + key + "' for " + sub.get_name());
        if (opt->count() > 0) continue;
        std::vector<std::string> results;
        const auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
        if (value.is_array()) {
            for (const auto& v : value) results.push_back(text(v));
        } else {
            results.push_back(text(value));
        }
        try {
            for (auto& r : results) opt->add_result(r);
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw UsageError("config key '" + key + "': " + e.what());
        }
    }
}

void echo_config(std::ostream& err, const std::string& command, const json& config) {
    err << json{{"command", command}, {"config", config}}.dump() << "\n";
}

std::shared_ptr<const EncoderClient> pick_encoder(const std::string& flag, std::size_t dim) {
    return flag.empty() ? encoder_from_env(dim) : make_encoder(flag, dim);
}

std::shared_ptr<const RendererClient> pick_renderer(const std::string& flag, std::size_t dim) {
    return flag.empty() ? renderer_from_env(dim) : make_renderer(flag, dim);
}

bool is_image_path(const std::string& ref) {
    auto ext = fs::path(ref).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// "text:<prompt>", an image path, or "<file>.pops[#i]".
Embedding resolve_input(const std::string& ref, std::size_t dim, const std::string& encoder_flag,
                        std::shared_ptr<const EncoderClient>& encoder) {
    const bool text = ref.rfind("text:", 0) == 0;
    if (text || is_image_path(ref)) {
        if (!encoder) encoder = pick_encoder(encoder_flag, dim);
        if (text) return encoder->encode_text(ref.substr(5));
        if (!fs::exists(ref)) fail(ErrorKind::io, "input not found: " + ref);
        return encoder->encode_image(read_image(ref));
    }
    const auto [file, index] = parse_embedding_ref(ref);
    if (!fs::exists(file)) fail(ErrorKind::io, "input not found: " + file);
    const auto batch = read_embeddings(file);
    if (index >= batch.size()) {
        fail(ErrorKind::config, "reference '" + ref + "' past end of file (" + std::to_string(batch.size()) +
                                    " embeddings)");
    }
    return batch[index];
}

void write_output(const std::string& path, const Embedding& e, const std::string& source) {
    const fs::path out(path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_embeddings(out, EmbeddingBatch({e}));
    write_meta(out, EmbeddingMeta{e.space(), e.dim(), source});
}

struct RenderFlags {
    std::string path;
    std::string renderer;
    std::string depth;

    void add(CLI::App& sub) {
        sub.add_option("--render", path, "Also render the embedding to this PNG");
        sub.add_option("--renderer", renderer, "Renderer: mock, mock:<kind> or <kind>@<url> (default $POPS_RENDERER)");
        sub.add_option("--depth", depth, "Depth image passed as spatial condition (ip_adapter_depth only)");
    }

    json to_json() const { return {{"render", path}, {"renderer", renderer}, {"depth", depth}}; }

    void run(const Embedding& e, std::uint64_t seed, std::ostream& err) const {
        if (path.empty()) {
            if (!depth.empty()) throw UsageError("--depth needs --render");
            return;
        }
        const auto renderer_client = pick_renderer(renderer, e.dim());
        RenderOptions options;
        options.seed = seed;
        if (!depth.empty()) options.spatial_condition = read_image(depth);
        const fs::path out(path);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        write_png(out, render(*renderer_client, e, options));
        err << "rendered " << path << " with " << renderer_client->id() << "\n";
    }
};

// --- datagen --------------------------------------------------------------------

struct DatagenCmd {
    std::string config;
    std::string op;
    std::size_t n = 100;
    std::uint64_t seed = 0;
    std::string clients = "mock";
    std::string out;
    std::size_t dim = 16;
    std::string encoder;
    std::string service;
    std::string vocab;
    std::string class_list;
    std::string atr_root;
    double white_background = 0.5;
    std::size_t min_textures = 1;
    std::size_t max_textures = 5;
    double detector_miss_rate = 0.0;
    std::string oracle = "midpoint";
    double oracle_weight = 0.5;
    std::uint64_t matrix_seed = 0;
    CLI::Option* o_op = nullptr;
    CLI::Option* o_out = nullptr;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("datagen", "Build a paired training manifest");
        sub->add_option("--config", config, "JSON file of flag defaults");
        o_op = sub->add_option("--operator", op, "texturing|scene|union|instruct|composition|toy");
        sub->add_option("--n", n, "Samples to attempt (skips are logged, not replaced)");
        sub->add_option("--seed", seed, "Generation seed");
        sub->add_option("--clients", clients, "mock|real")->check(CLI::IsMember({"mock", "real"}));
        o_out = sub->add_option("--out", out, "Manifest path (.jsonl)");
        sub->add_option("--d", dim, "Embedding dimension of the mock encoder and toy data");
        sub->add_option("--encoder", encoder, "Encoder for real clients (default $POPS_ENCODER)");
        sub->add_option("--service", service, "Base URL of the generation service (default $POPS_DATAGEN_URL)");
        sub->add_option("--vocab", vocab, "Vocabulary directory");
        sub->add_option("--class-list", class_list, "Class list file or class-descriptions CSV for union/instruct");
        sub->add_option("--atr-root", atr_root, "Human-parsing dataset root for composition");
        sub->add_option("--white-background", white_background, "Probability of a white scene backdrop")
            ->check(CLI::Range(0.0, 1.0));
        sub->add_option("--min-textures", min_textures, "Fewest texture words per object");
        sub->add_option("--max-textures", max_textures, "Most texture words per object");
        sub->add_option("--detector-miss-rate", detector_miss_rate, "Mock detector miss probability")
            ->check(CLI::Range(0.0, 1.0));
        sub->add_option("--oracle", oracle, "Toy oracle: midpoint|first_arg|weighted_mix|rotate");
        sub->add_option("--oracle-weight", oracle_weight, "weighted_mix weight on the first input");
        sub->add_option("--matrix-seed", matrix_seed, "rotate oracle matrix seed");
        sub->callback([this, sub] { apply_config_file(*sub, config); });
    }

    json to_json() const {
        return {{"operator", op},
                {"n", n},
                {"seed", seed},
                {"clients", clients},
                {"out", out},
                {"d", dim},
                {"encoder", encoder},
                {"service", service},
                {"vocab", vocab},
                {"class_list", class_list},
                {"atr_root", atr_root},
                {"white_background", white_background},
                {"min_textures", min_textures},
                {"max_textures", max_textures},
                {"detector_miss_rate", detector_miss_rate},
                {"oracle", oracle},
                {"oracle_weight", oracle_weight},
                {"matrix_seed", matrix_seed}};
    }

    int run(std::ostream& out_stream, std::ostream& err) {
        need(o_op);
        need(o_out);
        echo_config(err, "datagen", to_json());
        Dataset ds;
        const auto started = std::chrono::steady_clock::now();
        if (op == "toy") {
            ToyOracle o;
            o.kind = toy_oracle_from_string(oracle);
            o.weight = oracle_weight;
            o.matrix_seed = matrix_seed;
            ds = gen_toy(o, n, seed, dim);
        } else {
            DatagenOptions options;
            options.n = n;
            options.seed = seed;
            options.white_background_probability = white_background;
            options.min_textures = min_textures;
            options.max_textures = max_textures;
            options.log = [&err](const std::string& line) { err << "skip: " << line << "\n"; };
            const auto name = operator_from_string(op);
            if (name == OperatorName::composition) {
                if (atr_root.empty()) throw UsageError("--atr-root is required for composition");
                const auto enc = clients == "mock" ? make_encoder("mock:" + std::to_string(dim), dim)
                                                   : pick_encoder(encoder, dim);
                ds = gen_composition(atr_root, *enc, options);
            } else {
                DatagenClients dc;
                if (clients == "mock") {
                    dc = make_mock_datagen_clients(dim, detector_miss_rate);
                } else {
                    std::string url = service;
                    if (url.empty()) {
                        const char* env = std::getenv("POPS_DATAGEN_URL");
                        if (env == nullptr) throw UsageError("--clients real needs --service or $POPS_DATAGEN_URL");
                        url = env;
                    }
                    dc = make_http_datagen_clients(url, pick_encoder(encoder, dim));
                }
                const auto vocabulary =
                    Vocabulary::load(vocab.empty() ? Vocabulary::default_dir() : fs::path(vocab),
                                     class_list.empty() ? std::nullopt : std::optional<fs::path>(class_list));
                switch (name) {
                    case OperatorName::texturing: ds = gen_texturing(dc, vocabulary, options); break;
                    case OperatorName::scene: ds = gen_scene(dc, vocabulary, options); break;
                    case OperatorName::union_op: ds = gen_union(dc, vocabulary, options); break;
                    case OperatorName::instruct: ds = gen_instruct(dc, vocabulary, options); break;
                    default: throw UsageError("datagen has no pipeline for operator '" + op + "'");
                }
                if ((name == OperatorName::union_op || name == OperatorName::instruct) &&
                    vocabulary.classes_from_fallback) {
                    err << "no --class-list given; drawing classes from the object vocabulary\n";
                    ds.header.extra["classes_from_fallback"] = true;
                }
            }
        }
        const fs::path path(out);
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_dataset(path, ds);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        out_stream << "wrote " << ds.samples.size() << " of " << ds.header.attempted << " samples to " << out << " ("
                   << std::fixed << std::setprecision(1) << secs << " s)\n";
        return kExitOk;
    }
};

// --- train --------------------------------------------------------------------

struct TrainCmd {
    std::string config;
    std::string op;
    std::string manifest;
    std::string out;
    std::string preset = "toy";
    std::string encoder;
    std::string warm_start_path;
    std::string resume;
    TrainConfig tc = TrainConfig::toy();
    double clip_norm = 1.0;
    double p_drop = 0.0;
    double per_slot_drop = 0.0;
    bool no_clip = false;
    std::vector<std::size_t> train_layers;
    PriorConfig prior;
    std::string attention = "causal";
    std::string time_embedding = "sinusoidal";
    std::string schedule = "cosine";
    std::size_t timesteps = 1000;
    double guidance_scale = 4.0;
    std::map<std::string, CLI::Option*> opts;

    CLI::App* sub = nullptr;

    template <typename T>
    void opt(const std::string& name, T& var, const std::string& help) {
        opts[name] = sub->add_option("--" + name, var, help);
    }

    void add(CLI::App& app) {
        sub = app.add_subcommand("train", "Train an operator prior on a manifest");
        sub->add_option("--config", config, "JSON file of flag defaults");
        opt("operator", op, "Operator to train (texturing, scene, union, instruct, composition, identity)");
        opt("manifest", manifest, "Training manifest (.jsonl)");
        opt("out", out, "Checkpoint path");
        opt("preset", preset, "Hyperparameter preset: toy|full");
        opt("encoder", encoder, "Encoder for image references in the manifest (default $POPS_ENCODER)");
        opt("warm-start", warm_start_path, "Initialise the prior from this checkpoint");
        opt("resume", resume, "Continue training from this checkpoint");
        opt("lr", tc.lr, "Learning rate");
        opt("batch-size", tc.batch_size, "Samples per step");
        opt("max-steps", tc.max_steps, "Total optimiser steps");
        opt("p-drop", p_drop, "Joint condition drop probability");
        opt("per-slot-drop", per_slot_drop, "Per-slot condition drop probability");
        opt("seed", tc.seed, "Training seed");
        opt("weight-decay", tc.weight_decay, "AdamW weight decay");
        opt("beta1", tc.beta1, "Adam beta1");
        opt("beta2", tc.beta2, "Adam beta2");
        opt("adam-eps", tc.adam_eps, "Adam epsilon");
        opt("clip-norm", clip_norm, "Global gradient-norm clip");
        opts["no-clip"] = sub->add_flag("--no-clip", no_clip, "Disable gradient clipping");
        opts["unit-variance"] = sub->add_flag("--unit-variance", tc.unit_variance, "Rescale embeddings to unit variance");
        opt("log-every", tc.log_every, "Steps between progress lines");
        opt("checkpoint-every", tc.checkpoint_every, "Steps between periodic checkpoints (0: final only)");
        opt("train-layers", train_layers, "Train only these transformer blocks");
        opt("layers", prior.layers, "Transformer blocks");
        opt("heads", prior.heads, "Attention heads");
        opt("width", prior.width, "Model width");
        opt("mlp-hidden", prior.mlp_hidden, "MLP hidden size");
        opt("attention", attention, "causal|full");
        opt("time-embedding", time_embedding, "sinusoidal|learned");
        opt("schedule", schedule, "Noise schedule: cosine|linear");
        opt("timesteps", timesteps, "Diffusion timesteps");
        opt("guidance-scale", guidance_scale, "Default guidance scale stored in the checkpoint");
        opts["attention"]->check(CLI::IsMember({"causal", "full"}));
        opts["time-embedding"]->check(CLI::IsMember({"sinusoidal", "learned"}));
        opts["schedule"]->check(CLI::IsMember({"cosine", "linear"}));
        opts["preset"]->check(CLI::IsMember({"toy", "full"}));
        sub->callback([this] { apply_config_file(*sub, config); });
    }

    bool given(const std::string& name) const { return opts.at(name)->count() > 0; }

    // Preset values, then anything given by flag or config file.
    TrainConfig resolved_train() const {
        TrainConfig c = TrainConfig::preset(preset);
        const auto take = [&](const char* name, auto& dst, const auto& src) {
            if (given(name)) dst = src;
        };
        take("lr", c.lr, tc.lr);
        take("batch-size", c.batch_size, tc.batch_size);
        take("max-steps", c.max_steps, tc.max_steps);
        take("p-drop", c.p_drop, p_drop);
        take("per-slot-drop", c.per_slot_drop, per_slot_drop);
        take("seed", c.seed, tc.seed);
        take("weight-decay", c.weight_decay, tc.weight_decay);
        take("beta1", c.beta1, tc.beta1);
        take("beta2", c.beta2, tc.beta2);
        take("adam-eps", c.adam_eps, tc.adam_eps);
        take("unit-variance", c.unit_variance, tc.unit_variance);
        take("log-every", c.log_every, tc.log_every);
        take("checkpoint-every", c.checkpoint_every, tc.checkpoint_every);
        if (given("clip-norm")) c.clip_norm = clip_norm;
        if (no_clip) c.clip_norm.reset();
        if (given("train-layers")) c.freeze = FreezePolicy::subset(train_layers);
        c.validate();
        return c;
    }

    PriorConfig resolved_prior(std::size_t dim) const {
        PriorConfig p = prior;
        p.dim = dim;
        p.attention = attention == "full" ? AttentionKind::full : AttentionKind::causal;
        p.time_embedding = time_embedding == "learned" ? TimeEmbeddingKind::learned : TimeEmbeddingKind::sinusoidal;
        p.num_timesteps = timesteps;
        p.validate();
        return p;
    }

    bool prior_flags_given() const {
        for (const char* name : {"layers", "heads", "width", "mlp-hidden", "attention", "time-embedding"}) {
            if (given(name)) return true;
        }
        return false;
    }

    int run(std::ostream& out_stream, std::ostream& err) {
        need(opts.at("manifest"));
        need(opts.at("out"));
        if (!warm_start_path.empty() && !resume.empty()) throw UsageError("--warm-start and --resume are exclusive");

        const auto header = read_manifest_header(manifest);
        std::string op_name = op;
        if (op_name.empty()) {
            if (resume.empty()) throw UsageError("--operator is required");
        }
        std::shared_ptr<const EncoderClient> enc;
        if (!encoder.empty() || std::getenv("POPS_ENCODER") != nullptr) enc = pick_encoder(encoder, header.dim);
        if (!enc) enc = make_encoder("mock:" + std::to_string(header.dim), header.dim);
        const Dataset ds = load_dataset(manifest, enc.get());

        TrainState state = [&] {
            if (!resume.empty()) {
                const Checkpoint ckpt = load_checkpoint(resume);
                TrainState s = restore_train_state(ckpt);
                if (given("max-steps")) s.config.max_steps = tc.max_steps;
                if (!op_name.empty() && operator_from_string(op_name) != s.spec.name) {
                    fail(ErrorKind::config, "--operator " + op_name + " does not match the resumed checkpoint (" +
                                                to_string(s.spec.name) + ")");
                }
                return s;
            }
            const auto spec = builtin_spec(operator_from_string(op_name));
            const TrainConfig c = resolved_train();
            if (!warm_start_path.empty()) {
                const Checkpoint base = load_checkpoint(warm_start_path);
                auto s = warm_start(base, spec, c,
                                    prior_flags_given() ? std::optional(resolved_prior(header.dim)) : std::nullopt);
                s.guidance_scale = guidance_scale;
                return s;
            }
            auto sched = NoiseSchedule::make(schedule == "linear" ? ScheduleKind::linear : ScheduleKind::cosine,
                                             timesteps);
            auto s = init_train_state(resolved_prior(header.dim), std::move(sched), spec, c);
            s.guidance_scale = guidance_scale;
            return s;
        }();

        if (!header.operator_name.empty() && operator_from_string(header.operator_name) != state.spec.name) {
            const auto built = builtin_spec(operator_from_string(header.operator_name));
            if (built.slot_map != state.spec.slot_map) {
                fail(ErrorKind::config, "arity mismatch: manifest was built for '" + header.operator_name + "' (" +
                                            std::to_string(built.slot_map.arity()) + " inputs), '" +
                                            to_string(state.spec.name) + "' takes " +
                                            std::to_string(state.spec.slot_map.arity()));
            }
            err << "warning: manifest was built for '" << header.operator_name << "', training '"
                << to_string(state.spec.name) << "'\n";
        }
        check_dataset(state.spec, state.net.config().dim, ds);

        echo_config(err, "train",
                    {{"operator", to_string(state.spec.name)},
                     {"manifest", manifest},
                     {"out", out},
                     {"samples", ds.samples.size()},
                     {"warm_start", warm_start_path},
                     {"resume", resume},
                     {"train", state.config.to_json()},
                     {"prior", state.net.config().to_json()},
                     {"schedule", {{"kind", to_string(state.schedule.kind())}, {"timesteps", state.schedule.steps()}}},
                     {"operator_spec", state.spec.to_json()},
                     {"guidance_scale", state.guidance_scale}});

        const fs::path out_path(out);
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        FitHooks hooks;
        const std::size_t total = state.config.max_steps;
        hooks.on_log = [&err, total](const FitProgress& p) {
            err << "step " << p.step << "/" << total << " loss " << std::setprecision(6) << p.loss << " ("
                << std::fixed << std::setprecision(1) << p.steps_per_sec << " it/s)" << std::defaultfloat << "\n";
        };
        hooks.on_checkpoint = [&err, &out_path](const Checkpoint& c) {
            save_checkpoint(out_path, c);
            err << "checkpoint step " << c.step << " -> " << out_path.string() << "\n";
        };
        const FitReport report = fit(state, ds, hooks);
        save_checkpoint(out_path, to_checkpoint(state));
        if (!report.losses.empty()) {
            out_stream << "trained " << report.losses.size() << " steps; first loss " << report.losses.front()
                       << ", final loss " << report.losses.back() << "; checkpoint " << out << "\n";
        } else {
            out_stream << "already at step " << state.step << "; checkpoint " << out << "\n";
        }
        return kExitOk;
    }
};

// --- sample -------------------------------------------------------------------

struct SampleCmd {
    std::string config;
    std::string checkpoint;
    std::vector<std::string> inputs;
    std::uint64_t seed = 0;
    double scale = 4.0;
    std::size_t steps = 25;
    bool renormalize = false;
    std::string out;
    std::string encoder;
    RenderFlags render;
    CLI::Option* o_ckpt = nullptr;
    CLI::Option* o_out = nullptr;
    CLI::Option* o_scale = nullptr;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("sample", "Sample one embedding from an operator checkpoint");
        sub->add_option("--config", config, "JSON file of flag defaults");
        o_ckpt = sub->add_option("--checkpoint", checkpoint, "Operator checkpoint");
        sub->add_option("--inputs", inputs, "slot=ref pairs; slot is an index or role, ref a .pops[#i], image or text:...");
        sub->add_option("--seed", seed, "Sampler seed");
        o_scale = sub->add_option("--scale", scale, "Guidance scale (default: the checkpoint's)");
        sub->add_option("--steps", steps, "Denoising steps");
        sub->add_flag("--renormalize", renormalize, "Rescale the output to the training mean norm");
        o_out = sub->add_option("--out", out, "Output .pops file");
        sub->add_option("--encoder", encoder, "Encoder for image/text inputs (default $POPS_ENCODER)");
        render.add(*sub);
        sub->callback([this, sub] { apply_config_file(*sub, config); });
    }

    int run(std::ostream& out_stream, std::ostream& err) {
        need(o_ckpt);
        need(o_out);
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        const OperatorModel model(ckpt);
        const auto& slot_map = model.spec().slot_map;
        std::shared_ptr<const EncoderClient> enc;
        std::vector<SlotCondition> conditions;
        for (const auto& item : inputs) {
            const auto eq = item.find('=');
            if (eq == std::string::npos || eq == 0) throw UsageError("--inputs expects slot=ref, got '" + item + "'");
            const std::string key = item.substr(0, eq);
            std::size_t slot = 0;
            if (key.find_first_not_of("0123456789") == std::string::npos) {
                slot = std::stoul(key);
            } else {
                const auto& entries = slot_map.entries();
                const auto it = std::find_if(entries.begin(), entries.end(), [&](const SlotEntry& e) { return e.role == key; });
                if (it == entries.end()) {
                    fail(ErrorKind::config, "operator '" + to_string(model.spec().name) + "' has no input '" + key + "'");
                }
                slot = it->slot;
            }
            if (!slot_map.contains_slot(slot)) {
                fail(ErrorKind::config, "arity mismatch: slot " + std::to_string(slot) + " is not an input of '" +
                                            to_string(model.spec().name) + "'");
            }
            for (const auto& c : conditions) {
                if (c.slot == slot) throw UsageError("slot " + std::to_string(slot) + " given twice");
            }
            conditions.push_back({slot, resolve_input(item.substr(eq + 1), model.dim(), encoder, enc)});
        }
        SamplerOptions options;
        options.steps = steps;
        options.seed = seed;
        options.guidance.scale = o_scale->count() > 0 ? scale : model.guidance_scale();
        if (renormalize) options.renormalize_to = model.target_mean_norm();

        json resolved{{"checkpoint", checkpoint}, {"inputs", inputs},   {"seed", seed},
                      {"scale", options.guidance.scale}, {"steps", steps}, {"renormalize", renormalize},
                      {"out", out},                {"encoder", encoder}};
        resolved.update(render.to_json());
        echo_config(err, "sample", resolved);

        const Embedding e = model.sample(conditions, options);
        write_output(out, e, "sample:" + to_string(model.spec().name));
        render.run(e, seed, err);
        out_stream << "wrote " << out << " (d=" << e.dim() << ", |e|=" << e.norm() << ")\n";
        return kExitOk;
    }
};

// --- compose ------------------------------------------------------------------

struct ComposeCmd {
    std::string config;
    std::string tree;
    std::string registry;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t steps = 25;
    bool trace = false;
    std::string encoder;
    RenderFlags render;
    CLI::Option* o_tree = nullptr;
    CLI::Option* o_registry = nullptr;
    CLI::Option* o_out = nullptr;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("compose", "Evaluate a generative tree");
        sub->add_option("--config", config, "JSON file of flag defaults");
        o_tree = sub->add_option("--tree", tree, "Tree program (.pops-tree)");
        o_registry = sub->add_option("--registry", registry, "JSON map operator -> checkpoint");
        o_out = sub->add_option("--out", out, "Output .pops file");
        sub->add_option("--seed", seed, "Program seed");
        sub->add_option("--steps", steps, "Denoising steps per node");
        sub->add_flag("--trace", trace, "Log each evaluated node");
        sub->add_option("--encoder", encoder, "Encoder for image/text leaves (default $POPS_ENCODER)");
        render.add(*sub);
        sub->callback([this, sub] { apply_config_file(*sub, config); });
    }

    int run(std::ostream& out_stream, std::ostream& err) {
        need(o_tree);
        need(o_registry);
        need(o_out);
        if (!fs::exists(tree)) fail(ErrorKind::io, "tree not found: " + tree);
        TreeProgram program;
        try {
            program = parse_tree(read_text_file(tree));
        } catch (const ParseError& e) {
            throw UsageError(tree + ":" + std::to_string(e.line()) + ":" + std::to_string(e.column()) + ": " +
                             e.message());
        }
        const auto reg = OperatorRegistry::from_file(registry);
        json resolved{{"tree", tree}, {"registry", registry}, {"out", out},
                      {"seed", seed}, {"steps", steps},       {"encoder", encoder}};
        resolved.update(render.to_json());
        echo_config(err, "compose", resolved);

        std::shared_ptr<const EncoderClient> enc;
        if (const auto d = reg.dim()) enc = pick_encoder(encoder, *d);
        EvalOptions options;
        options.seed = seed;
        options.steps = steps;
        options.base_dir = fs::path(tree).parent_path();
        if (options.base_dir.empty()) options.base_dir = ".";
        options.encoder = enc.get();
        if (trace) options.trace = [&err](const std::string& line) { err << "eval " << line << "\n"; };
        const Embedding e = evaluate(program, reg, options);
        write_output(out, e, "tree:" + fs::path(tree).filename().string());
        render.run(e, seed, err);
        out_stream << "wrote " << out << " (d=" << e.dim() << ")\n";
        return kExitOk;
    }
};

// --- eval ---------------------------------------------------------------------

struct EvalCmd {
    std::string config;
    std::string records;
    std::string items;
    std::string out;
    std::string records_out;
    std::string encoder;
    std::string sentence_encoder;
    std::size_t dim = 16;
    CLI::Option* o_out = nullptr;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("eval", "Score outputs and summarise per method");
        sub->add_option("--config", config, "JSON file of flag defaults");
        sub->add_option("--records", records, "Per-output scores CSV to summarise");
        sub->add_option("--items", items, "JSONL of outputs to score (see README)");
        o_out = sub->add_option("--out", out, "Summary CSV");
        sub->add_option("--records-out", records_out, "Write the per-output scores computed from --items");
        sub->add_option("--encoder", encoder, "Image/text encoder (default $POPS_ENCODER)");
        sub->add_option("--sentence-encoder", sentence_encoder,
                        "mock or an http URL (default $POPS_SENTENCE_ENCODER, else mock)");
        sub->add_option("--d", dim, "Mock encoder dimension");
        sub->callback([this, sub] { apply_config_file(*sub, config); });
    }

    std::vector<EvalRecord> score_items(bool& proxy) const {
        const auto enc = pick_encoder(encoder, dim);
        std::string sentence = sentence_encoder;
        if (sentence.empty()) {
            const char* env = std::getenv("POPS_SENTENCE_ENCODER");
            sentence = env != nullptr ? env : "mock";
        }
        std::unique_ptr<SentenceEncoderClient> sent;
        if (sentence == "mock") sent = std::make_unique<MockSentenceEncoder>();
        else sent = std::make_unique<HttpSentenceEncoder>(sentence);
        const ProxyImageSimilarity image_sim(enc);
        proxy = image_sim.is_proxy();

        if (!fs::exists(items)) fail(ErrorKind::io, "items not found: " + items);
        const fs::path base = fs::path(items).parent_path();
        const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
        std::istringstream in(read_text_file(items));
        std::string line;
        std::size_t number = 0;
        std::vector<EvalRecord> out_records;
        while (std::getline(in, line)) {
            ++number;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                const auto j = json::parse(line);
                EvalRecord r;
                r.object_id = j.at("object_id").get<std::string>();
                r.adjective = j.at("adjective").get<std::string>();
                r.method = j.at("method").get<std::string>();
                const Image output = read_image(resolve(j.at("output").get<std::string>()));
                const Image source = read_image(resolve(j.at("source").get<std::string>()));
                r.image_similarity = std::clamp(image_sim.similarity(output, source), -1.0, 1.0);
                r.text_similarity =
                    text_similarity(enc->encode_image(output), enc->encode_text(text_prompt(r.adjective)));
                r.sentence_similarity =
                    sentence_similarity(j.at("generated_caption").get<std::string>(),
                                        sentence_reference(r.adjective, j.at("caption").get<std::string>()), *sent);
                out_records.push_back(std::move(r));
            } catch (const json::exception& e) {
                fail(ErrorKind::format, items + " line " + std::to_string(number) + ": " + e.what());
            }
        }
        return out_records;
    }

    int run(std::ostream& out_stream, std::ostream& err) {
        need(o_out);
        if (records.empty() == items.empty()) throw UsageError("give exactly one of --records or --items");
        echo_config(err, "eval",
                    {{"records", records},
                     {"items", items},
                     {"out", out},
                     {"records_out", records_out},
                     {"encoder", encoder},
                     {"sentence_encoder", sentence_encoder},
                     {"d", dim}});
        bool proxy = true;
        std::vector<EvalRecord> rs;
        if (!records.empty()) {
            if (!fs::exists(records)) fail(ErrorKind::io, "records not found: " + records);
            rs = parse_records_csv(read_text_file(records));
        } else {
            rs = score_items(proxy);
            if (!records_out.empty()) write_text_file(records_out, records_csv(rs));
        }
        const auto summary = aggregate(rs);
        write_summary_csv(out, summary);
        out_stream << summary_csv(summary);
        out_stream << "image_sim: " << (proxy ? "proxy (embedding cosine)" : "perceptual") << "\n";
        out_stream << reference_table(proxy);
        return kExitOk;
    }
};

// --- avg ----------------------------------------------------------------------

struct AvgCmd {
    std::string config;
    std::vector<std::string> inputs;
    std::string out;
    std::string encoder;
    std::size_t dim = 16;
    RenderFlags render;
    CLI::Option* o_out = nullptr;

    void add(CLI::App& app) {
        auto* sub = app.add_subcommand("avg", "Average embeddings (latent-averaging baseline)");
        sub->add_option("--config", config, "JSON file of flag defaults");
        sub->add_option("--inputs", inputs, "Refs: .pops[#i], image paths or text:...");
        o_out = sub->add_option("--out", out, "Output .pops file");
        sub->add_option("--encoder", encoder, "Encoder for image/text inputs (default $POPS_ENCODER)");
        sub->add_option("--d", dim, "Dimension for the encoder when no .pops input fixes it");
        render.add(*sub);
        sub->callback([this, sub] { apply_config_file(*sub, config); });
    }

    int run(std::ostream& out_stream, std::ostream& err) {
        need(o_out);
        if (inputs.empty()) throw UsageError("--inputs needs at least one embedding");
        json resolved{{"inputs", inputs}, {"out", out}, {"encoder", encoder}, {"d", dim}};
        resolved.update(render.to_json());
        echo_config(err, "avg", resolved);
        std::shared_ptr<const EncoderClient> enc;
        std::vector<Embedding> items;
        for (const auto& ref : inputs) items.push_back(resolve_input(ref, dim, encoder, enc));
        const Embedding e = average(EmbeddingBatch(std::move(items)));
        write_output(out, e, "average");
        render.run(e, 0, err);
        out_stream << "wrote " << out << " (mean of " << inputs.size() << ")\n";
        return kExitOk;
    }
};

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument:
        case ErrorKind::format:
        case ErrorKind::io:
        case ErrorKind::config: return kExitUsage;
        case ErrorKind::client:
        case ErrorKind::training: return kExitRuntime;
    }
    return kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Operator priors over image embeddings", "embops");
    app.require_subcommand(1);
    app.set_version_flag("--version", "embops 0.1.0");
    DatagenCmd datagen;
    TrainCmd train;
    SampleCmd sample;
    ComposeCmd compose;
    EvalCmd eval;
    AvgCmd avg;
    datagen.add(app);
    train.add(app);
    sample.add(app);
    compose.add(app);
    eval.add(app);
    avg.add(app);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << "embops 0.1.0\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        // Subcommand --help surfaces here as well.
        if (e.get_exit_code() == 0) {
            for (auto* sub : app.get_subcommands()) out << sub->help();
            if (app.get_subcommands().empty()) out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "datagen") return datagen.run(out, err);
        if (name == "train") return train.run(out, err);
        if (name == "sample") return sample.run(out, err);
        if (name == "compose") return compose.run(out, err);
        if (name == "eval") return eval.run(out, err);
        return avg.run(out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace embops::cli
