// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "embops/bytes.hpp"
#include "embops/error.hpp"

namespace embops {

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::toy() {
    TrainConfig c;
    c.lr = 1e-3;
    c.batch_size = 32;
    c.max_steps = 2000;
    c.log_every = 100;
    return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
    if (name == "full") return full();
    if (name == "toy") return toy();
    fail(ErrorKind::config, "unknown trainer preset '" + name + "' (expected full or toy)");
}

void TrainConfig::validate() const {
    require(std::isfinite(lr) && lr >= 0.0, ErrorKind::config, "lr must be >= 0");
    require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
    require(max_steps >= 1, ErrorKind::config, "max_steps must be >= 1");
    if (p_drop) require(*p_drop >= 0.0 && *p_drop <= 1.0, ErrorKind::config, "p_drop must be in [0,1]");
    if (per_slot_drop) {
        require(*per_slot_drop >= 0.0 && *per_slot_drop <= 1.0, ErrorKind::config, "per_slot_drop must be in [0,1]");
    }
    require(weight_decay >= 0.0, ErrorKind::config, "weight_decay must be >= 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::config,
            "Adam betas must be in [0,1)");
    require(adam_eps > 0.0, ErrorKind::config, "adam_eps must be > 0");
    if (clip_norm) require(*clip_norm > 0.0, ErrorKind::config, "clip_norm must be > 0");
    require(log_every >= 1, ErrorKind::config, "log_every must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j{{"lr", lr},
                     {"batch_size", batch_size},
                     {"max_steps", max_steps},
                     {"freeze", freeze.to_json()},
                     {"seed", seed},
                     {"weight_decay", weight_decay},
                     {"beta1", beta1},
                     {"beta2", beta2},
                     {"adam_eps", adam_eps},
                     {"unit_variance", unit_variance},
                     {"log_every", log_every},
                     {"checkpoint_every", checkpoint_every}};
    j["p_drop"] = p_drop ? nlohmann::json(*p_drop) : nlohmann::json(nullptr);
    j["per_slot_drop"] = per_slot_drop ? nlohmann::json(*per_slot_drop) : nlohmann::json(nullptr);
    j["clip_norm"] = clip_norm ? nlohmann::json(*clip_norm) : nlohmann::json(nullptr);
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
    static const std::set<std::string> known{"lr",       "batch_size", "max_steps", "p_drop",        "per_slot_drop",
                                             "freeze",   "seed",       "weight_decay", "beta1",      "beta2",
                                             "adam_eps", "clip_norm",  "unit_variance", "log_every", "checkpoint_every",
                                             "preset"};
    require(j.is_object(), ErrorKind::config, "train config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        require(known.count(key) == 1, ErrorKind::config, "unknown train config key '" + key + "'");
    }
    try {
        TrainConfig c = j.contains("preset") ? preset(j["preset"].get<std::string>()) : base;
        c.lr = j.value("lr", c.lr);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_steps = j.value("max_steps", c.max_steps);
        const auto opt = [&](const char* key, std::optional<double>& field) {
            if (!j.contains(key)) return;
            field = j[key].is_null() ? std::nullopt : std::optional<double>(j[key].get<double>());
        };
        opt("p_drop", c.p_drop);
        opt("per_slot_drop", c.per_slot_drop);
        opt("clip_norm", c.clip_norm);
        if (j.contains("freeze")) c.freeze = FreezePolicy::from_json(j["freeze"]);
        c.seed = j.value("seed", c.seed);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.unit_variance = j.value("unit_variance", c.unit_variance);
        c.log_every = j.value("log_every", c.log_every);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::config, std::string("bad train config: ") + e.what());
    }
}

std::string to_string(ModelKind kind) { return kind == ModelKind::prior ? "prior" : "identity"; }

// --- checkpoint archive ----------------------------------------------------

namespace {

constexpr char kArchiveMagic[] = "POPSARC1";

std::vector<float> decode_blob(const std::vector<std::uint8_t>& bytes, std::size_t expected, const char* name) {
    auto v = decode_tensor_f32(bytes);
    if (v.size() != expected) {
        fail(ErrorKind::format, std::string("checkpoint ") + name + " has " + std::to_string(v.size()) +
                                    " values, expected " + std::to_string(expected));
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json config{{"format", 1},
                          {"kind", to_string(ckpt.kind)},
                          {"prior", ckpt.prior.to_json()},
                          {"schedule", ckpt.schedule.to_json()},
                          {"operator", ckpt.spec.to_json()},
                          {"train", ckpt.train.to_json()},
                          {"guidance_scale", ckpt.guidance_scale},
                          {"target_mean_norm", ckpt.target_mean_norm},
                          {"step", ckpt.step}};
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> entries;
    const auto cfg_text = config.dump(2);
    entries.emplace_back("config.json", std::vector<std::uint8_t>(cfg_text.begin(), cfg_text.end()));
    entries.emplace_back("params.pops", encode_tensor_f32(ckpt.params));
    entries.emplace_back("adam_m.pops", encode_tensor_f32(ckpt.adam_m));
    entries.emplace_back("adam_v.pops", encode_tensor_f32(ckpt.adam_v));
    entries.emplace_back("rng.state", std::vector<std::uint8_t>(ckpt.rng_state.begin(), ckpt.rng_state.end()));

    ByteWriter w;
    w.raw(std::string_view(kArchiveMagic, 8));
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, bytes] : entries) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name);
        w.u64(bytes.size());
        w.raw(bytes);
    }
    write_file_bytes(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::io, "checkpoint not found: " + path.string());
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    const auto magic = r.raw(8);
    if (!std::equal(magic.begin(), magic.end(), kArchiveMagic)) {
        fail(ErrorKind::format, "magic mismatch: " + path.string() + " is not a checkpoint archive");
    }
    std::map<std::string, std::vector<std::uint8_t>> entries;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto len = r.u32();
        const auto name_bytes = r.raw(len);
        const auto size = r.u64();
        const auto data = r.raw(static_cast<std::size_t>(size));
        entries.emplace(std::string(name_bytes.begin(), name_bytes.end()),
                        std::vector<std::uint8_t>(data.begin(), data.end()));
    }
    for (const char* required : {"config.json", "params.pops", "adam_m.pops", "adam_v.pops", "rng.state"}) {
        if (!entries.count(required)) fail(ErrorKind::format, std::string("checkpoint lacks ") + required);
    }
    Checkpoint c;
    try {
        const auto& raw = entries["config.json"];
        const auto j = nlohmann::json::parse(raw.begin(), raw.end());
        c.kind = j.at("kind").get<std::string>() == "identity" ? ModelKind::identity : ModelKind::prior;
        c.prior = PriorConfig::from_json(j.at("prior"));
        c.schedule = NoiseSchedule::from_json(j.at("schedule"));
        c.spec = OperatorSpec::from_json(j.at("operator"));
        c.train = TrainConfig::from_json(j.at("train"));
        c.guidance_scale = j.at("guidance_scale").get<double>();
        c.target_mean_norm = j.value("target_mean_norm", 0.0);
        c.step = j.at("step").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("bad checkpoint config: ") + e.what());
    }
    const std::size_t expected = c.kind == ModelKind::prior ? ParamLayout(c.prior).total() : 0;
    c.params = decode_blob(entries["params.pops"], expected, "params");
    c.adam_m = decode_blob(entries["adam_m.pops"], expected, "adam_m");
    c.adam_v = decode_blob(entries["adam_v.pops"], expected, "adam_v");
    const auto& rs = entries["rng.state"];
    c.rng_state.assign(rs.begin(), rs.end());
    return c;
}

Checkpoint make_identity_checkpoint(std::size_t d, NoiseSchedule schedule) {
    Checkpoint c;
    c.kind = ModelKind::identity;
    c.prior.dim = d;
    c.schedule = std::move(schedule);
    c.spec = builtin_spec(OperatorName::identity);
    c.guidance_scale = 1.0;
    c.rng_state = Rng(0).state();
    return c;
}

// --- training state ----------------------------------------------------------

namespace {

OperatorSpec effective_spec(OperatorSpec spec, const TrainConfig& config) {
    if (config.p_drop) spec.drop.joint = *config.p_drop;
    if (config.per_slot_drop) spec.drop.per_slot = *config.per_slot_drop;
    spec.validate();
    return spec;
}

}  // namespace

TrainState init_train_state(const PriorConfig& prior, NoiseSchedule schedule, OperatorSpec spec, TrainConfig config) {
    config.validate();
    prior.validate();
    require(prior.num_timesteps >= schedule.steps() || prior.time_embedding == TimeEmbeddingKind::sinusoidal,
            ErrorKind::config, "learned time table smaller than the schedule");
    PriorNet<float> net(prior);
    net.init_random(mix_seed(config.seed, 0x1417));
    auto mask = freeze_policy(net.layout(), prior, config.freeze);
    const auto n = net.params().size();
    TrainState s{std::move(net),
                 std::move(schedule),
                 effective_spec(std::move(spec), config),
                 config,
                 std::move(mask),
                 std::vector<float>(n, 0.0f),
                 std::vector<float>(n, 0.0f),
                 0,
                 Rng(mix_seed(config.seed, 0x7a11)),
                 0.0,
                 4.0};
    return s;
}

TrainState restore_train_state(const Checkpoint& ckpt) {
    if (ckpt.kind != ModelKind::prior) {
        fail(ErrorKind::config, "cannot train a " + to_string(ckpt.kind) + " checkpoint");
    }
    PriorNet<float> net(ckpt.prior);
    require(ckpt.params.size() == net.params().size(), ErrorKind::format, "checkpoint parameter count mismatch");
    net.params() = ckpt.params;
    auto mask = freeze_policy(net.layout(), ckpt.prior, ckpt.train.freeze);
    Rng rng;
    rng.restore(ckpt.rng_state);
    return TrainState{std::move(net), ckpt.schedule, ckpt.spec, ckpt.train,           std::move(mask),
                      ckpt.adam_m,    ckpt.adam_v,   ckpt.step, std::move(rng),        ckpt.target_mean_norm,
                      ckpt.guidance_scale};
}

Checkpoint to_checkpoint(const TrainState& state) {
    Checkpoint c;
    c.kind = ModelKind::prior;
    c.prior = state.net.config();
    c.schedule = state.schedule;
    c.spec = state.spec;
    c.train = state.config;
    c.guidance_scale = state.guidance_scale;
    c.target_mean_norm = state.target_mean_norm;
    c.step = state.step;
    c.params = state.net.params();
    c.adam_m = state.adam_m;
    c.adam_v = state.adam_v;
    c.rng_state = state.rng.state();
    return c;
}

TrainState warm_start(const Checkpoint& base, OperatorSpec new_spec, TrainConfig config,
                      const std::optional<PriorConfig>& expected) {
    if (base.kind != ModelKind::prior) {
        fail(ErrorKind::config, "cannot warm-start from a " + to_string(base.kind) + " checkpoint");
    }
    if (expected && !(*expected == base.prior)) {
        fail(ErrorKind::config, "incompatible prior config: base has d=" + std::to_string(base.prior.dim) +
                                    ", layers=" + std::to_string(base.prior.layers) + "; requested d=" +
                                    std::to_string(expected->dim) + ", layers=" + std::to_string(expected->layers));
    }
    TrainState s = init_train_state(base.prior, base.schedule, std::move(new_spec), config);
    require(base.params.size() == s.net.params().size(), ErrorKind::format, "checkpoint parameter count mismatch");
    s.net.params() = base.params;
    s.target_mean_norm = base.target_mean_norm;
    s.guidance_scale = base.guidance_scale;
    return s;
}

// --- optimisation ------------------------------------------------------------

namespace {

std::vector<SlotCondition> scaled(std::span<const SlotCondition> conds, double scale) {
    std::vector<SlotCondition> out;
    out.reserve(conds.size());
    for (const auto& c : conds) {
        if (scale == 1.0) {
            out.push_back(c);
            continue;
        }
        std::vector<double> v(c.value.values().begin(), c.value.values().end());
        for (auto& x : v) x *= scale;
        out.push_back({c.slot, Embedding(std::move(v), c.value.space())});
    }
    return out;
}

Embedding scaled(const Embedding& e, double scale) {
    if (scale == 1.0) return e;
    std::vector<double> v(e.values().begin(), e.values().end());
    for (auto& x : v) x *= scale;
    return Embedding(std::move(v), e.space());
}

}  // namespace

StepResult train_step(TrainState& state, std::span<const TrainingSample* const> batch) {
    require(!batch.empty(), ErrorKind::invalid_argument, "empty batch");
    if (!state.mask.any()) fail(ErrorKind::training, "nothing to train: the freeze policy leaves no parameters");
    auto& net = state.net;
    const std::size_t d = net.config().dim;
    const std::size_t T = state.schedule.steps();
    const double scale = state.schedule.embedding_scale();
    std::vector<float> grad(net.params().size(), 0.0f);
    PriorNet<float>::Cache cache;
    double loss_sum = 0.0;
    const float inv_b = 1.0f / static_cast<float>(batch.size());

    for (const TrainingSample* sample : batch) {
        require(sample->target.dim() == d, ErrorKind::invalid_argument, "sample dimension does not match the prior");
        const auto t = static_cast<std::size_t>(state.rng.below(T));
        const Embedding eps(state.rng.normal_vector(d));
        const Embedding target = scaled(sample->target, scale);
        const Embedding xt = forward_noise(state.schedule, target, t, eps);
        const auto conds = drop_conditions(scaled(sample->conditions, scale), state.spec.drop, state.rng);
        const auto seq = build_sequence(conds, static_cast<int>(t), xt);
        const auto pred = net.forward(seq, &cache);
        std::vector<double> p(pred.data(), pred.data() + pred.size());
        const auto lg = operator_loss_grad(state.spec, p, target.values(), sample->e_text);
        if (!std::isfinite(lg.value)) {
            std::ostringstream msg;
            msg << "non-finite loss at step " << state.step << " (t=" << t << ", operator "
                << to_string(state.spec.name) << "); aborting";
            fail(ErrorKind::training, msg.str());
        }
        loss_sum += lg.value;
        PriorNet<float>::Vec g(static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < d; ++i) g[static_cast<Eigen::Index>(i)] = static_cast<float>(lg.grad[i]) * inv_b;
        net.backward(cache, g, grad);
    }

    const auto& trainable = state.mask.elements();
    double sq = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (trainable[i]) sq += static_cast<double>(grad[i]) * grad[i];
    }
    StepResult out;
    out.loss = loss_sum / static_cast<double>(batch.size());
    out.grad_norm = std::sqrt(sq);
    if (!std::isfinite(out.grad_norm)) {
        fail(ErrorKind::training, "non-finite gradient at step " + std::to_string(state.step) + "; aborting");
    }
    float clip = 1.0f;
    if (state.config.clip_norm && out.grad_norm > *state.config.clip_norm) {
        clip = static_cast<float>(*state.config.clip_norm / out.grad_norm);
    }

    state.step += 1;
    const auto& cfg = state.config;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const auto lr = static_cast<float>(cfg.lr);
    const auto decay = static_cast<float>(1.0 - cfg.lr * cfg.weight_decay);
    const auto b1 = static_cast<float>(cfg.beta1);
    const auto b2 = static_cast<float>(cfg.beta2);
    const auto step_size = static_cast<float>(cfg.lr / bc1);
    const auto rbc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(cfg.adam_eps);
    auto& params = net.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!trainable[i]) continue;
        const float g = grad[i] * clip;
        state.adam_m[i] = b1 * state.adam_m[i] + (1.0f - b1) * g;
        state.adam_v[i] = b2 * state.adam_v[i] + (1.0f - b2) * g * g;
        if (lr == 0.0f) continue;
        params[i] *= decay;
        params[i] -= step_size * state.adam_m[i] / (std::sqrt(state.adam_v[i]) * rbc2 + eps);
    }
    return out;
}

StepResult train_step(TrainState& state, const TrainingSample& sample) {
    const TrainingSample* one[] = {&sample};
    return train_step(state, std::span<const TrainingSample* const>(one));
}

void check_dataset(const OperatorSpec& spec, std::size_t dim, const Dataset& dataset) {
    require(!dataset.samples.empty(), ErrorKind::invalid_argument, "dataset is empty");
    const bool needs_text = spec.loss.kind == LossKind::mse_plus_similarity;
    const std::string op = to_string(spec.name);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        const std::string where = "sample " + std::to_string(i) + ": ";
        if (s.conditions.size() > spec.slot_map.arity()) {
            fail(ErrorKind::config, where + "arity mismatch: " + std::to_string(s.conditions.size()) +
                                        " conditions, operator '" + op + "' takes " +
                                        std::to_string(spec.slot_map.arity()));
        }
        for (const auto& c : s.conditions) {
            if (!spec.slot_map.contains_slot(c.slot)) {
                fail(ErrorKind::config, where + "arity mismatch: slot " + std::to_string(c.slot) +
                                            " is not an input of operator '" + op + "'");
            }
            if (c.value.dim() != dim) {
                fail(ErrorKind::config, where + "dimension mismatch: " + std::to_string(c.value.dim()) + " vs prior " +
                                            std::to_string(dim));
            }
        }
        if (s.target.dim() != dim) {
            fail(ErrorKind::config, where + "dimension mismatch: target has " + std::to_string(s.target.dim()));
        }
        if (needs_text != s.e_text.has_value()) {
            fail(ErrorKind::config, where + (needs_text ? "operator '" + op + "' needs a text embedding"
                                                        : "unexpected text embedding for operator '" + op + "'"));
        }
    }
}

FitReport fit(TrainState& state, const Dataset& dataset, const FitHooks& hooks) {
    check_dataset(state.spec, state.net.config().dim, dataset);
    const auto& samples = dataset.samples;
    if (state.step == 0) {
        double norm_sum = 0.0;
        double sq_sum = 0.0;
        std::size_t count = 0;
        for (const auto& s : samples) {
            norm_sum += s.target.norm();
            for (const double v : s.target.values()) sq_sum += v * v;
            count += s.target.dim();
        }
        state.target_mean_norm = norm_sum / static_cast<double>(samples.size());
        if (state.config.unit_variance && sq_sum > 0.0) {
            state.schedule.set_embedding_scale(1.0 / std::sqrt(sq_sum / static_cast<double>(count)));
        }
    }

    FitReport report;
    std::vector<const TrainingSample*> batch(state.config.batch_size);
    double interval_loss = 0.0;
    std::size_t interval_steps = 0;
    auto interval_start = std::chrono::steady_clock::now();
    while (state.step < state.config.max_steps) {
        for (auto& b : batch) b = &samples[static_cast<std::size_t>(state.rng.below(samples.size()))];
        const auto r = train_step(state, batch);
        report.losses.push_back(r.loss);
        interval_loss += r.loss;
        ++interval_steps;
        const bool last = state.step == state.config.max_steps;
        if (hooks.on_log && (state.step % state.config.log_every == 0 || last || state.step == 1)) {
            const auto now = std::chrono::steady_clock::now();
            const double secs = std::chrono::duration<double>(now - interval_start).count();
            hooks.on_log(FitProgress{state.step, interval_loss / static_cast<double>(interval_steps),
                                     secs > 0 ? static_cast<double>(interval_steps) / secs : 0.0});
            interval_loss = 0.0;
            interval_steps = 0;
            interval_start = now;
        }
        if (hooks.on_checkpoint && state.config.checkpoint_every > 0 && !last &&
            state.step % state.config.checkpoint_every == 0) {
            hooks.on_checkpoint(to_checkpoint(state));
        }
    }
    return report;
}

OperatorModel::OperatorModel(const Checkpoint& ckpt)
    : kind_(ckpt.kind),
      dim_(ckpt.prior.dim),
      schedule_(ckpt.schedule),
      spec_(ckpt.spec),
      guidance_scale_(ckpt.guidance_scale),
      target_mean_norm_(ckpt.target_mean_norm) {
    if (kind_ == ModelKind::prior) {
        net_ = std::make_unique<PriorNet<float>>(ckpt.prior);
        require(ckpt.params.size() == net_->params().size(), ErrorKind::format, "checkpoint parameter count mismatch");
        net_->params() = ckpt.params;
    }
}

Embedding OperatorModel::predict_x0(const TokenSequence& seq) const {
    if (kind_ == ModelKind::identity) {
        const auto s = seq.slot(0);
        return Embedding(std::vector<double>(s.begin(), s.end()));
    }
    return net_->denoise(seq);
}

Embedding OperatorModel::sample(std::span<const SlotCondition> conditions, const SamplerOptions& options) const {
    for (const auto& c : conditions) {
        if (c.value.dim() != dim_) {
            fail(ErrorKind::invalid_argument, "input in slot " + std::to_string(c.slot) + " has d=" +
                                                  std::to_string(c.value.dim()) + ", operator expects " +
                                                  std::to_string(dim_));
        }
        if (!spec_.slot_map.contains_slot(c.slot)) {
            fail(ErrorKind::invalid_argument, "slot " + std::to_string(c.slot) + " is not an input of operator '" +
                                                  to_string(spec_.name) + "'");
        }
    }
    return embops::sample(*this, schedule_, conditions, options);
}

}  // namespace embops
