// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/noise_schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "embops/error.hpp"
#include "embops/rng.hpp"

namespace embops {

std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

NoiseSchedule::NoiseSchedule(std::vector<double> betas, ScheduleKind kind) : kind_(kind), betas_(std::move(betas)) {
    require(!betas_.empty(), ErrorKind::config, "noise schedule needs at least one step");
    alphas_.resize(betas_.size());
    alpha_bars_.resize(betas_.size());
    double prod = 1.0;
    for (std::size_t t = 0; t < betas_.size(); ++t) {
        const double b = betas_[t];
        if (!(b > 0.0 && b < 1.0)) {
            fail(ErrorKind::config, "beta[" + std::to_string(t) + "] outside (0,1)");
        }
        alphas_[t] = 1.0 - b;
        prod *= alphas_[t];
        alpha_bars_[t] = prod;
    }
}

NoiseSchedule NoiseSchedule::make(ScheduleKind kind, std::size_t steps) {
    require(steps >= 1, ErrorKind::config, "noise schedule needs at least one step");
    std::vector<double> betas(steps);
    const double T = static_cast<double>(steps);
    if (kind == ScheduleKind::linear) {
        // Endpoints scaled so the total noise matches the 1000-step reference.
        const double scale = 1000.0 / T;
        const double lo = scale * 1e-4;
        const double hi = std::min(scale * 0.02, 0.999);
        for (std::size_t t = 0; t < steps; ++t) {
            betas[t] = steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(t) / (T - 1.0);
        }
    } else {
        constexpr double s = 0.008;
        auto f = [&](double t) {
            const double v = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
            return v * v;
        };
        for (std::size_t t = 0; t < steps; ++t) {
            const double b = 1.0 - f(static_cast<double>(t + 1)) / f(static_cast<double>(t));
            betas[t] = std::clamp(b, 1e-8, 0.999);
        }
    }
    return NoiseSchedule(std::move(betas), kind);
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, ScheduleKind tag) {
    return NoiseSchedule(std::move(betas), tag);
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
    if (t >= steps()) {
        fail(ErrorKind::invalid_argument, "timestep " + std::to_string(t) + " out of range [0," +
                                              std::to_string(steps()) + ")");
    }
    return alpha_bars_[t];
}

void NoiseSchedule::set_embedding_scale(double s) {
    require(std::isfinite(s) && s > 0.0, ErrorKind::config, "embedding scale must be positive");
    embedding_scale_ = s;
}

nlohmann::json NoiseSchedule::to_json() const {
    return {{"kind", to_string(kind_)}, {"steps", steps()}, {"embedding_scale", embedding_scale_}, {"betas", betas_}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
    const auto kind_name = j.value("kind", std::string("cosine"));
    require(kind_name == "linear" || kind_name == "cosine", ErrorKind::config,
            "unknown schedule kind '" + kind_name + "'");
    const auto kind = kind_name == "linear" ? ScheduleKind::linear : ScheduleKind::cosine;
    NoiseSchedule out = j.contains("betas") ? NoiseSchedule(j.at("betas").get<std::vector<double>>(), kind)
                                            : make(kind, j.value("steps", std::size_t{1000}));
    out.set_embedding_scale(j.value("embedding_scale", 1.0));
    return out;
}

void GuidanceConfig::validate() const {
    require(std::isfinite(scale) && scale >= 0.0, ErrorKind::config, "guidance scale must be >= 0");
    require(drop_probability >= 0.0 && drop_probability <= 1.0, ErrorKind::config,
            "drop probability must be in [0,1]");
}

Embedding forward_noise(const NoiseSchedule& schedule, const Embedding& e0, std::size_t t, const Embedding& eps) {
    const double ab = schedule.alpha_bar(t);
    if (e0.dim() != eps.dim()) {
        fail(ErrorKind::invalid_argument, "noise dimension mismatch");
    }
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    std::vector<double> out(e0.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * e0[i] + b * eps[i];
    return Embedding(std::move(out), e0.space());
}

Embedding cfg_combine(const Embedding& x0_uncond, const Embedding& x0_cond, double s) {
    if (x0_uncond.dim() != x0_cond.dim()) {
        fail(ErrorKind::invalid_argument, "dimension mismatch in guidance combine");
    }
    std::vector<double> out(x0_cond.dim());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double u = x0_uncond[i];
        const double c = x0_cond[i];
        // Write the endpoints exactly so s=0 and s=1 are identities in floating point.
        out[i] = s == 1.0 ? c : (s == 0.0 ? u : u + s * (c - u));
    }
    return Embedding(std::move(out), x0_cond.space());
}

std::vector<std::size_t> strided_timesteps(std::size_t T, std::size_t steps) {
    if (steps < 1) {
        fail(ErrorKind::invalid_argument, "sampler needs at least one step");
    }
    if (steps > T) {
        fail(ErrorKind::invalid_argument, "sampler steps (" + std::to_string(steps) + ") exceed schedule length (" +
                                              std::to_string(T) + ")");
    }
    std::vector<std::size_t> ts(steps);
    if (steps == 1) {
        ts[0] = T - 1;
        return ts;
    }
    const double span = static_cast<double>(T - 1);
    for (std::size_t k = 0; k < steps; ++k) {
        const double frac = 1.0 - static_cast<double>(k) / static_cast<double>(steps - 1);
        ts[k] = static_cast<std::size_t>(std::llround(span * frac));
    }
    return ts;
}

Embedding sample(const X0Model& model, const NoiseSchedule& schedule, std::span<const SlotCondition> conditions,
                 const SamplerOptions& options) {
    options.guidance.validate();
    const auto ts = strided_timesteps(schedule.steps(), options.steps);
    const std::size_t d = model.dim();
    const double scale = schedule.embedding_scale();

    std::vector<SlotCondition> scaled;
    scaled.reserve(conditions.size());
    for (const auto& c : conditions) {
        if (c.value.dim() != d) {
            fail(ErrorKind::invalid_argument, "condition in slot " + std::to_string(c.slot) +
                                                  " has dimension " + std::to_string(c.value.dim()) +
                                                  ", model expects " + std::to_string(d));
        }
        std::vector<double> v(c.value.values().begin(), c.value.values().end());
        for (auto& x : v) x *= scale;
        scaled.push_back({c.slot, Embedding(std::move(v), c.value.space())});
    }

    Rng rng(options.seed);
    std::vector<double> x = rng.normal_vector(d);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const std::size_t t = ts[k];
        const Embedding xt(x);
        const auto cond_seq = build_sequence(scaled, static_cast<int>(t), xt);
        const auto uncond_seq = build_sequence({}, static_cast<int>(t), xt);
        const Embedding x0_cond = model.predict_x0(cond_seq);
        const Embedding x0_uncond = model.predict_x0(uncond_seq);
        const Embedding x0 = cfg_combine(x0_uncond, x0_cond, options.guidance.scale);

        const double ab_t = schedule.alpha_bar(t);
        const double ab_prev = k + 1 < ts.size() ? schedule.alpha_bar(ts[k + 1]) : 1.0;
        const double alpha = ab_t / ab_prev;
        const double beta = 1.0 - alpha;
        const double denom = 1.0 - ab_t;
        // A noiseless step (abar_t == 1) collapses onto the prediction.
        const double c_x0 = denom > 0.0 ? std::sqrt(ab_prev) * beta / denom : 1.0;
        const double c_xt = denom > 0.0 ? std::sqrt(alpha) * (1.0 - ab_prev) / denom : 0.0;
        const double var = denom > 0.0 ? beta * (1.0 - ab_prev) / denom : 0.0;
        const bool last = k + 1 == ts.size();
        for (std::size_t i = 0; i < d; ++i) {
            double v = c_x0 * x0[i] + c_xt * x[i];
            if (!last && var > 0.0) v += std::sqrt(var) * rng.normal();
            x[i] = v;
        }
    }
    for (auto& v : x) v /= scale;
    Embedding out(std::move(x), SpaceTag::image);
    if (options.renormalize_to) {
        const double n = out.norm();
        if (n > 0.0) {
            std::vector<double> v(out.values().begin(), out.values().end());
            for (auto& c : v) c *= *options.renormalize_to / n;
            out = Embedding(std::move(v), SpaceTag::image);
        }
    }
    return out;
}

}  // namespace embops
