// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "embops/embedding.hpp"
#include "embops/token_sequence.hpp"

namespace embops {

enum class ScheduleKind { linear, cosine };

std::string to_string(ScheduleKind k);

/// DDPM forward-process coefficients over T discrete steps.
class NoiseSchedule {
public:
    static NoiseSchedule make(ScheduleKind kind = ScheduleKind::cosine, std::size_t steps = 1000);
    /// Arbitrary betas in (0,1); alpha_bar must be non-increasing.
    static NoiseSchedule from_betas(std::vector<double> betas, ScheduleKind tag = ScheduleKind::linear);

    [[nodiscard]] std::size_t steps() const noexcept { return betas_.size(); }
    [[nodiscard]] ScheduleKind kind() const noexcept { return kind_; }
    [[nodiscard]] std::span<const double> betas() const noexcept { return betas_; }
    [[nodiscard]] std::span<const double> alphas() const noexcept { return alphas_; }
    [[nodiscard]] std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }
    [[nodiscard]] double alpha_bar(std::size_t t) const;

    /// Multiplier applied to embeddings before they enter the prior.
    /// 1.0 unless unit-variance rescaling was enabled at training time.
    [[nodiscard]] double embedding_scale() const noexcept { return embedding_scale_; }
    void set_embedding_scale(double s);

    [[nodiscard]] nlohmann::json to_json() const;
    static NoiseSchedule from_json(const nlohmann::json& j);

private:
    NoiseSchedule(std::vector<double> betas, ScheduleKind kind);

    ScheduleKind kind_ = ScheduleKind::cosine;
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
    double embedding_scale_ = 1.0;
};

struct GuidanceConfig {
    double scale = 4.0;
    double drop_probability = 0.1;

    void validate() const;
};

/// sqrt(abar_t) * e0 + sqrt(1 - abar_t) * eps
Embedding forward_noise(const NoiseSchedule& schedule, const Embedding& e0, std::size_t t, const Embedding& eps);

/// uncond + s * (cond - uncond)
Embedding cfg_combine(const Embedding& x0_uncond, const Embedding& x0_cond, double s);

/// Evenly spaced descending timesteps from T-1 down to 0.
std::vector<std::size_t> strided_timesteps(std::size_t T, std::size_t steps);

/// Anything that predicts the clean embedding from a token layout. Must be
/// safe to call concurrently.
class X0Model {
public:
    virtual ~X0Model() = default;
    [[nodiscard]] virtual std::size_t dim() const = 0;
    [[nodiscard]] virtual Embedding predict_x0(const TokenSequence& seq) const = 0;
};

struct SamplerOptions {
    std::size_t steps = 25;
    GuidanceConfig guidance;
    std::uint64_t seed = 0;
    /// Rescale the final sample to this norm when set.
    std::optional<double> renormalize_to;
};

/// Ancestral x0-parameterised DDPM sampler with classifier-free guidance.
///
/// Each step evaluates the model on the given conditions and on an all-zero
/// condition layout, combines them, and draws from the posterior
/// q(x_prev | x_t, x0_guided) along the strided timestep sequence.
Embedding sample(const X0Model& model, const NoiseSchedule& schedule, std::span<const SlotCondition> conditions,
                 const SamplerOptions& options);

}  // namespace embops
