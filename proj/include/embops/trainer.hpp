// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embops/dataset.hpp"
#include "embops/noise_schedule.hpp"
#include "embops/operators.hpp"
#include "embops/prior_net.hpp"
#include "embops/rng.hpp"

namespace embops {

struct TrainConfig {
    double lr = 1e-5;
    std::size_t batch_size = 1;
    std::size_t max_steps = 500000;
    /// Overrides the operator's joint drop probability when set.
    std::optional<double> p_drop;
    /// Overrides the operator's per-slot drop probability when set.
    std::optional<double> per_slot_drop;
    FreezePolicy freeze;
    std::uint64_t seed = 0;

    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Global-norm clip; disabled when empty.
    std::optional<double> clip_norm = 1.0;

    /// Rescale embeddings to unit variance before they enter the prior.
    bool unit_variance = false;

    std::size_t log_every = 100;
    std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint

    /// lr 1e-5, batch 1.
    static TrainConfig full();
    /// lr 1e-3, batch 32, 2000 steps.
    static TrainConfig toy();
    static TrainConfig preset(const std::string& name);

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    /// Missing keys keep the values of `base`.
    static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
    static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, full()); }
};

enum class ModelKind { prior, identity };

std::string to_string(ModelKind kind);

/// Everything needed to sample from, or resume training of, one operator.
struct Checkpoint {
    ModelKind kind = ModelKind::prior;
    PriorConfig prior;
    NoiseSchedule schedule = NoiseSchedule::make();
    OperatorSpec spec;
    TrainConfig train;
    double guidance_scale = 4.0;  // sampling default
    double target_mean_norm = 0.0;
    std::size_t step = 0;
    std::vector<float> params;
    std::vector<float> adam_m;
    std::vector<float> adam_v;
    std::string rng_state;
};

/// Single-file archive: magic "POPSARC1", u32 entry count, then per entry
/// u32 name length, name, u64 size, bytes. Entries: config.json,
/// params.pops, adam_m.pops, adam_v.pops, rng.state.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// A model whose prediction is the content of slot 0; used to test trees.
Checkpoint make_identity_checkpoint(std::size_t d, NoiseSchedule schedule = NoiseSchedule::make());

/// Mutable training state owned by one loop.
struct TrainState {
    PriorNet<float> net;
    NoiseSchedule schedule;
    OperatorSpec spec;
    TrainConfig config;
    TrainableMask mask;
    std::vector<float> adam_m;
    std::vector<float> adam_v;
    std::size_t step = 0;
    Rng rng;
    double target_mean_norm = 0.0;
    double guidance_scale = 4.0;
};

/// Fresh parameters drawn from `config.seed`.
TrainState init_train_state(const PriorConfig& prior, NoiseSchedule schedule, OperatorSpec spec, TrainConfig config);
TrainState restore_train_state(const Checkpoint& ckpt);
Checkpoint to_checkpoint(const TrainState& state);

/// Copies the prior from `base`; optimiser state and step reset, spec replaced.
/// `expected` (when given) must equal the base prior config.
TrainState warm_start(const Checkpoint& base, OperatorSpec new_spec, TrainConfig config,
                      const std::optional<PriorConfig>& expected = std::nullopt);

struct StepResult {
    double loss = 0.0;
    double grad_norm = 0.0;  // before clipping
};

/// One optimiser step over `batch` (mean loss). Draws t, noise and drops
/// from `state.rng`.
StepResult train_step(TrainState& state, std::span<const TrainingSample* const> batch);
StepResult train_step(TrainState& state, const TrainingSample& sample);

/// Throws unless every sample fits the operator: slots inside the slot map,
/// dimension matches the prior, e_text present iff the loss needs it.
void check_dataset(const OperatorSpec& spec, std::size_t dim, const Dataset& dataset);

struct FitProgress {
    std::size_t step = 0;
    double loss = 0.0;  // running mean over the log interval
    double steps_per_sec = 0.0;
};

struct FitHooks {
    std::function<void(const FitProgress&)> on_log;
    /// Receives each periodic checkpoint (every config.checkpoint_every steps).
    std::function<void(const Checkpoint&)> on_checkpoint;
};

struct FitReport {
    std::vector<double> losses;  // one per step taken in this call
};

/// Runs train_step until state.step reaches state.config.max_steps.
FitReport fit(TrainState& state, const Dataset& dataset, const FitHooks& hooks = {});

/// The x0 model behind a checkpoint, shareable across threads.
class OperatorModel final : public X0Model {
public:
    explicit OperatorModel(const Checkpoint& ckpt);

    [[nodiscard]] std::size_t dim() const override { return dim_; }
    [[nodiscard]] Embedding predict_x0(const TokenSequence& seq) const override;

    [[nodiscard]] const NoiseSchedule& schedule() const noexcept { return schedule_; }
    [[nodiscard]] const OperatorSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] double guidance_scale() const noexcept { return guidance_scale_; }
    [[nodiscard]] double target_mean_norm() const noexcept { return target_mean_norm_; }

    /// noise-schedule sample() with this model and schedule.
    [[nodiscard]] Embedding sample(std::span<const SlotCondition> conditions, const SamplerOptions& options) const;

private:
    ModelKind kind_;
    std::size_t dim_;
    NoiseSchedule schedule_;
    OperatorSpec spec_;
    double guidance_scale_;
    double target_mean_norm_;
    std::unique_ptr<PriorNet<float>> net_;
};

}  // namespace embops
