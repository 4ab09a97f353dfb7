// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "embops/embedding.hpp"
#include "embops/token_sequence.hpp"

namespace embops {

enum class AttentionKind { causal, full };
enum class TimeEmbeddingKind { sinusoidal, learned };

std::string to_string(AttentionKind k);
std::string to_string(TimeEmbeddingKind k);

struct PriorConfig {
    std::size_t dim = 16;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t width = 64;
    std::size_t mlp_hidden = 128;
    std::size_t num_timesteps = 1000;  // table size for learned time embeddings
    AttentionKind attention = AttentionKind::causal;
    TimeEmbeddingKind time_embedding = TimeEmbeddingKind::sinusoidal;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static PriorConfig from_json(const nlohmann::json& j);

    friend bool operator==(const PriorConfig&, const PriorConfig&) = default;
};

/// One contiguous block of the flat parameter vector.
struct ParamGroup {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    int layer = -1;  // transformer block index, -1 for embedding/readout groups

    [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
};

class ParamLayout {
public:
    explicit ParamLayout(const PriorConfig& cfg);

    [[nodiscard]] const std::vector<ParamGroup>& groups() const noexcept { return groups_; }
    [[nodiscard]] const ParamGroup& group(const std::string& name) const;
    [[nodiscard]] std::size_t total() const noexcept { return total_; }

private:
    void add(std::string name, std::size_t rows, std::size_t cols, int layer);

    std::vector<ParamGroup> groups_;
    std::size_t total_ = 0;
};

// Which parameter groups receive gradient updates.
struct FreezePolicy {
    enum class Kind { all, subset };
    Kind kind = Kind::all;
    std::vector<std::size_t> layers;  // used when kind == subset

    static FreezePolicy all() { return {}; }
    static FreezePolicy subset(std::vector<std::size_t> layer_indices) {
        return {Kind::subset, std::move(layer_indices)};
    }

    [[nodiscard]] nlohmann::json to_json() const;
    static FreezePolicy from_json(const nlohmann::json& j);
};

class TrainableMask {
public:
    TrainableMask() = default;
    TrainableMask(const ParamLayout& layout, std::vector<bool> group_flags);

    [[nodiscard]] bool group_trainable(std::size_t g) const { return flags_.at(g); }
    [[nodiscard]] bool any() const;
    [[nodiscard]] std::size_t trainable_count() const noexcept { return trainable_count_; }
    /// Per-element flag, same length as the parameter vector.
    [[nodiscard]] const std::vector<std::uint8_t>& elements() const noexcept { return elements_; }

private:
    std::vector<bool> flags_;
    std::vector<std::uint8_t> elements_;
    std::size_t trainable_count_ = 0;
};

TrainableMask freeze_policy(const ParamLayout& layout, const PriorConfig& cfg, const FreezePolicy& policy);

/// Sinusoidal timestep features of length `width`.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> timestep_features(int t, std::size_t width);

/// Transformer denoiser over the 79-token layout.
///
/// Every token is linearly projected to `width` (the timestep token goes
/// through its own embedding), learned positional encodings are added, and a
/// stack of pre-LN blocks runs over the sequence. The prediction is read at
/// the noised-token position and projected back to `dim`. Forward/backward
/// are written out by hand.
///
/// Only the final position is consumed, so the last block computes queries
/// and the MLP for that single row; keys and values still cover all tokens.
template <typename Scalar>
class PriorNet {
public:
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    struct LayerCache {
        Mat h_in;        // L x W
        Mat ln1_hat;     // L x W
        Vec ln1_rstd;    // L
        Mat ln1_out;     // L x W
        Mat qkv;         // L x 3W
        std::vector<Mat> probs;  // per head: Q x L
        Mat attn;        // Q x W (heads concatenated)
        Mat h_mid;       // Q x W
        Mat ln2_hat;
        Vec ln2_rstd;
        Mat ln2_out;
        Mat mlp_pre;     // Q x H
        Mat mlp_act;
        std::size_t q_start = 0;
    };

    struct Cache {
        Mat tokens;      // L x d (timestep row unused)
        int timestep = 0;
        Vec time_feat;   // W
        Vec time_pre;    // W
        Vec time_act;    // W
        std::vector<LayerCache> layers;
        Vec final_in;    // W
        Vec lnf_hat;
        Scalar lnf_rstd = 0;
        Vec lnf_out;
    };

    explicit PriorNet(PriorConfig cfg);

    void init_random(std::uint64_t seed);

    [[nodiscard]] const PriorConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const ParamLayout& layout() const noexcept { return layout_; }
    [[nodiscard]] std::vector<Scalar>& params() noexcept { return params_; }
    [[nodiscard]] const std::vector<Scalar>& params() const noexcept { return params_; }

    /// Prediction at the noised-token position (length `dim`).
    Vec forward(const TokenSequence& seq, Cache* cache = nullptr) const;

    /// Accumulates dLoss/dparams into `grad` given dLoss/doutput.
    void backward(const Cache& cache, const Vec& grad_out, std::span<Scalar> grad) const;

    /// forward() returned as an Embedding.
    Embedding denoise(const TokenSequence& seq) const;

private:
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;
    using MapV = Eigen::Map<Vec>;
    using CMapV = Eigen::Map<const Vec>;

    const ParamGroup& grp(std::size_t i) const { return layout_.groups()[i]; }
    CMapM mat(const ParamGroup& g) const { return CMapM(params_.data() + g.offset, g.rows, g.cols); }
    CMapV vec(const ParamGroup& g) const { return CMapV(params_.data() + g.offset, g.size()); }

    struct LayerGroups {
        std::size_t ln1_g;
        std::size_t ln1_b;
        std::size_t wqkv;
        std::size_t bqkv;
        std::size_t wo;
        std::size_t bo;
        std::size_t ln2_g;
        std::size_t ln2_b;
        std::size_t w1;
        std::size_t b1;
        std::size_t w2;
        std::size_t b2;
    };

    void layer_forward(std::size_t l, const Mat& h_in, std::size_t q_start, Mat& h_out, LayerCache& c) const;
    void layer_backward(std::size_t l, const LayerCache& c, const Mat& d_out, Mat& d_in, std::span<Scalar> grad) const;

    PriorConfig cfg_;
    ParamLayout layout_;
    std::vector<Scalar> params_;
    std::vector<LayerGroups> lg_;
    std::size_t in_w_ = 0;
    std::size_t in_b_ = 0;
    std::size_t pos_ = 0;
    std::size_t time_w1_ = 0;
    std::size_t time_b1_ = 0;
    std::size_t time_w2_ = 0;
    std::size_t time_b2_ = 0;
    std::size_t time_table_ = 0;
    std::size_t lnf_g_ = 0;
    std::size_t lnf_b_ = 0;
    std::size_t out_w_ = 0;
    std::size_t out_b_ = 0;
};

extern template class PriorNet<float>;
extern template class PriorNet<double>;

/// Copy parameters between precisions (used by gradient verification).
PriorNet<double> to_double(const PriorNet<float>& net);

}  // namespace embops
