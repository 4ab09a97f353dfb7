// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

#include "embops/prior_net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "embops/error.hpp"
#include "embops/rng.hpp"

namespace embops {

std::string to_string(AttentionKind k) { return k == AttentionKind::causal ? "causal" : "full"; }
std::string to_string(TimeEmbeddingKind k) { return k == TimeEmbeddingKind::sinusoidal ? "sinusoidal" : "learned"; }

void PriorConfig::validate() const {
    require(dim >= 1, ErrorKind::config, "prior dim must be >= 1");
    require(layers >= 1, ErrorKind::config, "prior needs at least one layer");
    require(heads >= 1 && width % heads == 0, ErrorKind::config, "width must be divisible by heads");
    require(width % 2 == 0, ErrorKind::config, "width must be even for sinusoidal features");
    require(mlp_hidden >= 1, ErrorKind::config, "mlp_hidden must be >= 1");
    require(num_timesteps >= 1, ErrorKind::config, "num_timesteps must be >= 1");
}

nlohmann::json PriorConfig::to_json() const {
    return {{"dim", dim},
            {"layers", layers},
            {"heads", heads},
            {"width", width},
            {"mlp_hidden", mlp_hidden},
            {"num_timesteps", num_timesteps},
            {"attention", to_string(attention)},
            {"time_embedding", to_string(time_embedding)}};
}

PriorConfig PriorConfig::from_json(const nlohmann::json& j) {
    PriorConfig c;
    c.dim = j.value("dim", c.dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.width = j.value("width", c.width);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.num_timesteps = j.value("num_timesteps", c.num_timesteps);
    const auto att = j.value("attention", std::string("causal"));
    require(att == "causal" || att == "full", ErrorKind::config, "unknown attention kind '" + att + "'");
    c.attention = att == "causal" ? AttentionKind::causal : AttentionKind::full;
    const auto te = j.value("time_embedding", std::string("sinusoidal"));
    require(te == "sinusoidal" || te == "learned", ErrorKind::config, "unknown time embedding '" + te + "'");
    c.time_embedding = te == "sinusoidal" ? TimeEmbeddingKind::sinusoidal : TimeEmbeddingKind::learned;
    c.validate();
    return c;
}

// --- layout ----------------------------------------------------------------

ParamLayout::ParamLayout(const PriorConfig& cfg) {
    cfg.validate();
    const auto W = cfg.width;
    add("in.w", cfg.dim, W, -1);
    add("in.b", 1, W, -1);
    add("pos", kSequenceLength, W, -1);
    if (cfg.time_embedding == TimeEmbeddingKind::sinusoidal) {
        add("time.w1", W, W, -1);
        add("time.b1", 1, W, -1);
        add("time.w2", W, W, -1);
        add("time.b2", 1, W, -1);
    } else {
        add("time.table", cfg.num_timesteps, W, -1);
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto p = "blocks." + std::to_string(l) + ".";
        const int li = static_cast<int>(l);
        add(p + "ln1.g", 1, W, li);
        add(p + "ln1.b", 1, W, li);
        add(p + "attn.wqkv", W, 3 * W, li);
        add(p + "attn.bqkv", 1, 3 * W, li);
        add(p + "attn.wo", W, W, li);
        add(p + "attn.bo", 1, W, li);
        add(p + "ln2.g", 1, W, li);
        add(p + "ln2.b", 1, W, li);
        add(p + "mlp.w1", W, cfg.mlp_hidden, li);
        add(p + "mlp.b1", 1, cfg.mlp_hidden, li);
        add(p + "mlp.w2", cfg.mlp_hidden, W, li);
        add(p + "mlp.b2", 1, W, li);
    }
    add("lnf.g", 1, W, -1);
    add("lnf.b", 1, W, -1);
    add("out.w", W, cfg.dim, -1);
    add("out.b", 1, cfg.dim, -1);
}

void ParamLayout::add(std::string name, std::size_t rows, std::size_t cols, int layer) {
    groups_.push_back(ParamGroup{std::move(name), total_, rows, cols, layer});
    total_ += rows * cols;
}

const ParamGroup& ParamLayout::group(const std::string& name) const {
    for (const auto& g : groups_) {
        if (g.name == name) return g;
    }
    fail(ErrorKind::invalid_argument, "no parameter group '" + name + "'");
}

nlohmann::json FreezePolicy::to_json() const {
    if (kind == Kind::all) return {{"kind", "all"}};
    return {{"kind", "subset"}, {"layers", layers}};
}

FreezePolicy FreezePolicy::from_json(const nlohmann::json& j) {
    const auto kind = j.value("kind", std::string("all"));
    if (kind == "all") return all();
    require(kind == "subset", ErrorKind::config, "unknown freeze policy '" + kind + "'");
    return subset(j.value("layers", std::vector<std::size_t>{}));
}

TrainableMask::TrainableMask(const ParamLayout& layout, std::vector<bool> group_flags) : flags_(std::move(group_flags)) {
    elements_.assign(layout.total(), 0);
    for (std::size_t g = 0; g < flags_.size(); ++g) {
        if (!flags_[g]) continue;
        const auto& pg = layout.groups()[g];
        std::fill_n(elements_.begin() + static_cast<std::ptrdiff_t>(pg.offset), pg.size(), std::uint8_t{1});
        trainable_count_ += pg.size();
    }
}

bool TrainableMask::any() const { return trainable_count_ > 0; }

TrainableMask freeze_policy(const ParamLayout& layout, const PriorConfig& cfg, const FreezePolicy& policy) {
    std::vector<bool> flags(layout.groups().size(), policy.kind == FreezePolicy::Kind::all);
    if (policy.kind == FreezePolicy::Kind::subset) {
        for (auto l : policy.layers) {
            if (l >= cfg.layers) {
                fail(ErrorKind::config, "freeze policy layer index " + std::to_string(l) + " out of range (net has " +
                                            std::to_string(cfg.layers) + " layers)");
            }
        }
        for (std::size_t g = 0; g < layout.groups().size(); ++g) {
            const int layer = layout.groups()[g].layer;
            flags[g] = layer >= 0 && std::find(policy.layers.begin(), policy.layers.end(),
                                               static_cast<std::size_t>(layer)) != policy.layers.end();
        }
    }
    return TrainableMask(layout, std::move(flags));
}

// --- numerics ----------------------------------------------------------------

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> timestep_features(int t, std::size_t width) {
    const std::size_t half = width / 2;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> f(width);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        f(static_cast<Eigen::Index>(i)) = static_cast<Scalar>(std::sin(t * freq));
        f(static_cast<Eigen::Index>(i + half)) = static_cast<Scalar>(std::cos(t * freq));
    }
    return f;
}

namespace {

constexpr double kLnEps = 1e-5;

template <typename Scalar>
Scalar gelu(Scalar x) {
    const Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
    const Scalar k = static_cast<Scalar>(0.044715);
    return static_cast<Scalar>(0.5) * x * (static_cast<Scalar>(1) + std::tanh(c * (x + k * x * x * x)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
    const Scalar c = static_cast<Scalar>(0.7978845608028654);
    const Scalar k = static_cast<Scalar>(0.044715);
    const Scalar th = std::tanh(c * (x + k * x * x * x));
    const Scalar one = static_cast<Scalar>(1);
    return static_cast<Scalar>(0.5) * (one + th) +
           static_cast<Scalar>(0.5) * x * (one - th * th) * c * (one + static_cast<Scalar>(3) * k * x * x);
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
    return static_cast<Scalar>(1) / (static_cast<Scalar>(1) + std::exp(-x));
}

// Row-wise layer norm. Writes normalised values and reciprocal std per row.
template <typename Mat, typename Vec, typename G, typename B>
void layer_norm(const Mat& x, const G& gamma, const B& beta, Mat& hat, Vec& rstd, Mat& out) {
    using Scalar = typename Mat::Scalar;
    const auto rows = x.rows();
    const auto cols = x.cols();
    hat.resize(rows, cols);
    out.resize(rows, cols);
    rstd.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Scalar mu = x.row(r).mean();
        const Scalar var = (x.row(r).array() - mu).square().mean();
        const Scalar rs = static_cast<Scalar>(1) / std::sqrt(var + static_cast<Scalar>(kLnEps));
        rstd(r) = rs;
        hat.row(r) = (x.row(r).array() - mu) * rs;
        out.row(r) = hat.row(r).array() * gamma.array() + beta.array();
    }
}

// Backward of layer_norm for dy; accumulates dgamma/dbeta, returns dx.
template <typename Mat, typename Vec, typename G, typename GG>
Mat layer_norm_backward(const Mat& dy, const Mat& hat, const Vec& rstd, const G& gamma, GG& dgamma, GG& dbeta) {
    using Scalar = typename Mat::Scalar;
    const auto cols = static_cast<Scalar>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        dgamma.array() += dy.row(r).array() * hat.row(r).array();
        dbeta += dy.row(r);
        const auto dhat = (dy.row(r).array() * gamma.array()).eval();
        const Scalar m1 = dhat.sum() / cols;
        const Scalar m2 = (dhat * hat.row(r).array()).sum() / cols;
        dx.row(r) = rstd(r) * (dhat - m1 - hat.row(r).array() * m2);
    }
    return dx;
}

}  // namespace

// --- network -----------------------------------------------------------------

template <typename Scalar>
PriorNet<Scalar>::PriorNet(PriorConfig cfg) : cfg_(cfg), layout_(cfg_), params_(layout_.total(), Scalar{0}) {
    const auto& gs = layout_.groups();
    auto idx = [&](const std::string& name) {
        for (std::size_t i = 0; i < gs.size(); ++i) {
            if (gs[i].name == name) return i;
        }
        fail(ErrorKind::invalid_argument, "missing group " + name);
    };
    in_w_ = idx("in.w");
    in_b_ = idx("in.b");
    pos_ = idx("pos");
    if (cfg_.time_embedding == TimeEmbeddingKind::sinusoidal) {
        time_w1_ = idx("time.w1");
        time_b1_ = idx("time.b1");
        time_w2_ = idx("time.w2");
        time_b2_ = idx("time.b2");
    } else {
        time_table_ = idx("time.table");
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const auto p = "blocks." + std::to_string(l) + ".";
        lg_.push_back(LayerGroups{idx(p + "ln1.g"), idx(p + "ln1.b"), idx(p + "attn.wqkv"), idx(p + "attn.bqkv"),
                                  idx(p + "attn.wo"), idx(p + "attn.bo"), idx(p + "ln2.g"), idx(p + "ln2.b"),
                                  idx(p + "mlp.w1"), idx(p + "mlp.b1"), idx(p + "mlp.w2"), idx(p + "mlp.b2")});
    }
    lnf_g_ = idx("lnf.g");
    lnf_b_ = idx("lnf.b");
    out_w_ = idx("out.w");
    out_b_ = idx("out.b");
}

template <typename Scalar>
void PriorNet<Scalar>::init_random(std::uint64_t seed) {
    Rng rng(seed);
    const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.layers));
    for (const auto& g : layout_.groups()) {
        const auto& n = g.name;
        auto fill = [&](double stddev) {
            for (std::size_t i = 0; i < g.size(); ++i) params_[g.offset + i] = static_cast<Scalar>(stddev * rng.normal());
        };
        auto ends_with = [&](std::string_view suffix) {
            return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        if (ends_with(".g")) {
            std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(g.offset), g.size(), Scalar{1});
        } else if (ends_with(".b") || ends_with(".b1") || ends_with(".b2") || ends_with(".bo") || ends_with(".bqkv")) {
            std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(g.offset), g.size(), Scalar{0});
        } else if (n == "pos" || n == "time.table") {
            fill(0.5);
        } else {
            double stddev = 1.0 / std::sqrt(static_cast<double>(g.rows));
            if (ends_with("attn.wo") || ends_with("mlp.w2")) stddev *= residual_scale;
            fill(stddev);
        }
    }
}

template <typename Scalar>
void PriorNet<Scalar>::layer_forward(std::size_t l, const Mat& h_in, std::size_t q_start, Mat& h_out,
                                     LayerCache& c) const {
    const auto& G = lg_[l];
    const auto L = h_in.rows();
    const auto W = static_cast<Eigen::Index>(cfg_.width);
    const auto Q = L - static_cast<Eigen::Index>(q_start);
    const auto heads = static_cast<Eigen::Index>(cfg_.heads);
    const auto dh = W / heads;
    const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

    c.q_start = q_start;
    c.h_in = h_in;
    layer_norm(h_in, vec(grp(G.ln1_g)).transpose(), vec(grp(G.ln1_b)).transpose(), c.ln1_hat, c.ln1_rstd, c.ln1_out);
    c.qkv.noalias() = c.ln1_out * mat(grp(G.wqkv));
    c.qkv.rowwise() += vec(grp(G.bqkv)).transpose();

    c.attn.resize(Q, W);
    c.probs.resize(static_cast<std::size_t>(heads));
    for (Eigen::Index h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(static_cast<Eigen::Index>(q_start), h * dh, Q, dh);
        const auto k = c.qkv.block(0, W + h * dh, L, dh);
        const auto v = c.qkv.block(0, 2 * W + h * dh, L, dh);
        Mat& p = c.probs[static_cast<std::size_t>(h)];
        p.noalias() = (q * k.transpose()) * scale;
        for (Eigen::Index r = 0; r < Q; ++r) {
            const Eigen::Index visible = cfg_.attention == AttentionKind::causal
                                             ? static_cast<Eigen::Index>(q_start) + r + 1
                                             : L;
            auto row = p.row(r);
            const Scalar mx = row.head(visible).maxCoeff();
            row.head(visible) = (row.head(visible).array() - mx).exp();
            row.head(visible) /= row.head(visible).sum();
            if (visible < L) row.tail(L - visible).setZero();
        }
        c.attn.block(0, h * dh, Q, dh).noalias() = p * v;
    }
    c.h_mid = h_in.bottomRows(Q);
    c.h_mid.noalias() += c.attn * mat(grp(G.wo));
    c.h_mid.rowwise() += vec(grp(G.bo)).transpose();

    layer_norm(c.h_mid, vec(grp(G.ln2_g)).transpose(), vec(grp(G.ln2_b)).transpose(), c.ln2_hat, c.ln2_rstd,
               c.ln2_out);
    c.mlp_pre.noalias() = c.ln2_out * mat(grp(G.w1));
    c.mlp_pre.rowwise() += vec(grp(G.b1)).transpose();
    c.mlp_act = c.mlp_pre.unaryExpr([](Scalar x) { return gelu(x); });
    h_out = c.h_mid;
    h_out.noalias() += c.mlp_act * mat(grp(G.w2));
    h_out.rowwise() += vec(grp(G.b2)).transpose();
}

template <typename Scalar>
typename PriorNet<Scalar>::Vec PriorNet<Scalar>::forward(const TokenSequence& seq, Cache* cache) const {
    if (seq.dim() != cfg_.dim) {
        fail(ErrorKind::invalid_argument, "sequence dimension " + std::to_string(seq.dim()) +
                                              " does not match prior dimension " + std::to_string(cfg_.dim));
    }
    const auto L = static_cast<Eigen::Index>(kSequenceLength);
    const auto d = static_cast<Eigen::Index>(cfg_.dim);
    const auto W = static_cast<Eigen::Index>(cfg_.width);
    const int t = seq.timestep();
    require(t >= 0, ErrorKind::invalid_argument, "negative timestep");

    Cache local;
    Cache& c = cache ? *cache : local;
    c.timestep = t;
    c.tokens.setZero(L, d);
    for (std::size_t s = 0; s < kConditionSlots; ++s) {
        const auto slot = seq.slot(s);
        for (Eigen::Index i = 0; i < d; ++i) c.tokens(static_cast<Eigen::Index>(s), i) = static_cast<Scalar>(slot[i]);
    }
    for (Eigen::Index i = 0; i < d; ++i) {
        c.tokens(static_cast<Eigen::Index>(kNoisedTokenIndex), i) = static_cast<Scalar>(seq.noised()[i]);
    }

    Mat h;
    h.noalias() = c.tokens * mat(grp(in_w_));
    h.rowwise() += vec(grp(in_b_)).transpose();

    Vec time_tok;
    if (cfg_.time_embedding == TimeEmbeddingKind::sinusoidal) {
        c.time_feat = timestep_features<Scalar>(t, cfg_.width);
        c.time_pre = mat(grp(time_w1_)).transpose() * c.time_feat + vec(grp(time_b1_));
        c.time_act = c.time_pre.unaryExpr([](Scalar x) { return x * sigmoid(x); });
        time_tok = mat(grp(time_w2_)).transpose() * c.time_act + vec(grp(time_b2_));
    } else {
        require(static_cast<std::size_t>(t) < cfg_.num_timesteps, ErrorKind::invalid_argument,
                "timestep outside learned time table");
        time_tok = mat(grp(time_table_)).row(t).transpose();
    }
    h.row(static_cast<Eigen::Index>(kTimeTokenIndex)) = time_tok.transpose();
    h += mat(grp(pos_));

    c.layers.resize(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::size_t q_start = l + 1 == cfg_.layers ? kNoisedTokenIndex : 0;
        Mat next;
        layer_forward(l, h, q_start, next, c.layers[l]);
        h = std::move(next);
    }

    c.final_in = h.row(h.rows() - 1).transpose();
    const Scalar mu = c.final_in.mean();
    const Scalar var = (c.final_in.array() - mu).square().mean();
    c.lnf_rstd = static_cast<Scalar>(1) / std::sqrt(var + static_cast<Scalar>(kLnEps));
    c.lnf_hat = (c.final_in.array() - mu) * c.lnf_rstd;
    c.lnf_out = c.lnf_hat.array() * vec(grp(lnf_g_)).array() + vec(grp(lnf_b_)).array();
    Vec y = mat(grp(out_w_)).transpose() * c.lnf_out + vec(grp(out_b_));
    (void)W;
    return y;
}

template <typename Scalar>
void PriorNet<Scalar>::layer_backward(std::size_t l, const LayerCache& c, const Mat& d_out, Mat& d_in,
                                      std::span<Scalar> grad) const {
    const auto& G = lg_[l];
    auto gm = [&](std::size_t gi) {
        const auto& pg = grp(gi);
        return MapM(grad.data() + pg.offset, static_cast<Eigen::Index>(pg.rows), static_cast<Eigen::Index>(pg.cols));
    };
    auto gv = [&](std::size_t gi) {
        const auto& pg = grp(gi);
        return Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(grad.data() + pg.offset,
                                                                    static_cast<Eigen::Index>(pg.size()));
    };
    const auto L = c.h_in.rows();
    const auto W = static_cast<Eigen::Index>(cfg_.width);
    const auto Q = d_out.rows();
    const auto heads = static_cast<Eigen::Index>(cfg_.heads);
    const auto dh = W / heads;
    const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
    const auto qs = static_cast<Eigen::Index>(c.q_start);

    // MLP
    gm(G.w2).noalias() += c.mlp_act.transpose() * d_out;
    gv(G.b2) += d_out.colwise().sum();
    Mat d_pre = d_out * mat(grp(G.w2)).transpose();
    d_pre.array() *= c.mlp_pre.unaryExpr([](Scalar x) { return gelu_grad(x); }).array();
    gm(G.w1).noalias() += c.ln2_out.transpose() * d_pre;
    gv(G.b1) += d_pre.colwise().sum();
    Mat d_ln2 = d_pre * mat(grp(G.w1)).transpose();
    auto dg2 = gv(G.ln2_g);
    auto db2 = gv(G.ln2_b);
    Mat d_mid = d_out + layer_norm_backward(d_ln2, c.ln2_hat, c.ln2_rstd, vec(grp(G.ln2_g)).transpose(), dg2, db2);

    // attention output projection
    gm(G.wo).noalias() += c.attn.transpose() * d_mid;
    gv(G.bo) += d_mid.colwise().sum();
    const Mat d_attn = d_mid * mat(grp(G.wo)).transpose();

    Mat d_qkv = Mat::Zero(L, 3 * W);
    for (Eigen::Index h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(qs, h * dh, Q, dh);
        const auto k = c.qkv.block(0, W + h * dh, L, dh);
        const auto v = c.qkv.block(0, 2 * W + h * dh, L, dh);
        const Mat& p = c.probs[static_cast<std::size_t>(h)];
        const auto d_o = d_attn.block(0, h * dh, Q, dh);
        d_qkv.block(0, 2 * W + h * dh, L, dh).noalias() += p.transpose() * d_o;
        Mat d_p = d_o * v.transpose();
        for (Eigen::Index r = 0; r < Q; ++r) {
            const Scalar s = (d_p.row(r).array() * p.row(r).array()).sum();
            d_p.row(r) = p.row(r).array() * (d_p.row(r).array() - s) * scale;
        }
        d_qkv.block(qs, h * dh, Q, dh).noalias() += d_p * k;
        d_qkv.block(0, W + h * dh, L, dh).noalias() += d_p.transpose() * q;
    }
    gm(G.wqkv).noalias() += c.ln1_out.transpose() * d_qkv;
    gv(G.bqkv) += d_qkv.colwise().sum();
    Mat d_ln1 = d_qkv * mat(grp(G.wqkv)).transpose();
    auto dg1 = gv(G.ln1_g);
    auto db1 = gv(G.ln1_b);
    d_in = layer_norm_backward(d_ln1, c.ln1_hat, c.ln1_rstd, vec(grp(G.ln1_g)).transpose(), dg1, db1);
    d_in.bottomRows(Q) += d_mid;
}

template <typename Scalar>
void PriorNet<Scalar>::backward(const Cache& c, const Vec& grad_out, std::span<Scalar> grad) const {
    require(grad.size() == params_.size(), ErrorKind::invalid_argument, "gradient buffer size mismatch");
    require(static_cast<std::size_t>(grad_out.size()) == cfg_.dim, ErrorKind::invalid_argument,
            "output gradient dimension mismatch");
    auto gm = [&](std::size_t gi) {
        const auto& pg = grp(gi);
        return MapM(grad.data() + pg.offset, static_cast<Eigen::Index>(pg.rows), static_cast<Eigen::Index>(pg.cols));
    };
    auto gvec = [&](std::size_t gi) {
        const auto& pg = grp(gi);
        return MapV(grad.data() + pg.offset, static_cast<Eigen::Index>(pg.size()));
    };

    gm(out_w_).noalias() += c.lnf_out * grad_out.transpose();
    gvec(out_b_) += grad_out;
    const Vec d_lnf = mat(grp(out_w_)) * grad_out;
    gvec(lnf_g_).array() += d_lnf.array() * c.lnf_hat.array();
    gvec(lnf_b_) += d_lnf;
    const Vec dhat = d_lnf.array() * vec(grp(lnf_g_)).array();
    const Scalar n = static_cast<Scalar>(cfg_.width);
    const Scalar m1 = dhat.sum() / n;
    const Scalar m2 = dhat.dot(c.lnf_hat) / n;
    Mat dh = (c.lnf_rstd * (dhat.array() - m1 - c.lnf_hat.array() * m2)).matrix().transpose();

    for (std::size_t l = cfg_.layers; l-- > 0;) {
        Mat d_in;
        layer_backward(l, c.layers[l], dh, d_in, grad);
        dh = std::move(d_in);
    }

    // dh now covers all 79 input rows.
    gm(pos_) += dh;
    const auto time_row = static_cast<Eigen::Index>(kTimeTokenIndex);
    gm(in_w_).noalias() += c.tokens.transpose() * dh;  // timestep row of tokens is zero
    gvec(in_b_) += (dh.colwise().sum() - dh.row(time_row)).transpose();
    const Vec d_time = dh.row(time_row).transpose();
    if (cfg_.time_embedding == TimeEmbeddingKind::sinusoidal) {
        gm(time_w2_).noalias() += c.time_act * d_time.transpose();
        gvec(time_b2_) += d_time;
        Vec d_pre = mat(grp(time_w2_)) * d_time;
        for (Eigen::Index i = 0; i < d_pre.size(); ++i) {
            const Scalar x = c.time_pre(i);
            const Scalar s = sigmoid(x);
            d_pre(i) *= s * (static_cast<Scalar>(1) + x * (static_cast<Scalar>(1) - s));
        }
        gm(time_w1_).noalias() += c.time_feat * d_pre.transpose();
        gvec(time_b1_) += d_pre;
    } else {
        gm(time_table_).row(c.timestep) += d_time.transpose();
    }
}

template <typename Scalar>
Embedding PriorNet<Scalar>::denoise(const TokenSequence& seq) const {
    const Vec y = forward(seq);
    std::vector<double> out(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(y(i));
    return Embedding(std::move(out), SpaceTag::image);
}

template class PriorNet<float>;
template class PriorNet<double>;
template Eigen::Matrix<float, Eigen::Dynamic, 1> timestep_features<float>(int, std::size_t);
template Eigen::Matrix<double, Eigen::Dynamic, 1> timestep_features<double>(int, std::size_t);

PriorNet<double> to_double(const PriorNet<float>& net) {
    PriorNet<double> out(net.config());
    std::transform(net.params().begin(), net.params().end(), out.params().begin(),
                   [](float v) { return static_cast<double>(v); });
    return out;
}

}  // namespace embops
