// Copyright (c) 2026 embops contributors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate. Prints one "A<n> PASS|FAIL <detail>" line per criterion
// and exits non-zero if any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "cli.hpp"
#include "embops/bytes.hpp"
#include "embops/datagen.hpp"
#include "embops/metrics.hpp"
#include "embops/token_sequence.hpp"
#include "embops/trainer.hpp"
#include "embops/tree.hpp"
#include "support.hpp"
#include "tree_corpus.hpp"

using namespace embops;
using embops::test::TempDir;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Params {
    std::size_t a1_steps = 1500;
    std::size_t a9_steps = 1500;
    double a9_scale = 4.0;
};

// --- A1 ----------------------------------------------------------------------

Outcome toy_learnability(const Params& p) {
    constexpr std::size_t d = 16;
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset train = gen_toy(ToyOracle{ToyOracle::Kind::midpoint}, 4096, 1, d);
    auto cfg = TrainConfig::toy();
    cfg.max_steps = p.a1_steps;
    PriorConfig prior;
    prior.dim = d;
    prior.layers = 4;
    prior.heads = 4;
    prior.width = 64;
    auto state = init_train_state(prior, NoiseSchedule::make(), builtin_spec(OperatorName::union_op), cfg);
    fit(state, train);
    const OperatorModel model(to_checkpoint(state));

    // Held-out pairs from a separate stream; the oracle is written out here.
    Rng rng(999);
    std::vector<double> cos;
    for (std::uint64_t i = 0; i < 256; ++i) {
        const auto a = rng.normal_vector(d);
        const auto b = rng.normal_vector(d);
        std::vector<double> mid(d);
        for (std::size_t k = 0; k < d; ++k) mid[k] = 0.5 * (a[k] + b[k]);
        const std::vector<SlotCondition> conds{{0, Embedding(a)}, {1, Embedding(b)}};
        SamplerOptions o;
        o.steps = 25;
        o.guidance.scale = 1.0;
        o.seed = i;
        cos.push_back(cosine(model.sample(conds, o), Embedding(mid)));
    }
    std::sort(cos.begin(), cos.end());
    const double median = 0.5 * (cos[127] + cos[128]);
    const double secs = seconds_since(t0);
    return {median >= 0.95 && secs <= 900.0,
            fmt("median cosine %.4f over 256 held-out pairs (>= 0.95) after %zu steps, %.0f s (<= 900 s)", median,
                p.a1_steps, secs)};
}

// --- A2 ----------------------------------------------------------------------

Outcome scheduler_inversion(const Params&) {
    const auto s = NoiseSchedule::make();
    Rng rng(2);
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
        const Embedding e0(rng.normal_vector(16));
        const Embedding eps(rng.normal_vector(16));
        const std::size_t t = rng.below(s.steps());
        const auto xt = forward_noise(s, e0, t, eps);
        const double ab = s.alpha_bar(t);
        for (std::size_t i = 0; i < 16; ++i) {
            worst = std::max(worst, std::abs((xt[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab) - e0[i]));
        }
    }
    return {worst <= 1e-5, fmt("max abs error %.3g over 1000 draws (<= 1e-5)", worst)};
}

// --- A3 ----------------------------------------------------------------------

Outcome cfg_identities(const Params&) {
    Rng rng(3);
    int bad = 0;
    for (int n = 0; n < 1000; ++n) {
        const Embedding a(rng.normal_vector(16));
        const Embedding b(rng.normal_vector(16));
        for (const double s : {0.0, 0.5, 1.0, 4.0}) {
            if (!(cfg_combine(a, b, 1.0) == b)) ++bad;
            if (!(cfg_combine(a, a, s) == a)) ++bad;
        }
    }
    return {bad == 0, fmt("%d inexact results in 8000 checks", bad)};
}

// --- A4 ----------------------------------------------------------------------

Outcome token_layout(const Params&) {
    Rng rng(4);
    std::ostringstream problems;
    for (const auto op : all_operators()) {
        const auto spec = builtin_spec(op);
        std::vector<SlotCondition> conds;
        std::vector<bool> used(kConditionSlots, false);
        for (const auto& e : spec.slot_map.entries()) {
            conds.push_back({e.slot, Embedding(rng.normal_vector(16), e.space)});
            used[e.slot] = true;
        }
        const auto seq = build_sequence(conds, rng.below(1000), Embedding(rng.normal_vector(16)));
        if (seq.length() != 79) problems << to_string(op) << ": length " << seq.length() << "; ";
        if (seq.output_index() != 78) problems << to_string(op) << ": output index " << seq.output_index() << "; ";
        for (std::size_t i = 0; i < kConditionSlots; ++i) {
            if (used[i]) continue;
            const auto v = seq.slot(i);
            if (std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; })) {
                problems << to_string(op) << ": slot " << i << " not zero; ";
            }
        }
        if (op == OperatorName::composition) {
            std::vector<std::size_t> slots;
            for (const auto& e : spec.slot_map.entries()) slots.push_back(e.slot);
            std::vector<std::size_t> expected(12);
            std::iota(expected.begin(), expected.end(), 0);
            if (slots != expected) problems << "composition: slots are not 0..11; ";
        }
    }
    const auto text = problems.str();
    return {text.empty(), text.empty() ? fmt("%zu operators checked", all_operators().size()) : text};
}

// --- A5 ----------------------------------------------------------------------

double worst_relative_gradient_error(OperatorName op, std::uint64_t seed, int* checked_out) {
    PriorConfig cfg;
    PriorNet<double> net(cfg);
    net.init_random(seed);
    const auto spec = builtin_spec(op);
    Rng rng(seed + 1);
    std::vector<SlotCondition> conds;
    for (const auto& e : spec.slot_map.entries()) conds.push_back({e.slot, Embedding(rng.normal_vector(cfg.dim))});
    const auto seq = build_sequence(conds, 400, Embedding(rng.normal_vector(cfg.dim)));
    const auto target = rng.normal_vector(cfg.dim);
    std::optional<Embedding> e_text;
    if (spec.loss.kind == LossKind::mse_plus_similarity) e_text = Embedding(rng.normal_vector(cfg.dim));

    const auto loss = [&] {
        const auto y = net.forward(seq);
        return operator_loss(spec, Embedding(std::vector<double>(y.data(), y.data() + cfg.dim)), Embedding(target),
                             e_text);
    };
    PriorNet<double>::Cache cache;
    const auto y = net.forward(seq, &cache);
    const auto lg = operator_loss_grad(spec, std::span<const double>(y.data(), cfg.dim), target, e_text);
    std::vector<double> grad(net.params().size(), 0.0);
    net.backward(cache, Eigen::Map<const Eigen::VectorXd>(lg.grad.data(), cfg.dim), grad);

    double worst = 0.0;
    int checked = 0;
    while (checked < 10) {
        const std::size_t i = rng.below(grad.size());
        if (std::abs(grad[i]) < 1e-8) continue;
        const double h = 1e-3;
        const double orig = net.params()[i];
        net.params()[i] = orig + h;
        const double lp = loss();
        net.params()[i] = orig - h;
        const double lm = loss();
        net.params()[i] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - grad[i]) / std::max(std::abs(fd), std::abs(grad[i])));
        ++checked;
    }
    *checked_out += checked;
    return worst;
}

Outcome gradient_correctness(const Params&) {
    int checked = 0;
    const double mse = worst_relative_gradient_error(OperatorName::union_op, 51, &checked);
    const double with_text = worst_relative_gradient_error(OperatorName::instruct, 52, &checked);
    return {mse <= 1e-4 && with_text <= 1e-4,
            fmt("worst relative error %.2e (mse loss), %.2e (mse + text-similarity loss), %d parameters (<= 1e-4)",
                mse, with_text, checked)};
}

// --- A6 ----------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::string* err_text) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) *err_text += err.str();
    return code;
}

Outcome determinism(const Params&) {
    TempDir dir("accept-det");
    auto cfg = TrainConfig::toy();
    cfg.max_steps = 20;
    PriorConfig prior;
    prior.layers = 1;
    auto state = init_train_state(prior, NoiseSchedule::make(), builtin_spec(OperatorName::union_op), cfg);
    fit(state, gen_toy(ToyOracle{ToyOracle::Kind::midpoint}, 64, 6, 16));
    save_checkpoint(dir / "union.ckpt", to_checkpoint(state));
    Rng rng(6);
    write_embeddings(dir / "in.pops", EmbeddingBatch(std::vector<Embedding>{Embedding(rng.normal_vector(16)),
                                                                            Embedding(rng.normal_vector(16))}));
    write_text_file(dir / "registry.json", nlohmann::json{{"union", (dir / "union.ckpt").string()}}.dump());
    write_text_file(dir / "t.pops-tree",
                    "(let pair (union (emb in.pops#0) (emb in.pops#1)))\n(union pair (sample union) :seed 4)\n");

    std::string err;
    std::vector<std::vector<std::uint8_t>> sampled, composed;
    for (int run = 0; run < 2; ++run) {
        const auto s_out = (dir / ("s" + std::to_string(run) + ".pops")).string();
        const auto c_out = (dir / ("c" + std::to_string(run) + ".pops")).string();
        if (run_cli({"sample", "--checkpoint", (dir / "union.ckpt").string(), "--inputs",
                     "0=" + (dir / "in.pops#0").string(), "--inputs", "1=" + (dir / "in.pops#1").string(), "--seed",
                     "21", "--out", s_out},
                    &err) != 0 ||
            run_cli({"compose", "--tree", (dir / "t.pops-tree").string(), "--registry",
                     (dir / "registry.json").string(), "--seed", "5", "--out", c_out},
                    &err) != 0) {
            return {false, "command failed: " + err};
        }
        sampled.push_back(read_file_bytes(s_out));
        composed.push_back(read_file_bytes(c_out));
    }
    const bool same_sample = sampled[0] == sampled[1];
    const bool same_tree = composed[0] == composed[1];
    return {same_sample && same_tree, fmt("sample outputs %s, tree outputs %s", same_sample ? "identical" : "differ",
                                          same_tree ? "identical" : "differ")};
}

// --- A7 ----------------------------------------------------------------------

Outcome dsl_round_trip(const Params&) {
    int round_trip_failures = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        test::TreeGen gen(1000 + seed);
        const auto p = gen.program();
        try {
            if (!structurally_equal(parse_tree(serialize(p)), p)) ++round_trip_failures;
        } catch (const Error&) {
            ++round_trip_failures;
        }
    }
    int location_failures = 0;
    const auto& corpus = test::malformed_trees();
    for (const auto& c : corpus) {
        try {
            parse_tree(c.text);
            ++location_failures;
        } catch (const ParseError& e) {
            if (e.line() != c.line || e.column() != c.column ||
                e.message().find(c.message) == std::string::npos) {
                ++location_failures;
            }
        }
    }
    return {round_trip_failures == 0 && location_failures == 0 && corpus.size() >= 20,
            fmt("%d/50 round-trip failures, %d/%zu malformed inputs with a wrong or missing location",
                round_trip_failures, location_failures, corpus.size())};
}

// --- A8 ----------------------------------------------------------------------

Outcome resumability(const Params&) {
    TempDir dir("accept-resume");
    const Dataset data = gen_toy(ToyOracle{ToyOracle::Kind::midpoint}, 256, 8, 16);
    auto cfg = TrainConfig::toy();
    cfg.batch_size = 8;
    cfg.seed = 8;
    PriorConfig prior;
    const auto spec = builtin_spec(OperatorName::union_op);

    cfg.max_steps = 10;
    auto first = init_train_state(prior, NoiseSchedule::make(), spec, cfg);
    fit(first, data);
    save_checkpoint(dir / "a.ckpt", to_checkpoint(first));

    auto straight = first;
    straight.config.max_steps = 20;
    fit(straight, data);

    auto resumed = restore_train_state(load_checkpoint(dir / "a.ckpt"));
    resumed.config.max_steps = 20;
    fit(resumed, data);

    const auto equal = [](const auto& a, const auto& b) {
        return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0;
    };
    const bool params = equal(straight.net.params(), resumed.net.params());
    const bool moments = equal(straight.adam_m, resumed.adam_m) && equal(straight.adam_v, resumed.adam_v);
    save_checkpoint(dir / "straight.ckpt", to_checkpoint(straight));
    save_checkpoint(dir / "resumed.ckpt", to_checkpoint(resumed));
    const bool files = read_file_bytes(dir / "straight.ckpt") == read_file_bytes(dir / "resumed.ckpt");
    return {params && moments && files && resumed.step == 20,
            fmt("parameters %s, optimiser moments %s, checkpoint files %s after 10 + 10 steps",
                params ? "identical" : "differ", moments ? "identical" : "differ", files ? "identical" : "differ")};
}

// --- A9 ----------------------------------------------------------------------

Outcome null_input_sampling(const Params& p) {
    constexpr std::size_t d = 16;
    const Dataset train = gen_toy(ToyOracle{ToyOracle::Kind::first_arg}, 4096, 9, d);
    auto cfg = TrainConfig::toy();
    cfg.max_steps = p.a9_steps;
    cfg.per_slot_drop = 0.1;
    cfg.seed = 9;
    auto state = init_train_state(PriorConfig{}, NoiseSchedule::make(), builtin_spec(OperatorName::union_op), cfg);
    fit(state, train);
    const OperatorModel model(to_checkpoint(state));
    const double envelope = model.target_mean_norm();

    Rng rng(90);
    const std::vector<SlotCondition> conds{{0, Embedding::zeros(d)}, {1, Embedding(rng.normal_vector(d))}};
    std::vector<Embedding> outs;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        SamplerOptions o;
        o.guidance.scale = p.a9_scale;
        o.seed = seed;
        outs.push_back(model.sample(conds, o));
    }
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < outs.size(); ++i) {
        for (std::size_t j = i + 1; j < outs.size(); ++j) {
            sum += cosine(outs[i], outs[j]);
            ++pairs;
        }
    }
    const double mean_cos = sum / pairs;
    double lo = INFINITY, hi = 0.0;
    for (const auto& e : outs) {
        lo = std::min(lo, e.norm());
        hi = std::max(hi, e.norm());
    }
    const bool in_envelope = lo >= 0.5 * envelope && hi <= 2.0 * envelope;
    return {mean_cos < 0.99 && in_envelope,
            fmt("pairwise mean cosine %.4f (< 0.99); norms in [%.3f, %.3f], envelope [%.3f, %.3f]; guidance %.1f",
                mean_cos, lo, hi, 0.5 * envelope, 2.0 * envelope, p.a9_scale)};
}

// --- A10 ---------------------------------------------------------------------

Outcome metrics_harness(const Params&) {
    Rng rng(10);
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
        const auto a = rng.normal_vector(32);
        const auto b = rng.normal_vector(32);
        long double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += static_cast<long double>(a[i]) * b[i];
            na += static_cast<long double>(a[i]) * a[i];
            nb += static_cast<long double>(b[i]) * b[i];
        }
        const double brute = static_cast<double>(dot / std::sqrt(na * nb));
        worst = std::max(worst, std::abs(text_similarity(Embedding(a), Embedding(b)) - brute));
    }

    std::vector<EvalRecord> records;
    double manual[2][3] = {};
    int count[2] = {};
    for (int i = 0; i < 300; ++i) {
        const int m = i % 3 == 0 ? 0 : 1;
        EvalRecord r{"o" + std::to_string(i), "spiky", m == 0 ? "alpha" : "beta", 2 * rng.uniform() - 1,
                     2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
        manual[m][0] += r.image_similarity;
        manual[m][1] += r.text_similarity;
        manual[m][2] += r.sentence_similarity;
        ++count[m];
        records.push_back(std::move(r));
    }
    const auto rows = aggregate(records);
    double agg_err = rows.size() == 2 ? 0.0 : INFINITY;
    for (std::size_t m = 0; m < rows.size() && m < 2; ++m) {
        agg_err = std::max({agg_err, std::abs(rows[m].image_sim_mean - manual[m][0] / count[m]),
                            std::abs(rows[m].text_sim_mean - manual[m][1] / count[m]),
                            std::abs(rows[m].sent_sim_mean - manual[m][2] / count[m])});
    }

    const auto& ref = instruct_reference_scores();
    const auto it = std::find_if(ref.begin(), ref.end(), [](const auto& r) { return r.method == "instruct operator"; });
    const bool constants =
        it != ref.end() && it->image_similarity == 0.6607 && it->text_similarity == 0.236 && it->sentence_similarity == 0.437;
    std::fputs(reference_table(true).c_str(), stdout);
    return {worst <= 1e-6 && agg_err <= 1e-12 && constants,
            fmt("cosine max error %.2e (<= 1e-6), aggregate max error %.2e, reference constants %s", worst, agg_err,
                constants ? "present" : "missing")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance gate"};
    Params params;
    std::vector<std::string> only;
    app.add_option("criteria", only, "Run only these criteria (e.g. A1 A9)");
    app.add_option("--a1-steps", params.a1_steps, "Training steps for the learnability check");
    app.add_option("--a9-steps", params.a9_steps, "Training steps for the null-input check");
    app.add_option("--a9-scale", params.a9_scale, "Guidance scale for the null-input check");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome(const Params&)>>> criteria{
        {"A1", toy_learnability},    {"A2", scheduler_inversion}, {"A3", cfg_identities},
        {"A4", token_layout},        {"A5", gradient_correctness}, {"A6", determinism},
        {"A7", dsl_round_trip},      {"A8", resumability},         {"A9", null_input_sampling},
        {"A10", metrics_harness},
    };
    int failures = 0;
    for (const auto& [id, check] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome r;
        try {
            r = check(params);
        } catch (const std::exception& e) {
            r = {false, std::string("threw: ") + e.what()};
        }
        if (!r.pass) ++failures;
        std::printf("%s %s %s\n", id.c_str(), r.pass ? "PASS" : "FAIL", r.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
