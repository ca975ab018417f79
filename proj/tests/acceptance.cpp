// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Tolerances are pinned below.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dbq/act_quant.hpp"
#include "dbq/cost_model.hpp"
#include "dbq/nn/config.hpp"
#include "dbq/nn/train.hpp"
#include "dbq/quantizer.hpp"
#include "dbq/quantizer_grad.hpp"
#include "dbq/quantizer_init.hpp"
#include "dbq/selfcheck.hpp"
#include "dbq/serde.hpp"
#include "dbq/util.hpp"

using namespace dbq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string source(const std::string& rel) { return std::string(DBQ_SOURCE_DIR) + "/" + rel; }

struct Outcome {
    bool pass = false;
    std::string detail;
};

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * std::abs(target); }

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome cost_tables()
{
    struct Row {
        const char *arch, *assign;
        double cc, cc_tol, cm, cm_tol;
    };
    const Row rows[] = {
        {"resnet20", "resnet20_fp", 23.73e9, 0.05, 8.63e6, 0.02},
        {"resnet20", "resnet20_dbq1t", 1.60e9, 0.05, 0.61e6, 0.05},
        {"resnet20", "resnet20_dbq2t", 2.83e9, 0.05, 1.15e6, 0.05},
        {"mobilenetv1", "mobilenetv1_dbq2t_4", 2.18e10, 0.05, 2.18e7, 0.05},
    };
    const auto t0 = Clock::now();
    Outcome o{true, ""};
    for (const auto& r : rows) {
        const auto arch = cost::load_arch(source(std::string("data/arch/") + r.arch + ".json"));
        const auto pa = cost::load_assignment(source(std::string("data/assign/") + r.assign + ".json"));
        const auto rep = cost::evaluate(arch, pa);
        const auto cc = static_cast<double>(rep.cc), cm = static_cast<double>(rep.cm);
        const bool ok = within(cc, r.cc, r.cc_tol) && within(cm, r.cm, r.cm_tol);
        o.pass = o.pass && ok;
        o.detail += fmt("%s C_C %.4g C_M %.4g%s; ", r.assign, cc, cm, ok ? "" : " (out of tolerance)");
    }
    const double s = seconds_since(t0);
    o.pass = o.pass && s < 1.0;
    o.detail += fmt("%.3f s (limit 1 s)", s);
    return o;
}

Outcome gradient_suite()
{
    constexpr double kTol = 1e-6;
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (int b : {1, 2})
        for (double t : {1.0, 10.0, 100.0})
            for (std::uint64_t seed = 1; seed <= 100; ++seed) {
                Rng rng(seed * 1000 + static_cast<std::uint64_t>(b * 10) + static_cast<std::uint64_t>(t));
                const auto c = random_grad_case(64, b, rng);
                const auto r = finite_diff_check(c.weights, c.params, t, c.upstream, kGradStep);
                worst = std::max(worst, r.max());
            }
    const double s = seconds_since(t0);
    return {worst <= kTol && s < 10.0, fmt("600 cases, max rel err %.3e (tol %.0e), %.2f s (limit 10 s)", worst, kTol, s)};
}

Outcome temperature_limit()
{
    constexpr double kTemperature = 1e4, kMargin = 1e-2, kRel = 1e-3;
    double worst = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        const int b = 1 + static_cast<int>(seed % kMaxBranches);
        const auto c = random_grad_case(1000, b, rng, kMargin);
        const auto soft = forward_train(c.weights, c.params, kTemperature);
        const auto hard = forward_infer(c.weights, c.params);
        for (std::size_t i = 0; i < soft.size(); ++i, ++n)
            worst = std::max(worst, std::abs(soft[i] - hard[i]) / c.params.gamma2);
    }
    return {n == 100000 && worst <= kRel, fmt("%zu elements, max |train - infer| / gamma2 = %.3e (tol %.0e)", n, worst, kRel)};
}

Outcome decomposition_exactness()
{
    std::size_t n = 0, mismatches = 0, boundary = 0;
    for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
        Rng rng(seed + 7777);
        const int b = 1 + static_cast<int>(seed % kMaxBranches);
        auto c = random_grad_case(1000, b, rng, 0.0);
        const auto& p = c.params;
        // Every tenth element sits on a threshold or one ulp to either side.
        for (std::size_t i = 0; i < c.weights.size(); i += 10) {
            const double t = p.thresholds[rng.index(p.thresholds.size())] / p.gamma1;
            const int side = static_cast<int>(rng.index(3));
            c.weights[i] = side == 0 ? t : std::nextafter(t, side == 1 ? -INFINITY : INFINITY);
            ++boundary;
        }
        const auto y = forward_infer(c.weights, p);
        const auto z = decompose(c.weights, p).reconstruct();
        for (std::size_t i = 0; i < y.size(); ++i, ++n)
            if (std::bit_cast<std::uint64_t>(y[i]) != std::bit_cast<std::uint64_t>(z[i])) ++mismatches;
    }
    return {n == 1000000 && mismatches == 0,
            fmt("%zu elements (%zu at or next to thresholds), %zu bit mismatches", n, boundary, mismatches)};
}

Outcome b2_structure()
{
    constexpr double kTol = 1e-12;
    const auto& coeff = coefficients(2);
    Rng rng(2024);
    double worst = 0.0;
    bool shape_ok = coeff.rows() == 8;
    for (int k = 0; k < 100 && shape_ok; ++k) {
        const double a1 = rng.uniform(0.05, 2.0);
        const double a2 = a1 * rng.uniform(0.5, 1.0);
        const std::vector<double> expected{a2, a1 - a2, 2 * a2 - a1, a1 - a2, a1 - a2, 2 * a2 - a1, a1 - a2, a2};
        const auto got = coeff.step_heights(std::vector<double>{a1, a2});
        for (std::size_t i = 0; i < 8; ++i) worst = std::max(worst, std::abs(got[i] - expected[i]));
    }
    return {shape_ok && worst <= kTol, fmt("100 alpha pairs, max |step - expected| = %.3e (tol %.0e)", worst, kTol)};
}

Outcome initialization()
{
    constexpr double kSigma = 0.01, kMaxErr = 5 * kSigma;
    // 2T levels with scales 0.4 * (1.0, 0.6); the smallest level gap is 8 sigma.
    const std::vector<double> alphas{0.4, 0.24};
    auto truth = quant_levels(sign_matrix(2), alphas);
    std::sort(truth.begin(), truth.end());
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        std::vector<double> w;
        for (int rep = 0; rep < 200; ++rep)
            for (double v : truth) w.push_back(v + rng.normal(0.0, kSigma));
        rng.shuffle(w);
        const auto p = init_quantizer(w, 2);
        auto got = quant_levels(sign_matrix(2), effective_scales(p));
        std::sort(got.begin(), got.end());
        for (std::size_t i = 0; i < truth.size(); ++i) worst = std::max(worst, std::abs(got[i] - truth[i]));
    }

    // Lloyd iterations never increase the objective; the slack only absorbs
    // summation rounding.
    constexpr double kSlack = 1e-12;
    std::size_t violations = 0, passes = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed + 500);
        std::vector<double> x(400);
        for (auto& v : x) v = rng.uniform() < 0.5 ? rng.normal(0.0, 0.5) : rng.uniform(-2.0, 2.0);
        const auto r = kmeans_1d(x, 2 + rng.index(8));
        for (std::size_t i = 1; i < r.history.size(); ++i, ++passes)
            if (r.history[i] > r.history[i - 1] * (1 + kSlack)) ++violations;
    }
    return {worst <= kMaxErr && violations == 0,
            fmt("level error %.3e (limit %.2g over 20 seeds); k-means %zu passes over 100 runs, %zu increases", worst,
                kMaxErr, passes, violations)};
}

Outcome clipping()
{
    constexpr double kMaxFraction = 1e-3;
    Rng rng(6);
    BnChannelParams bn;
    for (int c = 0; c < 10; ++c) {
        bn.betas.push_back(rng.uniform(-1.0, 1.0));
        bn.gammas.push_back(rng.uniform(0.1, 2.0));
    }
    const double clip = clip_value(bn, 6.0);
    std::size_t over = 0, total = 0;
    for (std::size_t c = 0; c < bn.channels(); ++c)
        for (int k = 0; k < 100000; ++k, ++total) over += rng.normal(bn.betas[c], bn.gammas[c]) > clip;
    const double frac = static_cast<double>(over) / static_cast<double>(total);
    return {total == 1000000 && frac <= kMaxFraction,
            fmt("%zu draws, clipped fraction %.2e (limit %.0e)", total, frac, kMaxFraction)};
}

Outcome finetune()
{
    using namespace dbq::nn;
    constexpr double kAccPoints = 2.0, kGapPoints = 0.5, kSeconds = 300.0;
    const auto t0 = Clock::now();
    const auto cfg = load_experiment(source("configs/patches_cnn.json"));
    const auto data = make_datasets(cfg);
    Sequential fp = build_model(cfg, QuantizeMap{});
    train_fp(fp, options(cfg.fp, derive_seed(cfg.seed, kFpStream)), data.train, &data.eval);
    const double fp_acc = 100.0 * evaluate(fp, data.eval);

    Sequential q = build_model(cfg, cfg.quantize);
    q.load(fp.save());
    const auto r = finetune_quantized(q, options(cfg.finetune, derive_seed(cfg.seed, kFinetuneStream)), data.train,
                                      &data.eval);
    const double infer = 100.0 * r.infer_acc, train_mode = 100.0 * r.train_mode_acc;
    const double s = seconds_since(t0);
    const bool ok = std::abs(infer - fp_acc) <= kAccPoints && std::abs(train_mode - infer) <= kGapPoints && s <= kSeconds;
    return {ok, fmt("FP %.2f%%, 2T infer %.2f%%, train-mode (T=%g) %.2f%%, %.1f s (limits %.1f pt, %.1f pt, %.0f s)", fp_acc,
                    infer, r.final_temperature, train_mode, s, kAccPoints, kGapPoints, kSeconds)};
}

Outcome sparsity_accounting()
{
    constexpr double kRel = 0.01;
    Rng rng(9);
    struct Shape {
        const char* name;
        std::size_t kernels, length;
        std::int64_t positions;
    };
    const Shape shapes[] = {{"pw1", 64, 256, 49}, {"pw2", 32, 576, 16}};
    std::vector<cost::QuantizedLayerWeights> model;
    for (const auto& sh : shapes) {
        cost::QuantizedLayerWeights l;
        l.name = sh.name;
        for (std::size_t k = 0; k < sh.kernels; ++k) {
            std::vector<double> w(sh.length);
            for (auto& v : w) v = rng.normal(0.0, 0.05);
            l.kernels.push_back(decompose(w, init_quantizer(w, 2)));
        }
        model.push_back(std::move(l));
    }
    const auto table = cost::sparsity_table(model);

    // Independent recount.
    std::int64_t elements = 0, zeros = 0;
    bool rows_ok = table.rows.size() == model.size();
    for (std::size_t i = 0; i < model.size() && rows_ok; ++i) {
        std::int64_t le = 0, lz = 0;
        for (const auto& k : model[i].kernels)
            for (const auto& v : k.branch_vectors)
                for (auto e : v) {
                    ++le;
                    lz += e == 0;
                }
        rows_ok = table.rows[i].elements == le && table.rows[i].zeros == lz;
        elements += le;
        zeros += lz;
    }
    const bool recount_ok = rows_ok && table.elements == elements && table.zeros == zeros;

    double worst = 0.0;
    const auto dens = table.densities();
    for (const auto& sh : shapes) {
        cost::LayerSpec l;
        l.name = sh.name;
        l.kind = cost::LayerKind::pointwise;
        l.dot_products = static_cast<std::int64_t>(sh.kernels) * sh.positions;
        l.dot_length = static_cast<std::int64_t>(sh.length);
        l.weights = static_cast<std::int64_t>(sh.kernels * sh.length);
        l.activations = l.dot_products;
        cost::LayerPrecision lp{cost::Precision::ternary(2), cost::Precision::fixed(4), dens.at(sh.name)};
        const auto c = cost::layer_cost(l, lp, cost::Precision::fp32());
        const double d = lp.density, dl = static_cast<double>(sh.length);
        const double predicted = (d * dl - 1.0) / (dl - 1.0);
        const double ratio = static_cast<double>(c.cs) / static_cast<double>(c.cc);
        worst = std::max(worst, std::abs(ratio - predicted) / predicted);
    }
    return {recount_ok && worst <= kRel,
            fmt("densities %.4f / %.4f, max ratio deviation %.3e (tol %.0e), recount %s", dens.at("pw1"), dens.at("pw2"),
                worst, kRel, recount_ok ? "exact" : "MISMATCH")};
}

Outcome serialization()
{
    using namespace dbq::serde;
    Rng rng(10);
    std::size_t failures = 0;
    for (int rep = 0; rep < 10000; ++rep) {
        const int b = 1 + static_cast<int>(rng.index(kMaxBranches));
        const std::size_t d = rng.index(257);
        TernaryBranches t;
        for (int j = 0; j < b; ++j) {
            t.scales.push_back(rng.normal());
            std::vector<std::int8_t> v(d);
            for (auto& e : v) e = static_cast<std::int8_t>(static_cast<int>(rng.index(3)) - 1);
            t.branch_vectors.push_back(std::move(v));
        }
        const auto blob = pack(t);
        const auto back = unpack(blob);
        bool same = back.branch_vectors == t.branch_vectors && back.scales.size() == t.scales.size();
        for (std::size_t j = 0; same && j < t.scales.size(); ++j)
            same = std::bit_cast<std::uint64_t>(back.scales[j]) == std::bit_cast<std::uint64_t>(t.scales[j]);
        failures += !(same && pack(back) == blob);
    }

    TernaryBranches t{{{1, -1, 0, 1, 0}, {0, 1, -1, -1, 1}}, {0.7, 0.4}};
    const auto good = pack(t);
    auto expect = [&](std::vector<std::uint8_t> blob, FormatErrorKind want) {
        try {
            unpack(blob);
        } catch (const FormatError& e) {
            return e.kind() == want;
        }
        return false;
    };
    auto magic = good;
    magic[1] = 'X';
    auto version = good;
    version[4] = 9;
    auto code = good;
    code[kBlobHeaderSize + 16] |= 0b11;
    auto truncated = good;
    truncated.pop_back();
    const bool kinds = expect(magic, FormatErrorKind::bad_magic) &&
                       expect(version, FormatErrorKind::unsupported_version) &&
                       expect(code, FormatErrorKind::invalid_code) && expect(truncated, FormatErrorKind::truncated);
    return {failures == 0 && kinds,
            fmt("10000 roundtrips, %zu failures; malformed inputs %s", failures, kinds ? "all rejected with the right kind" : "MISCLASSIFIED")};
}

} // namespace

int main()
{
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"cost tables", cost_tables},
        {"gradient suite", gradient_suite},
        {"temperature limit", temperature_limit},
        {"decomposition exactness", decomposition_exactness},
        {"two-branch step structure", b2_structure},
        {"initialization", initialization},
        {"clipping guarantee", clipping},
        {"desk-scale fine-tune", finetune},
        {"sparsity accounting", sparsity_accounting},
        {"serialization", serialization},
    };
    int failed = 0, i = 0;
    for (const auto& [name, fn] : criteria) {
        ++i;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("[%s] criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", i, name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%d criteria passed\n", i - failed, i);
    return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
