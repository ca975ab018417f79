// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded self-test suites behind `dbq check`.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dbq/quantizer.hpp"
#include "dbq/quantizer_grad.hpp"
#include "dbq/serde.hpp"
#include "dbq/util.hpp"

namespace dbq {

/// A random, constraint-satisfying quantizer with weights kept at least
/// `margin` (in normalized units) away from every threshold.
struct GradCase {
    QuantizerParams params;
    std::vector<double> weights;
    std::vector<double> upstream;
};

inline QuantizerParams random_params(int branches, Rng& rng)
{
    QuantizerParams p;
    p.alphas.resize(static_cast<std::size_t>(branches));
    double a = rng.uniform(0.4, 0.7);
    if (branches <= 2) {
        for (auto& v : p.alphas) {
            v = a;
            a *= rng.uniform(0.5, 1.0);
        }
    } else {
        // Jitter the reference ratios, then pull back into the ordered set.
        const auto ref = reference_alphas(branches);
        for (std::size_t j = 0; j < p.alphas.size(); ++j) p.alphas[j] = a * ref[j] / ref[0] * rng.uniform(0.85, 1.15);
    }
    p.gamma1 = rng.uniform(0.5, 2.0);
    p.gamma2 = rng.uniform(0.5, 2.0);
    project_alphas(p);
    auto levels = quant_levels(sign_matrix(branches), p.alphas);
    std::sort(levels.begin(), levels.end());
    for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
        const double gap = levels[i + 1] - levels[i];
        p.thresholds.push_back(levels[i] + gap * rng.uniform(0.3, 0.7));
    }
    std::sort(p.thresholds.begin(), p.thresholds.end());
    return p;
}

inline GradCase random_grad_case(std::size_t d, int branches, Rng& rng, double margin = 1e-3)
{
    GradCase c;
    c.params = random_params(branches, rng);
    double span = 0.0;
    for (double a : c.params.alphas) span += a;
    span += 0.3;
    while (c.weights.size() < d) {
        const double x = rng.uniform(-span, span);
        bool ok = true;
        for (double t : c.params.thresholds) ok = ok && std::abs(x - t) >= margin;
        if (ok) c.weights.push_back(x / c.params.gamma1);
    }
    c.upstream.resize(d);
    for (auto& u : c.upstream) u = rng.normal();
    return c;
}

struct SelfCheckResult {
    double grad_max_error = 0.0;
    std::size_t decomposition_mismatches = 0;
    std::size_t roundtrip_failures = 0;
    bool grad_ok = false;
    bool decomposition_ok = false;
    bool roundtrip_ok = false;

    bool ok() const { return grad_ok && decomposition_ok && roundtrip_ok; }
};

inline constexpr double kGradTolerance = 1e-6;
inline constexpr double kGradStep = 1e-6;

/// `inject_fault` corrupts one analytic gradient so the check must fail.
inline SelfCheckResult run_self_check(std::uint64_t seed, bool inject_fault = false)
{
    SelfCheckResult r;
    Rng rng(seed);

    for (int b : {1, 2})
        for (double t : {1.0, 10.0, 100.0})
            for (int rep = 0; rep < 4; ++rep) {
                const auto c = random_grad_case(64, b, rng);
                auto analytic = backward(c.weights, c.params, t, c.upstream);
                if (inject_fault) analytic.d_alphas[0] *= 1.001;
                const auto numeric = numeric_grads(c.weights, c.params, t, c.upstream, kGradStep);
                r.grad_max_error = std::max(r.grad_max_error, compare_grads(analytic, numeric).max());
            }
    r.grad_ok = r.grad_max_error <= kGradTolerance;

    for (int b = 1; b <= kMaxBranches; ++b) {
        const auto p = random_params(b, rng);
        std::vector<double> w(2000);
        for (std::size_t k = 0; k < w.size(); ++k) {
            // Mix in exact threshold hits.
            w[k] = (k % 10 == 0) ? p.thresholds[rng.index(p.thresholds.size())] / p.gamma1 : rng.uniform(-1.5, 1.5);
        }
        const auto z = forward_infer(w, p);
        const auto rec = decompose(w, p).reconstruct();
        for (std::size_t k = 0; k < w.size(); ++k)
            if (z[k] != rec[k]) ++r.decomposition_mismatches;
    }
    r.decomposition_ok = r.decomposition_mismatches == 0;

    for (int rep = 0; rep < 500; ++rep) {
        TernaryBranches t;
        const int b = 1 + static_cast<int>(rng.index(kMaxBranches));
        const std::size_t d = rng.index(70);
        t.branch_vectors.assign(static_cast<std::size_t>(b), std::vector<std::int8_t>(d));
        for (auto& v : t.branch_vectors)
            for (auto& e : v) e = static_cast<std::int8_t>(static_cast<int>(rng.index(3)) - 1);
        for (int j = 0; j < b; ++j) t.scales.push_back(rng.normal());
        const auto blob = serde::pack(t);
        if (blob.size() != serde::blob_size(b, d) || serde::unpack(blob) != t || serde::pack(serde::unpack(blob)) != blob)
            ++r.roundtrip_failures;
    }
    r.roundtrip_ok = r.roundtrip_failures == 0;
    return r;
}

} // namespace dbq
