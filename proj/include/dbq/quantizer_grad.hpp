// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Closed-form backward pass of the smooth quantizer, plus a central
// finite-difference harness used to validate it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "dbq/quantizer.hpp"
#include "dbq/util.hpp"

namespace dbq {

struct QuantizerGrads {
    std::vector<double> d_alphas;
    double d_gamma1 = 0.0;
    double d_gamma2 = 0.0;
    std::vector<double> d_thresholds;
    std::vector<double> d_weights;
};

/// Gradients of L through z = forward_train(w, p, T), given upstream = dL/dz.
/// Reductions over weights use fixed-order pairwise summation.
inline QuantizerGrads backward(std::span<const double> w, const QuantizerParams& p, double temperature,
                               std::span<const double> upstream)
{
    if (upstream.size() != w.size()) throw std::invalid_argument("upstream gradient size does not match weight count");
    if (p.thresholds.size() != p.levels() - 1) throw std::invalid_argument("threshold count does not match branch count");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (p.gamma2 == 0.0) throw std::invalid_argument("post-quantization scale must be non-zero");

    const auto& coeff = coefficients(p.branches());
    const auto heights = coeff.step_heights(p.alphas);
    const std::size_t d = w.size();
    const std::size_t steps = heights.size();
    const auto b = static_cast<std::size_t>(p.branches());
    double offset = 0.0;
    for (double a : p.alphas) offset += a;

    // Per-weight terms, reduced afterwards.
    std::vector<double> alpha_terms(b * d), thr_terms(steps * d), g1_terms(d), g2_terms(d);
    QuantizerGrads g;
    g.d_weights.resize(d);

    std::vector<double> gk(steps);
    for (std::size_t k = 0; k < d; ++k) {
        const double x = p.gamma1 * w[k];
        double zsum = 0.0;
        double hsum = 0.0; // sum_i h_{k,i} c_i
        for (std::size_t i = 0; i < steps; ++i) {
            const double u = x - p.thresholds[i];
            const double g_ki = smooth_step(u, temperature);
            const double h_ki = g_ki * smooth_step(-u, temperature); // 1 - g from the other branch
            gk[i] = g_ki;
            zsum += g_ki * heights[i];
            hsum += h_ki * heights[i];
            thr_terms[i * d + k] = upstream[k] * h_ki * heights[i];
        }
        for (std::size_t j = 0; j < b; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < steps; ++i) s += coeff(i, static_cast<int>(j)) * gk[i];
            alpha_terms[j * d + k] = upstream[k] * (s - 1.0);
        }
        const double z = p.gamma2 * (zsum - offset);
        g2_terms[k] = upstream[k] * z;
        g1_terms[k] = upstream[k] * w[k] * hsum;
        g.d_weights[k] = p.gamma1 * p.gamma2 * temperature * upstream[k] * hsum;
    }

    g.d_alphas.resize(b);
    for (std::size_t j = 0; j < b; ++j)
        g.d_alphas[j] = p.gamma2 * pairwise_sum(std::span<const double>(alpha_terms).subspan(j * d, d));
    g.d_thresholds.resize(steps);
    for (std::size_t i = 0; i < steps; ++i)
        g.d_thresholds[i] = -p.gamma2 * temperature * pairwise_sum(std::span<const double>(thr_terms).subspan(i * d, d));
    g.d_gamma1 = p.gamma2 * temperature * pairwise_sum(g1_terms);
    g.d_gamma2 = pairwise_sum(g2_terms) / p.gamma2;
    return g;
}

/// Relative error per parameter group, ||a - b|| / max(||a||, ||b||, eps) in the
/// 2-norm. Measuring whole groups keeps finite-difference rounding noise on
/// near-zero components (saturated sigmoids at high T) from dominating.
struct GradCheckReport {
    double alphas = 0.0;
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    double thresholds = 0.0;
    double weights = 0.0;

    double max() const { return std::max({alphas, gamma1, gamma2, thresholds, weights}); }
};

inline double relative_error(std::span<const double> a, std::span<const double> b, double eps)
{
    if (a.size() != b.size()) throw std::invalid_argument("gradient groups have different sizes");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), eps});
}

inline double relative_error(double a, double b, double eps)
{
    return relative_error(std::span<const double>(&a, 1), std::span<const double>(&b, 1), eps);
}

inline GradCheckReport compare_grads(const QuantizerGrads& a, const QuantizerGrads& b, double eps = 1e-12)
{
    GradCheckReport r;
    r.alphas = relative_error(a.d_alphas, b.d_alphas, eps);
    r.gamma1 = relative_error(a.d_gamma1, b.d_gamma1, eps);
    r.gamma2 = relative_error(a.d_gamma2, b.d_gamma2, eps);
    r.thresholds = relative_error(a.d_thresholds, b.d_thresholds, eps);
    r.weights = relative_error(a.d_weights, b.d_weights, eps);
    return r;
}

/// Central differences of L = sum_k upstream_k z_k with respect to every
/// scalar parameter. L(+) - L(-) is accumulated per element as
/// sum_k upstream_k (z_k(+) - z_k(-)), which is the same quantity with less
/// cancellation against the (unchanged) bulk of L.
inline QuantizerGrads numeric_grads(std::span<const double> w, const QuantizerParams& p, double temperature,
                                    std::span<const double> upstream, double step)
{
    if (!(step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
    const std::size_t d = w.size();
    std::vector<double> zp(d), zm(d), terms(d);

    auto delta_all = [&](const QuantizerParams& plus, const QuantizerParams& minus) {
        forward_train(w, plus, temperature, zp);
        forward_train(w, minus, temperature, zm);
        for (std::size_t k = 0; k < d; ++k) terms[k] = upstream[k] * (zp[k] - zm[k]);
        return pairwise_sum(terms) / (2.0 * step);
    };
    auto perturb = [&](auto&& field) {
        QuantizerParams plus = p, minus = p;
        field(plus) += step;
        field(minus) -= step;
        return delta_all(plus, minus);
    };

    QuantizerGrads g;
    for (std::size_t j = 0; j < p.alphas.size(); ++j)
        g.d_alphas.push_back(perturb([j](QuantizerParams& q) -> double& { return q.alphas[j]; }));
    g.d_gamma1 = perturb([](QuantizerParams& q) -> double& { return q.gamma1; });
    g.d_gamma2 = perturb([](QuantizerParams& q) -> double& { return q.gamma2; });
    for (std::size_t i = 0; i < p.thresholds.size(); ++i)
        g.d_thresholds.push_back(perturb([i](QuantizerParams& q) -> double& { return q.thresholds[i]; }));

    // Weight w_k only moves z_k.
    g.d_weights.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
        const double wp = w[k] + step, wm = w[k] - step;
        double outp = 0.0, outm = 0.0;
        forward_train(std::span<const double>(&wp, 1), p, temperature, std::span<double>(&outp, 1));
        forward_train(std::span<const double>(&wm, 1), p, temperature, std::span<double>(&outm, 1));
        g.d_weights[k] = upstream[k] * (outp - outm) / (2.0 * step);
    }
    return g;
}

/// Analytic backward against central differences.
inline GradCheckReport finite_diff_check(std::span<const double> w, const QuantizerParams& p, double temperature,
                                         std::span<const double> upstream, double step, double eps = 1e-12)
{
    return compare_grads(backward(w, p, temperature, upstream), numeric_grads(w, p, temperature, upstream, step), eps);
}

} // namespace dbq
