// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Branched ternary quantizer: smooth training forward pass, exact inference
// forward pass and the decomposition into ternary branches.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbq/sign_matrix.hpp"

namespace dbq {

/// Cached canonical sign matrices, built once per branch count.
inline const SignMatrix& sign_matrix(int branches)
{
    static const std::array<SignMatrix, kMaxBranches> cache = [] {
        std::array<SignMatrix, kMaxBranches> c;
        for (int b = 1; b <= kMaxBranches; ++b) c[static_cast<std::size_t>(b - 1)] = build_sign_matrix(b);
        return c;
    }();
    if (branches < 1 || branches > kMaxBranches)
        throw std::invalid_argument("branch count must be in [1, 4], got " + std::to_string(branches));
    return cache[static_cast<std::size_t>(branches - 1)];
}

inline const BranchCoefficients& coefficients(int branches)
{
    static const std::vector<BranchCoefficients> cache = [] {
        std::vector<BranchCoefficients> c;
        for (int b = 1; b <= kMaxBranches; ++b) c.emplace_back(sign_matrix(b));
        return c;
    }();
    sign_matrix(branches); // range check
    return cache[static_cast<std::size_t>(branches - 1)];
}

/// Learnable state of one kernel's quantizer.
struct QuantizerParams {
    std::vector<double> alphas;     // B positive branch scales
    double gamma1 = 1.0;            // pre-quantization scale
    double gamma2 = 1.0;            // post-quantization scale
    std::vector<double> thresholds; // 3^B - 1 thresholds, normalized units

    int branches() const noexcept { return static_cast<int>(alphas.size()); }
    std::size_t levels() const noexcept { return level_count(branches()); }

    void validate() const
    {
        const int b = branches();
        if (b < 1 || b > kMaxBranches)
            throw std::invalid_argument("quantizer branch count must be in [1, 4], got " + std::to_string(b));
        if (thresholds.size() != level_count(b) - 1)
            throw std::invalid_argument("expected " + std::to_string(level_count(b) - 1) + " thresholds, got " +
                                        std::to_string(thresholds.size()));
        for (double a : alphas)
            if (!(a > 0.0)) throw std::invalid_argument("branch scales must be positive");
        if (!(gamma2 > 0.0)) throw std::invalid_argument("post-quantization scale must be positive");
    }

    bool operator==(const QuantizerParams&) const = default;
};

/// Number of adjacent threshold pairs that are out of order. Thresholds are
/// free during training; this is the monitoring hook for that.
inline std::size_t threshold_order_violations(const QuantizerParams& p)
{
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < p.thresholds.size(); ++i)
        if (!(p.thresholds[i] < p.thresholds[i + 1])) ++n;
    return n;
}

/// Projects the branch scales back onto the set where the fixed level order
/// holds, i.e. every step height c_i is non-negative, with alpha_1 >= eps.
/// For B <= 2 this is the clamp alpha_2 in [alpha_1 / 2, alpha_1]. For larger B
/// it is the Euclidean projection onto the step-height cone (Dykstra), followed
/// by a small pull towards the reference scales to remove roundoff.
/// Also keeps gamma2 >= eps.
inline void project_alphas(QuantizerParams& p, double eps = 1e-8)
{
    p.gamma2 = std::max(p.gamma2, eps);
    if (p.alphas.empty()) return;
    const int b = static_cast<int>(p.alphas.size());
    if (b <= 2) {
        p.alphas[0] = std::max(p.alphas[0], eps);
        if (b == 2) p.alphas[1] = std::clamp(p.alphas[1], 0.5 * p.alphas[0], p.alphas[0]);
        return;
    }

    const auto& bc = coefficients(b);
    std::vector<std::vector<double>> faces;
    for (std::size_t i = 0; i < bc.rows(); ++i) {
        std::vector<double> d(bc.row(i).begin(), bc.row(i).end());
        if (std::find(faces.begin(), faces.end(), d) == faces.end()) faces.push_back(std::move(d));
    }
    std::vector<double> floor_face(p.alphas.size(), 0.0);
    floor_face[0] = 1.0;

    auto dot = [](const std::vector<double>& a, const std::vector<double>& x) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * x[j];
        return s;
    };
    auto feasible = [&](const std::vector<double>& x) {
        if (x[0] < eps) return false;
        for (const auto& f : faces)
            if (dot(f, x) < 0.0) return false;
        return true;
    };

    std::vector<double> x = p.alphas;
    if (feasible(x)) return;

    // Half-spaces a.x >= rhs; the floor is alpha_1 >= eps.
    const std::size_t m = faces.size() + 1;
    std::vector<std::vector<double>> corr(m, std::vector<double>(x.size(), 0.0));
    for (int it = 0; it < 2000; ++it) {
        double moved = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            const auto& a = k < faces.size() ? faces[k] : floor_face;
            const double rhs = k < faces.size() ? 0.0 : eps;
            std::vector<double> y(x.size());
            for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] + corr[k][j];
            const double viol = rhs - dot(a, y);
            const double t = viol > 0.0 ? viol / dot(a, a) : 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double nx = y[j] + t * a[j];
                corr[k][j] = y[j] - nx;
                moved = std::max(moved, std::abs(nx - x[j]));
                x[j] = nx;
            }
        }
        if (moved <= 1e-15 * std::max(1.0, std::abs(x[0]))) break;
    }

    // The reference scales lie strictly inside the cone; mix in just enough of
    // them to clear any remaining roundoff violation.
    const auto ref = reference_alphas(b);
    const double scale = std::max(x[0], eps) / ref[0];
    double lambda = 0.0;
    for (const auto& f : faces) {
        const double c = dot(f, x), cr = dot(f, ref) * scale;
        if (c < 0.0) lambda = std::max(lambda, -c / cr);
    }
    if (x[0] < eps) lambda = std::max(lambda, (eps - x[0]) / (ref[0] * scale));
    lambda = lambda > 0.0 ? lambda * (1.0 + 1e-9) + 1e-300 : 0.0;
    // Rounding the mix itself can reopen a violation of a few ulps; grow the
    // weight until the result checks out.
    std::vector<double> y = x;
    for (int it = 0; it < 64; ++it) {
        for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] + lambda * scale * ref[j];
        if (feasible(y)) break;
        lambda = std::max(2.0 * lambda, 1e-15);
    }
    p.alphas = y;
}

/// Logistic step 1 / (1 + exp(-T u)), evaluated without overflow.
inline double smooth_step(double u, double temperature) noexcept
{
    const double x = temperature * u;
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Exact step 1{u > 0}; ties go to the lower level.
inline double ideal_step(double u) noexcept { return u > 0.0 ? 1.0 : 0.0; }

/// Smooth quantizer z = gamma2 [sum_i s_T(gamma1 w - t_i) c_i - sum_j alpha_j].
inline void forward_train(std::span<const double> w, const QuantizerParams& p, double temperature, std::span<double> out)
{
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (out.size() != w.size()) throw std::invalid_argument("output size does not match weight count");
    const auto heights = coefficients(p.branches()).step_heights(p.alphas);
    double offset = 0.0;
    for (double a : p.alphas) offset += a;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double x = p.gamma1 * w[k];
        double acc = 0.0;
        for (std::size_t i = 0; i < heights.size(); ++i) acc += smooth_step(x - p.thresholds[i], temperature) * heights[i];
        out[k] = p.gamma2 * (acc - offset);
    }
}

inline std::vector<double> forward_train(std::span<const double> w, const QuantizerParams& p, double temperature)
{
    std::vector<double> z(w.size());
    forward_train(w, p, temperature, z);
    return z;
}

/// 0-based level index of one weight: number of thresholds strictly below gamma1 w.
inline std::size_t level_index(double w, const QuantizerParams& p) noexcept
{
    const double x = p.gamma1 * w;
    std::size_t idx = 0;
    for (double t : p.thresholds)
        if (x - t > 0.0) ++idx;
    return idx;
}

/// Effective per-branch output scales gamma2 * alpha_j.
inline std::vector<double> effective_scales(const QuantizerParams& p)
{
    std::vector<double> s(p.alphas.size());
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = p.gamma2 * p.alphas[j];
    return s;
}

/// Exact quantizer. The output is accumulated as sum_j (gamma2 alpha_j) e_{i,j}
/// in branch order, which is the same arithmetic the ternary branch
/// reconstruction performs, so the two agree bit for bit.
inline void forward_infer(std::span<const double> w, const QuantizerParams& p, std::span<double> out)
{
    if (out.size() != w.size()) throw std::invalid_argument("output size does not match weight count");
    const SignMatrix& e = sign_matrix(p.branches());
    const auto scales = effective_scales(p);
    for (std::size_t k = 0; k < w.size(); ++k) {
        const auto signs = e.row(level_index(w[k], p));
        double acc = 0.0;
        for (std::size_t j = 0; j < scales.size(); ++j) acc += scales[j] * signs[j];
        out[k] = acc;
    }
}

inline std::vector<double> forward_infer(std::span<const double> w, const QuantizerParams& p)
{
    std::vector<double> z(w.size());
    forward_infer(w, p, z);
    return z;
}

/// Inference-time representation: B ternary vectors plus scales.
struct TernaryBranches {
    std::vector<std::vector<std::int8_t>> branch_vectors; // [B][D], entries in {-1, 0, +1}
    std::vector<double> scales;                           // gamma2 * alpha_j

    int branches() const noexcept { return static_cast<int>(scales.size()); }
    std::size_t length() const noexcept { return branch_vectors.empty() ? 0 : branch_vectors.front().size(); }

    std::vector<double> reconstruct() const
    {
        std::vector<double> out(length(), 0.0);
        for (std::size_t k = 0; k < out.size(); ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < scales.size(); ++j) acc += scales[j] * branch_vectors[j][k];
            out[k] = acc;
        }
        return out;
    }

    bool operator==(const TernaryBranches&) const = default;
};

inline TernaryBranches decompose(std::span<const double> w, const QuantizerParams& p)
{
    const SignMatrix& e = sign_matrix(p.branches());
    const auto b = static_cast<std::size_t>(p.branches());
    TernaryBranches t;
    t.scales = effective_scales(p);
    t.branch_vectors.assign(b, std::vector<std::int8_t>(w.size(), 0));
    for (std::size_t k = 0; k < w.size(); ++k) {
        const auto signs = e.row(level_index(w[k], p));
        for (std::size_t j = 0; j < b; ++j) t.branch_vectors[j][k] = signs[j];
    }
    return t;
}

struct BranchSparsity {
    std::vector<double> per_branch; // zero fraction of each branch
    double average = 0.0;
};

inline BranchSparsity branch_sparsity(const TernaryBranches& t)
{
    BranchSparsity s;
    const std::size_t d = t.length();
    std::size_t total_zeros = 0;
    for (const auto& v : t.branch_vectors) {
        const auto zeros = static_cast<std::size_t>(std::count(v.begin(), v.end(), std::int8_t{0}));
        total_zeros += zeros;
        s.per_branch.push_back(d == 0 ? 1.0 : static_cast<double>(zeros) / static_cast<double>(d));
    }
    const std::size_t cells = d * t.branch_vectors.size();
    s.average = cells == 0 ? 1.0 : static_cast<double>(total_zeros) / static_cast<double>(cells);
    return s;
}

} // namespace dbq
