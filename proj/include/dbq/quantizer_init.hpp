// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// One-shot quantizer initialization from a weight vector:
// scales from max |w|, thresholds from 1-D k-means, branch scales by least squares.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dbq/quantizer.hpp"

namespace dbq {

inline constexpr double kScaleFloor = 1e-8;

struct Scales {
    double gamma1;
    double gamma2;
};

/// gamma2 = max |w| (kScaleFloor when w is all zero), gamma1 = 1 / gamma2.
/// gamma1 is moved by at most two ulps so that gamma1 * max|w| rounds to
/// exactly 1. For some max|w| no double achieves that; gamma1 is then the
/// largest candidate with gamma1 * max|w| < 1, keeping gamma1 * w in [-1, 1].
inline Scales init_scales(std::span<const double> w)
{
    if (w.empty()) throw std::invalid_argument("cannot initialize scales from an empty weight vector");
    double m = 0.0;
    for (double v : w) m = std::max(m, std::abs(v));
    if (m == 0.0) return {1.0 / kScaleFloor, kScaleFloor};
    constexpr double kInf = std::numeric_limits<double>::infinity();
    double lo = 1.0 / m;
    for (int i = 0; i < 2; ++i) lo = std::nextafter(lo, 0.0);
    // Products increase with g; stop at the first one above 1.
    double best = lo;
    for (double g = lo; g * m <= 1.0; g = std::nextafter(g, kInf)) {
        if (g * m == 1.0) return {g, m};
        best = g;
    }
    return {best, m};
}

struct KMeansResult {
    std::vector<double> centroids;        // ascending
    std::vector<std::size_t> assignments; // 0-based centroid index per point
    double objective = 0.0;               // sum of squared distances
    std::vector<double> history;          // objective after every assignment pass
    std::size_t iterations = 0;
};

namespace detail {

inline std::size_t nearest(double x, std::span<const double> c)
{
    std::size_t best = 0;
    double bd = std::abs(x - c[0]);
    for (std::size_t i = 1; i < c.size(); ++i) {
        const double d = std::abs(x - c[i]);
        if (d < bd) {
            bd = d;
            best = i;
        }
    }
    return best;
}

inline double quantile_sorted(std::span<const double> s, double q)
{
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return s[lo] + frac * (s[hi] - s[lo]);
}

} // namespace detail

/// Lloyd's algorithm on scalars, seeded at evenly spaced quantiles. Stops when
/// assignments no longer change or after max_iters update steps. An empty
/// cluster is reseeded at the point farthest from its current centroid.
inline KMeansResult kmeans_1d(std::span<const double> x, std::size_t clusters, std::size_t max_iters = 100)
{
    if (clusters < 2) throw std::invalid_argument("k-means needs at least 2 clusters");
    if (x.size() < clusters)
        throw std::invalid_argument("k-means needs at least as many points (" + std::to_string(x.size()) +
                                    ") as clusters (" + std::to_string(clusters) + ")");

    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());

    KMeansResult r;
    r.centroids.resize(clusters);
    for (std::size_t i = 0; i < clusters; ++i)
        r.centroids[i] = detail::quantile_sorted(sorted, static_cast<double>(i) / static_cast<double>(clusters - 1));

    auto assign = [&](std::vector<std::size_t>& a) {
        double obj = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            a[k] = detail::nearest(x[k], r.centroids);
            const double d = x[k] - r.centroids[a[k]];
            obj += d * d;
        }
        return obj;
    };

    r.assignments.assign(x.size(), 0);
    r.objective = assign(r.assignments);
    r.history.push_back(r.objective);

    std::vector<double> sum(clusters);
    std::vector<std::size_t> count(clusters);
    std::vector<std::size_t> next(x.size());
    for (std::size_t it = 0; it < max_iters; ++it) {
        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t k = 0; k < x.size(); ++k) {
            sum[r.assignments[k]] += x[k];
            ++count[r.assignments[k]];
        }
        bool reseeded = false;
        for (std::size_t c = 0; c < clusters; ++c)
            if (count[c] > 0) r.centroids[c] = sum[c] / static_cast<double>(count[c]);
        for (std::size_t c = 0; c < clusters; ++c) {
            if (count[c] > 0) continue;
            std::size_t far = 0;
            double fd = -1.0;
            for (std::size_t k = 0; k < x.size(); ++k) {
                const double d = std::abs(x[k] - r.centroids[r.assignments[k]]);
                if (d > fd) {
                    fd = d;
                    far = k;
                }
            }
            r.centroids[c] = x[far];
            r.assignments[far] = c;
            reseeded = true;
        }
        if (reseeded) std::sort(r.centroids.begin(), r.centroids.end());

        const double obj = assign(next);
        ++r.iterations;
        r.history.push_back(obj);
        r.objective = obj;
        const bool same = next == r.assignments;
        r.assignments.swap(next);
        if (same && !reseeded) break;
    }
    return r;
}

/// t_i = (c_i + c_{i+1}) / 2.
inline std::vector<double> init_thresholds(std::span<const double> centroids)
{
    for (std::size_t i = 0; i + 1 < centroids.size(); ++i)
        if (centroids[i] > centroids[i + 1])
            throw std::invalid_argument("centroids must be sorted ascending (index " + std::to_string(i) + ")");
    std::vector<double> t;
    t.reserve(centroids.empty() ? 0 : centroids.size() - 1);
    for (std::size_t i = 0; i + 1 < centroids.size(); ++i) t.push_back(0.5 * (centroids[i] + centroids[i + 1]));
    return t;
}

/// Default branch scales alpha_j proportional to 2^-(j-1), summing to max |x|.
inline std::vector<double> fallback_alphas(std::span<const double> x_norm, int branches)
{
    double m = 0.0;
    for (double v : x_norm) m = std::max(m, std::abs(v));
    std::vector<double> a(static_cast<std::size_t>(branches));
    double norm = 0.0, p = 1.0;
    for (auto& v : a) {
        v = p;
        norm += p;
        p *= 0.5;
    }
    for (auto& v : a) v *= m / norm;
    return a;
}

/// Least-squares branch scales for fixed level assignments, via the B x B
/// normal equations, followed by the ordering projection. Falls back to
/// fallback_alphas() when the normal matrix is singular.
inline std::vector<double> fit_alphas(std::span<const double> x_norm, std::span<const std::size_t> assignments,
                                      const SignMatrix& e)
{
    if (x_norm.size() != assignments.size()) throw std::invalid_argument("assignment count does not match point count");
    const auto b = static_cast<std::size_t>(e.branches());
    std::vector<double> a(b * b, 0.0), rhs(b, 0.0);
    for (std::size_t k = 0; k < x_norm.size(); ++k) {
        if (assignments[k] >= e.levels())
            throw std::invalid_argument("level index " + std::to_string(assignments[k]) + " out of range");
        const auto s = e.row(assignments[k]);
        for (std::size_t r = 0; r < b; ++r) {
            rhs[r] += s[r] * x_norm[k];
            for (std::size_t c = 0; c < b; ++c) a[r * b + c] += s[r] * s[c];
        }
    }

    // Gaussian elimination with partial pivoting.
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    const double tiny = 1e-12 * std::max(scale, 1.0);
    bool singular = false;
    for (std::size_t col = 0; col < b && !singular; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < b; ++r)
            if (std::abs(a[r * b + col]) > std::abs(a[piv * b + col])) piv = r;
        if (std::abs(a[piv * b + col]) <= tiny) {
            singular = true;
            break;
        }
        if (piv != col) {
            for (std::size_t c = 0; c < b; ++c) std::swap(a[col * b + c], a[piv * b + c]);
            std::swap(rhs[col], rhs[piv]);
        }
        for (std::size_t r = col + 1; r < b; ++r) {
            const double f = a[r * b + col] / a[col * b + col];
            for (std::size_t c = col; c < b; ++c) a[r * b + c] -= f * a[col * b + c];
            rhs[r] -= f * rhs[col];
        }
    }

    QuantizerParams tmp;
    if (singular) {
        tmp.alphas = fallback_alphas(x_norm, e.branches());
    } else {
        tmp.alphas.assign(b, 0.0);
        for (std::size_t r = b; r-- > 0;) {
            double s = rhs[r];
            for (std::size_t c = r + 1; c < b; ++c) s -= a[r * b + c] * tmp.alphas[c];
            tmp.alphas[r] = s / a[r * b + r];
        }
    }
    project_alphas(tmp, kScaleFloor);
    return tmp.alphas;
}

/// init_scales -> kmeans_1d(gamma1 w, 3^B) -> init_thresholds -> fit_alphas.
inline QuantizerParams init_quantizer(std::span<const double> w, int branches, std::size_t max_iters = 100)
{
    const SignMatrix& e = sign_matrix(branches);
    if (w.size() < e.levels())
        throw std::invalid_argument("need at least " + std::to_string(e.levels()) + " weights to initialize a " +
                                    std::to_string(branches) + "-branch quantizer, got " + std::to_string(w.size()));
    const Scales s = init_scales(w);
    std::vector<double> x(w.size());
    for (std::size_t k = 0; k < w.size(); ++k) x[k] = s.gamma1 * w[k];

    const KMeansResult km = kmeans_1d(x, e.levels(), max_iters);
    QuantizerParams p;
    p.gamma1 = s.gamma1;
    p.gamma2 = s.gamma2;
    p.thresholds = init_thresholds(km.centroids);
    p.alphas = fit_alphas(x, km.assignments, e);
    return p;
}

} // namespace dbq
