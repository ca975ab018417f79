// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbq {

inline constexpr int kMaxBranches = 4;

constexpr std::size_t level_count(int branches)
{
    std::size_t n = 1;
    for (int j = 0; j < branches; ++j) n *= 3;
    return n;
}

/// Level-to-branch assignment: row i holds the ternary digits e_{i,j} of
/// level i. Rows are sorted so that the induced levels ascend whenever the
/// branch scales satisfy the ordering constraint.
class SignMatrix {
public:
    SignMatrix() = default;

    int branches() const noexcept { return branches_; }
    std::size_t levels() const noexcept { return levels_; }

    std::span<const std::int8_t> row(std::size_t i) const
    {
        return {entries_.data() + i * static_cast<std::size_t>(branches_), static_cast<std::size_t>(branches_)};
    }
    std::int8_t operator()(std::size_t i, int j) const { return entries_[i * static_cast<std::size_t>(branches_) + static_cast<std::size_t>(j)]; }

    /// Index of the row equal to the given sign vector.
    std::size_t find(std::span<const std::int8_t> signs) const
    {
        for (std::size_t i = 0; i < levels_; ++i)
            if (std::equal(signs.begin(), signs.end(), row(i).begin())) return i;
        throw std::invalid_argument("sign vector not present in sign matrix");
    }

private:
    friend SignMatrix build_sign_matrix(int branches);

    int branches_ = 0;
    std::size_t levels_ = 0;
    std::vector<std::int8_t> entries_;
};

/// Branch scales used only to fix the row order: geometric with ratio 1.5,
/// which lies strictly inside the B=2 constraint interval (1, 2) and gives
/// 3^B distinct levels for every supported B.
inline std::vector<double> reference_alphas(int branches)
{
    std::vector<double> a(static_cast<std::size_t>(branches));
    double v = 1.0;
    for (int j = branches - 1; j >= 0; --j) {
        a[static_cast<std::size_t>(j)] = v;
        v *= 1.5;
    }
    return a;
}

inline SignMatrix build_sign_matrix(int branches)
{
    if (branches < 1 || branches > kMaxBranches)
        throw std::invalid_argument("branch count must be in [1, " + std::to_string(kMaxBranches) + "], got " +
                                    std::to_string(branches));
    const std::size_t n = level_count(branches);
    const auto bsz = static_cast<std::size_t>(branches);

    std::vector<std::int8_t> raw(n * bsz);
    for (std::size_t code = 0; code < n; ++code) {
        std::size_t c = code;
        for (std::size_t j = bsz; j-- > 0;) {
            raw[code * bsz + j] = static_cast<std::int8_t>(static_cast<int>(c % 3) - 1);
            c /= 3;
        }
    }

    const auto ref = reference_alphas(branches);
    std::vector<double> value(n, 0.0);
    for (std::size_t code = 0; code < n; ++code)
        for (std::size_t j = 0; j < bsz; ++j) value[code] += raw[code * bsz + j] * ref[j];

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });

    SignMatrix m;
    m.branches_ = branches;
    m.levels_ = n;
    m.entries_.resize(n * bsz);
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(raw.begin() + static_cast<std::ptrdiff_t>(order[i] * bsz), bsz,
                    m.entries_.begin() + static_cast<std::ptrdiff_t>(i * bsz));
    return m;
}

/// Fixed step coefficients b_{i,j} = e_{i+1,j} - e_{i,j}, (N-1) x B.
class BranchCoefficients {
public:
    explicit BranchCoefficients(const SignMatrix& e) : branches_(e.branches()), rows_(e.levels() - 1)
    {
        const auto bsz = static_cast<std::size_t>(branches_);
        coeff_.resize(rows_ * bsz);
        for (std::size_t i = 0; i < rows_; ++i)
            for (int j = 0; j < branches_; ++j)
                coeff_[i * bsz + static_cast<std::size_t>(j)] = static_cast<std::int8_t>(e(i + 1, j) - e(i, j));
    }

    int branches() const noexcept { return branches_; }
    std::size_t rows() const noexcept { return rows_; }
    std::int8_t operator()(std::size_t i, int j) const { return coeff_[i * static_cast<std::size_t>(branches_) + static_cast<std::size_t>(j)]; }
    std::span<const std::int8_t> row(std::size_t i) const
    {
        return {coeff_.data() + i * static_cast<std::size_t>(branches_), static_cast<std::size_t>(branches_)};
    }

    /// Step heights c_i = sum_j b_{i,j} alpha_j, i.e. v_{i+1} - v_i.
    std::vector<double> step_heights(std::span<const double> alphas) const
    {
        std::vector<double> c(rows_, 0.0);
        for (std::size_t i = 0; i < rows_; ++i)
            for (int j = 0; j < branches_; ++j) c[i] += (*this)(i, j) * alphas[static_cast<std::size_t>(j)];
        return c;
    }

private:
    int branches_;
    std::size_t rows_;
    std::vector<std::int8_t> coeff_;
};

inline BranchCoefficients branch_coefficients(const SignMatrix& e) { return BranchCoefficients(e); }

/// v_i = sum_j e_{i,j} alpha_j (normalized units, before gamma2).
inline std::vector<double> quant_levels(const SignMatrix& e, std::span<const double> alphas)
{
    if (alphas.size() != static_cast<std::size_t>(e.branches()))
        throw std::invalid_argument("alpha count does not match branch count");
    std::vector<double> v(e.levels(), 0.0);
    for (std::size_t i = 0; i < e.levels(); ++i)
        for (int j = 0; j < e.branches(); ++j) v[i] += e(i, j) * alphas[static_cast<std::size_t>(j)];
    return v;
}

} // namespace dbq
