// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbq::nn {

/// Dense row-major tensor of doubles with up to four dimensions (N, C, H, W).
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s))
    {
        if (shape.empty() || shape.size() > 4) throw std::invalid_argument("tensor rank must be 1 to 4");
        data.assign(count(shape), fill);
    }
    Tensor(std::vector<std::size_t> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values))
    {
        if (shape.empty() || shape.size() > 4) throw std::invalid_argument("tensor rank must be 1 to 4");
        if (data.size() != count(shape)) throw std::invalid_argument("tensor data length does not match its shape");
    }

    static std::size_t count(const std::vector<std::size_t>& s)
    {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t size() const noexcept { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t batch() const { return shape.at(0); }
    /// Elements per sample.
    std::size_t sample_size() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0]; }

    std::span<double> sample(std::size_t n) { return std::span<double>(data).subspan(n * sample_size(), sample_size()); }
    std::span<const double> sample(std::size_t n) const
    {
        return std::span<const double>(data).subspan(n * sample_size(), sample_size());
    }

    bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const std::vector<std::size_t>& s)
{
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

} // namespace dbq::nn
