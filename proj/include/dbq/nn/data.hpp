// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// In-memory classification datasets: synthetic generators and an IDX loader.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbq/nn/tensor.hpp"
#include "dbq/serde.hpp"
#include "dbq/util.hpp"

namespace dbq::nn {

struct Dataset {
    std::vector<std::size_t> sample_shape; // e.g. {2} or {1, 8, 8}
    std::vector<double> x;
    std::vector<int> y;
    std::size_t classes = 0;

    std::size_t size() const noexcept { return y.size(); }
    bool empty() const noexcept { return y.empty(); }
    std::size_t sample_size() const { return Tensor::count(sample_shape); }

    void push(std::span<const double> sample, int label)
    {
        if (sample.size() != sample_size()) throw std::invalid_argument("sample size does not match dataset shape");
        x.insert(x.end(), sample.begin(), sample.end());
        y.push_back(label);
    }

    /// Gathers the given rows into a batch tensor and its labels.
    std::pair<Tensor, std::vector<int>> batch(std::span<const std::size_t> rows) const
    {
        std::vector<std::size_t> shape{rows.size()};
        shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
        Tensor t(shape);
        std::vector<int> labels(rows.size());
        const std::size_t s = sample_size();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(rows[i] * s), s,
                        t.data.begin() + static_cast<std::ptrdiff_t>(i * s));
            labels[i] = y[rows[i]];
        }
        return {std::move(t), std::move(labels)};
    }

    Dataset subset(std::span<const std::size_t> rows) const
    {
        Dataset d{sample_shape, {}, {}, classes};
        const std::size_t s = sample_size();
        for (std::size_t r : rows) d.push(std::span<const double>(x).subspan(r * s, s), y[r]);
        return d;
    }
};

/// Isotropic Gaussian clusters with centres drawn uniformly in [-spread, spread]^dims.
inline Dataset make_blobs(std::size_t n, std::size_t classes, std::size_t dims, double spread, double sigma, Rng& rng)
{
    if (classes < 2 || dims == 0) throw std::invalid_argument("blobs need >= 2 classes and >= 1 dimension");
    std::vector<double> centres(classes * dims);
    for (auto& c : centres) c = rng.uniform(-spread, spread);
    Dataset d{{dims}, {}, {}, classes};
    std::vector<double> s(dims);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        for (std::size_t j = 0; j < dims; ++j) s[j] = centres[c * dims + j] + rng.normal(0.0, sigma);
        d.push(s, static_cast<int>(c));
    }
    return d;
}

/// Interleaved 2-D spiral arms, one per class.
inline Dataset make_spirals(std::size_t n, std::size_t classes, double noise, Rng& rng)
{
    if (classes < 2) throw std::invalid_argument("spirals need >= 2 classes");
    Dataset d{{2}, {}, {}, classes};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        const double r = rng.uniform(0.05, 1.0);
        const double theta = 3.0 * r * std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(c) /
                                                               static_cast<double>(classes);
        const double s[2] = {r * std::cos(theta) + rng.normal(0.0, noise), r * std::sin(theta) + rng.normal(0.0, noise)};
        d.push(s, static_cast<int>(c));
    }
    return d;
}

/// Small single-channel images. Each class has a fixed prototype built from
/// a few Gaussian bumps; samples are shifted by up to one pixel, rescaled
/// and corrupted with pixel noise.
class PatchTask {
public:
    PatchTask(std::size_t classes, std::size_t size, std::uint64_t prototype_seed, double noise = 0.3,
              std::size_t bumps = 3)
        : classes_(classes), size_(size), noise_(noise)
    {
        if (classes < 2 || size < 4) throw std::invalid_argument("patch task needs >= 2 classes and size >= 4");
        Rng rng(prototype_seed);
        protos_.assign(classes * size * size, 0.0);
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t b = 0; b < bumps; ++b) {
                const double cy = rng.uniform(1.0, static_cast<double>(size) - 2.0);
                const double cx = rng.uniform(1.0, static_cast<double>(size) - 2.0);
                const double w = rng.uniform(0.8, 1.8);
                const double a = rng.uniform() < 0.5 ? -1.0 : 1.0;
                for (std::size_t y = 0; y < size; ++y)
                    for (std::size_t x = 0; x < size; ++x) {
                        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                        protos_[(c * size + y) * size + x] += a * std::exp(-(dy * dy + dx * dx) / (2.0 * w * w));
                    }
            }
    }

    std::size_t classes() const noexcept { return classes_; }
    std::size_t size() const noexcept { return size_; }
    std::span<const double> prototype(std::size_t c) const
    {
        return std::span<const double>(protos_).subspan(c * size_ * size_, size_ * size_);
    }

    Dataset sample(std::size_t n, Rng& rng) const
    {
        Dataset d{{1, size_, size_}, {}, {}, classes_};
        std::vector<double> img(size_ * size_);
        const auto s = static_cast<std::ptrdiff_t>(size_);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = i % classes_;
            const auto sy = static_cast<std::ptrdiff_t>(rng.index(3)) - 1;
            const auto sx = static_cast<std::ptrdiff_t>(rng.index(3)) - 1;
            const double gain = rng.uniform(0.7, 1.3);
            const auto p = prototype(c);
            for (std::ptrdiff_t y = 0; y < s; ++y)
                for (std::ptrdiff_t x = 0; x < s; ++x) {
                    const std::ptrdiff_t py = y - sy, px = x - sx;
                    const double v = (py >= 0 && py < s && px >= 0 && px < s) ? p[static_cast<std::size_t>(py * s + px)] : 0.0;
                    img[static_cast<std::size_t>(y * s + x)] = gain * v + rng.normal(0.0, noise_);
                }
            d.push(img, static_cast<int>(c));
        }
        return d;
    }

private:
    std::size_t classes_, size_;
    double noise_;
    std::vector<double> protos_;
};

// ---------------------------------------------------------------------------
// IDX files (big-endian header, unsigned-byte payload)

namespace detail {

inline std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at)
{
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

struct IdxArray {
    std::vector<std::size_t> dims;
    std::span<const std::uint8_t> data;
};

inline IdxArray parse_idx(std::span<const std::uint8_t> b, const std::string& what)
{
    if (b.size() < 4 || b[0] != 0 || b[1] != 0) throw std::invalid_argument(what + ": not an IDX file");
    if (b[2] != 0x08) throw std::invalid_argument(what + ": only unsigned-byte IDX data is supported");
    const std::size_t nd = b[3];
    if (nd == 0 || b.size() < 4 + 4 * nd) throw std::invalid_argument(what + ": truncated IDX header");
    IdxArray a;
    std::size_t total = 1;
    for (std::size_t i = 0; i < nd; ++i) {
        a.dims.push_back(be32(b, 4 + 4 * i));
        total *= a.dims.back();
    }
    const std::size_t off = 4 + 4 * nd;
    if (b.size() - off != total) throw std::invalid_argument(what + ": payload size does not match header");
    a.data = b.subspan(off);
    return a;
}

} // namespace detail

/// Loads an image IDX file ([N, H, W] bytes) and a label IDX file ([N]).
/// Pixels are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path)
{
    const auto ib = serde::read_file(images_path);
    const auto lb = serde::read_file(labels_path);
    const auto im = detail::parse_idx(ib, images_path);
    const auto lab = detail::parse_idx(lb, labels_path);
    if (im.dims.size() != 3) throw std::invalid_argument(images_path + ": expected [N, H, W] images");
    if (lab.dims.size() != 1 || lab.dims[0] != im.dims[0])
        throw std::invalid_argument(labels_path + ": label count does not match image count");
    Dataset d{{1, im.dims[1], im.dims[2]}, {}, {}, 0};
    d.x.resize(im.data.size());
    for (std::size_t i = 0; i < im.data.size(); ++i) d.x[i] = im.data[i] / 255.0;
    int maxl = 0;
    for (auto v : lab.data) {
        d.y.push_back(v);
        maxl = std::max<int>(maxl, v);
    }
    d.classes = static_cast<std::size_t>(maxl) + 1;
    return d;
}

} // namespace dbq::nn
