// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Fixed-point activation quantization clipped at a value derived from the
// batch-norm affine parameters (ReLU-x).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbq {

inline constexpr double kDefaultClipSigmas = 6.0;

struct BnChannelParams {
    std::vector<double> betas;  // per-channel shift
    std::vector<double> gammas; // per-channel scale

    std::size_t channels() const noexcept { return betas.size(); }
};

/// c = max_i (beta_i + k gamma_i); one value shared by every channel.
inline double clip_value(const BnChannelParams& bn, double k = kDefaultClipSigmas)
{
    if (bn.betas.size() != bn.gammas.size()) throw std::invalid_argument("BN shift and scale lengths differ");
    if (bn.betas.empty()) throw std::invalid_argument("BN parameters have no channels");
    if (!(k > 0.0)) throw std::invalid_argument("clip sigma multiplier must be positive");
    double c = bn.betas[0] + k * bn.gammas[0];
    for (std::size_t i = 1; i < bn.channels(); ++i) c = std::max(c, bn.betas[i] + k * bn.gammas[i]);
    return c;
}

inline void check_act_args(double clip, int bits)
{
    if (!(clip > 0.0)) throw std::invalid_argument("activation clip value must be positive");
    if (bits < 2 || bits > 16) throw std::invalid_argument("activation bit width must be in [2, 16], got " + std::to_string(bits));
}

/// Grid step c / (2^b - 1).
inline double act_step(double clip, int bits) { return clip / static_cast<double>((1 << bits) - 1); }

/// y = step * clamp(round(x / step), 0, 2^b - 1); std::round rounds half away from zero.
inline double relu_x_quant(double x, double clip, int bits)
{
    const double step = act_step(clip, bits);
    const double top = static_cast<double>((1 << bits) - 1);
    const double code = std::clamp(std::round(x / step), 0.0, top);
    return code == top ? clip : code * step;
}

inline void relu_x_quant(std::span<const double> x, double clip, int bits, std::span<double> out)
{
    check_act_args(clip, bits);
    if (out.size() != x.size()) throw std::invalid_argument("output size does not match input size");
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = relu_x_quant(x[i], clip, bits);
}

inline std::vector<double> relu_x_quant(std::span<const double> x, double clip, int bits)
{
    std::vector<double> y(x.size());
    relu_x_quant(x, clip, bits, y);
    return y;
}

/// Clipped straight-through gradient: upstream inside (0, c), zero elsewhere.
inline std::vector<double> relu_x_grad(std::span<const double> x, double clip, std::span<const double> upstream)
{
    if (upstream.size() != x.size()) throw std::invalid_argument("upstream size does not match input size");
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = (x[i] > 0.0 && x[i] < clip) ? upstream[i] : 0.0;
    return g;
}

} // namespace dbq
