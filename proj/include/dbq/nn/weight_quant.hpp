// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Kernel-wise weight quantization for a layer. The layer keeps full-precision
// master weights; the quantizer maps them to the weights actually used by the
// linear map and routes gradients back to the master copy.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbq/cost_model.hpp"
#include "dbq/quantizer.hpp"
#include "dbq/quantizer_grad.hpp"
#include "dbq/quantizer_init.hpp"
#include "dbq/schedule.hpp"
#include "dbq/serde.hpp"

namespace dbq::nn {

using cost::Precision;

enum class QuantMode { train, infer };

/// How a forward pass runs. `training` selects batch statistics in BN (and
/// updates running statistics); `quant` and `temperature` select the
/// quantizer path.
struct Context {
    bool training = false;
    QuantMode quant = QuantMode::infer;
    double temperature = 1.0;
};

class WeightQuantizer {
public:
    WeightQuantizer() = default;
    WeightQuantizer(Precision p, std::size_t kernels, std::size_t kernel_size)
        : prec_(p), kernels_(kernels), kernel_size_(kernel_size)
    {
        if (p.kind == Precision::Kind::fixed && (p.bits < 2 || p.bits > 16))
            throw std::invalid_argument("fixed weight precision must be 2..16 bits");
        if (p.is_ternary() && (p.bits < 1 || p.bits > kMaxBranches))
            throw std::invalid_argument("ternary branch count must be 1..4");
    }

    const Precision& precision() const noexcept { return prec_; }
    bool ternary() const noexcept { return prec_.is_ternary(); }
    bool initialized() const noexcept { return !params_.empty(); }
    std::size_t kernels() const noexcept { return kernels_; }
    std::vector<QuantizerParams>& params() noexcept { return params_; }
    const std::vector<QuantizerParams>& params() const noexcept { return params_; }

    /// Fits one quantizer per kernel from the master weights.
    void initialize(std::span<const double> master)
    {
        if (!ternary()) return;
        check(master);
        params_.clear();
        grads_.clear();
        for (std::size_t k = 0; k < kernels_; ++k) params_.push_back(init_quantizer(kernel(master, k), prec_.bits));
        zero_grad();
    }

    void apply(std::span<const double> master, const Context& ctx, std::span<double> out) const
    {
        check(master);
        switch (prec_.kind) {
        case Precision::Kind::fp32: std::copy(master.begin(), master.end(), out.begin()); return;
        case Precision::Kind::fixed:
            for (std::size_t k = 0; k < kernels_; ++k) fixed_kernel(kernel(master, k), kernel(out, k));
            return;
        case Precision::Kind::ternary:
            require_init();
            for (std::size_t k = 0; k < kernels_; ++k) {
                if (ctx.quant == QuantMode::train)
                    forward_train(kernel(master, k), params_[k], ctx.temperature, kernel(out, k));
                else
                    forward_infer(kernel(master, k), params_[k], kernel(out, k));
            }
            return;
        }
    }

    /// Accumulates quantizer gradients and returns dL/d(master) into d_master.
    /// fp32 and fixed precision pass gradients straight through.
    void backward(std::span<const double> master, const Context& ctx, std::span<const double> d_eff,
                  std::span<double> d_master)
    {
        if (!ternary()) {
            std::copy(d_eff.begin(), d_eff.end(), d_master.begin());
            return;
        }
        require_init();
        if (ctx.quant != QuantMode::train)
            throw std::logic_error("ternary quantizer in inference mode has no gradient");
        for (std::size_t k = 0; k < kernels_; ++k) {
            auto g = dbq::backward(kernel(master, k), params_[k], ctx.temperature, kernel(d_eff, k));
            auto& acc = grads_[k];
            for (std::size_t j = 0; j < g.d_alphas.size(); ++j) acc.d_alphas[j] += g.d_alphas[j];
            for (std::size_t i = 0; i < g.d_thresholds.size(); ++i) acc.d_thresholds[i] += g.d_thresholds[i];
            acc.d_gamma1 += g.d_gamma1;
            acc.d_gamma2 += g.d_gamma2;
            auto dm = kernel(d_master, k);
            std::copy(g.d_weights.begin(), g.d_weights.end(), dm.begin());
        }
    }

    void zero_grad()
    {
        grads_.resize(params_.size());
        for (std::size_t k = 0; k < params_.size(); ++k) {
            grads_[k].d_alphas.assign(params_[k].alphas.size(), 0.0);
            grads_[k].d_thresholds.assign(params_[k].thresholds.size(), 0.0);
            grads_[k].d_gamma1 = 0.0;
            grads_[k].d_gamma2 = 0.0;
        }
    }

    /// Quantizer parameters are never weight-decayed.
    void slots(std::vector<ParamSlot>& out)
    {
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            auto& g = grads_[k];
            out.push_back({p.alphas, g.d_alphas, false});
            out.push_back({std::span<double>(&p.gamma1, 1), std::span<const double>(&g.d_gamma1, 1), false});
            out.push_back({std::span<double>(&p.gamma2, 1), std::span<const double>(&g.d_gamma2, 1), false});
            out.push_back({p.thresholds, g.d_thresholds, false});
        }
    }

    const std::vector<QuantizerGrads>& grads() const noexcept { return grads_; }

    /// Re-imposes the alpha ordering constraint after an optimizer step.
    /// A no-op when projection is switched off.
    void project()
    {
        if (!projection_) return;
        for (auto& p : params_) project_alphas(p, kScaleFloor);
    }

    void set_projection(bool on) noexcept { projection_ = on; }
    bool projection() const noexcept { return projection_; }

    std::vector<TernaryBranches> export_branches(std::span<const double> master) const
    {
        require_init();
        check(master);
        std::vector<TernaryBranches> out;
        for (std::size_t k = 0; k < kernels_; ++k) out.push_back(decompose(kernel(master, k), params_[k]));
        return out;
    }

    void save(serde::Checkpoint& c, const std::string& prefix, std::span<const double> master) const
    {
        if (!ternary() || !initialized()) return;
        const auto branches = export_branches(master);
        for (std::size_t k = 0; k < kernels_; ++k) {
            c.add_params(prefix + ".q" + std::to_string(k), params_[k]);
            c.add_branches(prefix + ".branches" + std::to_string(k), branches[k]);
        }
    }

    /// Loads quantizer parameters when present; leaves the quantizer
    /// uninitialized for an FP checkpoint.
    void load(const serde::Checkpoint& c, const std::string& prefix)
    {
        if (!ternary()) return;
        if (!c.find(prefix + ".q0")) {
            params_.clear();
            grads_.clear();
            return;
        }
        std::vector<QuantizerParams> ps;
        for (std::size_t k = 0; k < kernels_; ++k) {
            auto p = c.params(prefix + ".q" + std::to_string(k));
            if (p.branches() != prec_.bits)
                throw std::invalid_argument(prefix + ": checkpoint quantizer has " + std::to_string(p.branches()) +
                                            " branches, layer expects " + std::to_string(prec_.bits));
            ps.push_back(std::move(p));
        }
        params_ = std::move(ps);
        zero_grad();
    }

private:
    template <class T>
    std::span<T> kernel(std::span<T> all, std::size_t k) const
    {
        return all.subspan(k * kernel_size_, kernel_size_);
    }

    void check(std::span<const double> master) const
    {
        if (master.size() != kernels_ * kernel_size_)
            throw std::invalid_argument("weight count does not match quantizer layout");
    }

    void require_init() const
    {
        if (!initialized()) throw std::logic_error("ternary quantizer used before initialization");
    }

    /// Symmetric per-kernel grid with 2^(b-1) - 1 positive levels.
    void fixed_kernel(std::span<const double> w, std::span<double> out) const
    {
        double m = 0.0;
        for (double v : w) m = std::max(m, std::abs(v));
        const double top = static_cast<double>((1 << (prec_.bits - 1)) - 1);
        if (m == 0.0) {
            std::fill(out.begin(), out.end(), 0.0);
            return;
        }
        const double step = m / top;
        for (std::size_t i = 0; i < w.size(); ++i) out[i] = std::clamp(std::round(w[i] / step), -top, top) * step;
    }

    Precision prec_ = Precision::fp32();
    std::size_t kernels_ = 0;
    std::size_t kernel_size_ = 0;
    std::vector<QuantizerParams> params_;
    std::vector<QuantizerGrads> grads_;
    bool projection_ = true;
};

} // namespace dbq::nn
