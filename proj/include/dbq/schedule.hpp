// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbq {

/// Hyperparameters of one training run (FP or quantized fine-tuning).
struct TrainSchedule {
    double eta0 = 0.1;        // initial learning rate
    int epochs = 1;           // E_T
    int warmup_epochs = 0;    // E_W
    double t_init = 5.0;      // initial temperature
    double t_inc = 0.0;       // per-epoch temperature increment
    double momentum = 0.9;    // beta
    double weight_decay = 0.; // lambda

    /// Throws std::invalid_argument listing every violated constraint.
    /// E_W < E_T is required whenever warmup is used; E_T = E_W = 0 is the
    /// valid "no training" schedule.
    void validate() const
    {
        std::string err;
        if (epochs < 0) err += " epochs must be >= 0;";
        if (warmup_epochs < 0) err += " warmup epochs must be >= 0;";
        if (warmup_epochs > 0 && warmup_epochs >= epochs) err += " warmup epochs must be < total epochs;";
        if (!(t_init > 0.0)) err += " initial temperature must be > 0;";
        if (!(t_inc >= 0.0)) err += " temperature increment must be >= 0;";
        if (!(eta0 >= 0.0)) err += " learning rate must be >= 0;";
        if (!(momentum >= 0.0 && momentum < 1.0)) err += " momentum must be in [0, 1);";
        if (!(weight_decay >= 0.0)) err += " weight decay must be >= 0;";
        if (!err.empty()) throw std::invalid_argument("invalid schedule:" + err);
    }
};

/// eta_e = (eta0 / 2) (1 + cos(e pi / E_T)).
inline double cosine_lr(double epoch, double eta0, double total_epochs)
{
    if (total_epochs <= 0.0) return eta0;
    return 0.5 * eta0 * (1.0 + std::cos(epoch * std::numbers::pi / total_epochs));
}

/// eta_e = (e + 1) eta0 / E_W.
inline double warmup_lr(double epoch, double eta0, double warmup_epochs)
{
    return (epoch + 1.0) * eta0 / warmup_epochs;
}

/// Warmup for the first E_W epochs, then cosine over the remaining
/// E_T - E_W epochs with the epoch index restarted at 0.
inline double lr_at(int epoch, const TrainSchedule& s)
{
    if (epoch < s.warmup_epochs) return warmup_lr(epoch, s.eta0, s.warmup_epochs);
    return cosine_lr(epoch - s.warmup_epochs, s.eta0, s.epochs - s.warmup_epochs);
}

/// T_e = T_init + e T_inc; updated once per epoch.
inline double temperature_at(int epoch, double t_init, double t_inc) { return t_init + epoch * t_inc; }

inline double temperature_at(int epoch, const TrainSchedule& s) { return temperature_at(epoch, s.t_init, s.t_inc); }

/// SGD with momentum and additive weight decay:
///   v <- beta v + (g + lambda p);  p <- p - eta v.
inline void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double eta,
                     double beta, double lambda)
{
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw std::invalid_argument("sgd_step: parameter, gradient and velocity sizes differ (" +
                                    std::to_string(params.size()) + ", " + std::to_string(grads.size()) + ", " +
                                    std::to_string(velocity.size()) + ")");
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = beta * velocity[i] + (grads[i] + lambda * params[i]);
        params[i] -= eta * velocity[i];
    }
}

/// A contiguous block of trainable values with its gradient buffer.
struct ParamSlot {
    std::span<double> value;
    std::span<const double> grad;
    bool decay = true; // false for quantizer parameters
};

/// Momentum SGD over a fixed list of parameter slots. Velocity buffers are
/// allocated on the first step; the slot list must keep the same layout.
class SgdMomentum {
public:
    SgdMomentum(double momentum, double weight_decay) : beta_(momentum), lambda_(weight_decay) {}

    void step(std::span<const ParamSlot> slots, double eta)
    {
        if (velocity_.empty()) {
            velocity_.reserve(slots.size());
            for (const auto& s : slots) velocity_.emplace_back(s.value.size(), 0.0);
        }
        if (velocity_.size() != slots.size()) throw std::invalid_argument("parameter slot layout changed between steps");
        for (std::size_t i = 0; i < slots.size(); ++i)
            sgd_step(slots[i].value, slots[i].grad, velocity_[i], eta, beta_, slots[i].decay ? lambda_ : 0.0);
    }

    void reset() { velocity_.clear(); }

private:
    double beta_;
    double lambda_;
    std::vector<std::vector<double>> velocity_;
};

} // namespace dbq
