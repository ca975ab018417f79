// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dbq/nn/layers.hpp"

namespace dbq::nn {

class Sequential {
public:
    template <class L, class... Args>
    L& add(Args&&... args)
    {
        auto p = std::make_unique<L>(std::forward<Args>(args)...);
        if (!names_.insert(p->name()).second) throw std::invalid_argument("duplicate layer name '" + p->name() + "'");
        L& ref = *p;
        layers_.push_back(std::move(p));
        return ref;
    }

    std::size_t size() const noexcept { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    Tensor forward(const Tensor& x, const Context& ctx)
    {
        Tensor h = x;
        for (auto& l : layers_) h = l->forward(h, ctx);
        return h;
    }

    Tensor backward(const Tensor& dy)
    {
        Tensor g = dy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }

    std::vector<ParamSlot> slots()
    {
        std::vector<ParamSlot> s;
        for (auto& l : layers_) l->slots(s);
        return s;
    }

    void zero_grad()
    {
        for (auto& l : layers_) l->zero_grad();
    }
    void post_step()
    {
        for (auto& l : layers_) l->post_step();
    }
    void on_epoch_begin()
    {
        for (auto& l : layers_) l->on_epoch_begin();
    }

    /// Fits every ternary quantizer from the current master weights.
    void init_quantizers()
    {
        for (auto& l : layers_)
            if (auto* q = l->quantizer()) q->initialize(l->master_weights());
    }

    /// Switches the post-step alpha projection on or off in every quantizer.
    void set_alpha_projection(bool on)
    {
        for (auto& l : layers_)
            if (auto* q = l->quantizer()) q->set_projection(on);
    }

    bool has_ternary() const
    {
        for (const auto& l : layers_)
            if (auto* q = l->quantizer(); q && q->ternary()) return true;
        return false;
    }

    serde::Checkpoint save() const
    {
        serde::Checkpoint c;
        for (const auto& l : layers_) l->save(c);
        return c;
    }

    void load(const serde::Checkpoint& c)
    {
        for (auto& l : layers_) l->load(c);
    }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    std::set<std::string> names_;
};

/// Per-layer-kind precision choices.
struct QuantizeMap {
    Precision first = Precision::fp32();
    Precision other = Precision::fp32();
    Precision fully_connected = Precision::fp32();
    Precision activations = Precision::fp32();
    double clip_sigmas = kDefaultClipSigmas;
    bool project_alphas = true;
};

namespace detail {

inline void add_activation(Sequential& m, const std::string& name, const BatchNorm& bn, const QuantizeMap& q)
{
    if (q.activations.is_fp32()) m.add<ReLU>(name);
    else if (q.activations.kind == Precision::Kind::fixed) m.add<ReLUx>(name, q.activations.bits, &bn, q.clip_sigmas);
    else throw std::invalid_argument("activations cannot be ternary");
}

} // namespace detail

/// Dense -> BN -> ReLU(-x) blocks followed by a dense classifier.
inline Sequential make_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes,
                           const QuantizeMap& q, Rng& rng)
{
    Sequential m;
    std::size_t in = inputs;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        const std::string id = std::to_string(i + 1);
        auto& fc = m.add<Dense>("fc" + id, in, hidden[i], i == 0 ? q.first : q.other, false);
        fc.init(rng);
        auto& bn = m.add<BatchNorm>("bn" + id, hidden[i]);
        detail::add_activation(m, "act" + id, bn, q);
        in = hidden[i];
    }
    auto& out = m.add<Dense>("classifier", in, classes, hidden.empty() ? q.first : q.fully_connected, true);
    out.init(rng);
    return m;
}

/// conv(1 -> 16, 3x3, pad 1) -> BN -> ReLU(-x) -> conv(16 -> 32, 3x3, stride 2, pad 1) -> BN
/// -> ReLU(-x) -> flatten -> dense(32 * (s/2)^2 -> classes).
inline Sequential make_toy_cnn(std::size_t channels, std::size_t size, std::size_t classes, const QuantizeMap& q,
                               Rng& rng)
{
    Sequential m;
    auto& c1 = m.add<Conv2d>("conv1", channels, 16, 3, 1, 1, q.first);
    c1.init(rng);
    auto& bn1 = m.add<BatchNorm>("bn1", 16);
    detail::add_activation(m, "act1", bn1, q);
    auto& c2 = m.add<Conv2d>("conv2", 16, 32, 3, 2, 1, q.other);
    c2.init(rng);
    auto& bn2 = m.add<BatchNorm>("bn2", 32);
    detail::add_activation(m, "act2", bn2, q);
    m.add<Flatten>("flatten");
    const std::size_t s2 = c2.out_size(c1.out_size(size));
    auto& fc = m.add<Dense>("classifier", 32 * s2 * s2, classes, q.fully_connected, true);
    fc.init(rng);
    return m;
}

} // namespace dbq::nn
