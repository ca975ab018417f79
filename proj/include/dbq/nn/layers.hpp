// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbq/act_quant.hpp"
#include "dbq/nn/parallel.hpp"
#include "dbq/nn/tensor.hpp"
#include "dbq/nn/weight_quant.hpp"
#include "dbq/schedule.hpp"
#include "dbq/serde.hpp"
#include "dbq/util.hpp"

namespace dbq::nn {

class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;
    Layer(const Layer&) = delete;
    Layer& operator=(const Layer&) = delete;

    const std::string& name() const noexcept { return name_; }

    virtual Tensor forward(const Tensor& x, const Context& ctx) = 0;
    /// Accumulates parameter gradients and returns dL/dx. Requires a
    /// preceding forward().
    virtual Tensor backward(const Tensor& dy) = 0;

    virtual void slots(std::vector<ParamSlot>&) {}
    virtual void zero_grad() {}
    virtual void post_step() {}
    virtual void on_epoch_begin() {}
    virtual WeightQuantizer* quantizer() { return nullptr; }
    virtual std::span<const double> master_weights() const { return {}; }
    virtual void save(serde::Checkpoint&) const {}
    virtual void load(const serde::Checkpoint&) {}

protected:
    [[noreturn]] void fail_shape(const std::string& what) const
    {
        throw std::invalid_argument("layer '" + name_ + "': " + what);
    }
    void require_cache(bool has) const
    {
        if (!has) throw std::logic_error("layer '" + name_ + "': backward called without a cached forward pass");
    }
    std::vector<double> load_array(const serde::Checkpoint& c, const std::string& key, std::size_t n) const
    {
        auto v = c.array(name_ + "." + key);
        if (v.size() != n)
            throw std::invalid_argument("layer '" + name_ + "': checkpoint entry '" + key + "' has " +
                                        std::to_string(v.size()) + " values, expected " + std::to_string(n));
        return v;
    }

private:
    std::string name_;
};

inline void he_init(std::vector<double>& w, std::size_t fan_in, Rng& rng)
{
    const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w) v = rng.normal(0.0, sigma);
}

// ---------------------------------------------------------------------------

/// y = W x + b, W stored as [out][in]; one quantizer kernel per output row.
class Dense : public Layer {
public:
    Dense(std::string name, std::size_t in, std::size_t out, Precision p = Precision::fp32(), bool bias = true)
        : Layer(std::move(name)), in_(in), out_(out), has_bias_(bias), w_(in * out, 0.0), b_(bias ? out : 0, 0.0),
          dw_(w_.size(), 0.0), db_(b_.size(), 0.0), q_(p, out, in)
    {
    }

    std::size_t inputs() const noexcept { return in_; }
    std::size_t outputs() const noexcept { return out_; }
    std::vector<double>& weights() noexcept { return w_; }
    std::vector<double>& bias() noexcept { return b_; }
    const std::vector<double>& weight_grad() const noexcept { return dw_; }

    void init(Rng& rng) { he_init(w_, in_, rng); }

    Tensor forward(const Tensor& x, const Context& ctx) override
    {
        if (x.rank() != 2 || x.dim(1) != in_)
            fail_shape("expected input [N," + std::to_string(in_) + "], got " + shape_string(x.shape));
        weff_.resize(w_.size());
        q_.apply(w_, ctx, weff_);
        const std::size_t n = x.batch();
        Tensor y({n, out_});
        parallel_for(n, [&](std::size_t s) {
            const double* xs = x.data.data() + s * in_;
            double* ys = y.data.data() + s * out_;
            for (std::size_t o = 0; o < out_; ++o) {
                const double* wr = weff_.data() + o * in_;
                double acc = has_bias_ ? b_[o] : 0.0;
                for (std::size_t i = 0; i < in_; ++i) acc += wr[i] * xs[i];
                ys[o] = acc;
            }
        });
        x_ = x;
        ctx_ = ctx;
        return y;
    }

    Tensor backward(const Tensor& dy) override
    {
        require_cache(x_.has_value());
        const Tensor& x = *x_;
        const std::size_t n = x.batch();
        if (dy.rank() != 2 || dy.dim(0) != n || dy.dim(1) != out_) fail_shape("upstream gradient shape mismatch");
        std::vector<double> dweff(w_.size(), 0.0);
        parallel_for(out_, [&](std::size_t o) {
            double* g = dweff.data() + o * in_;
            double gb = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const double u = dy.data[s * out_ + o];
                const double* xs = x.data.data() + s * in_;
                for (std::size_t i = 0; i < in_; ++i) g[i] += u * xs[i];
                gb += u;
            }
            if (has_bias_) db_[o] += gb;
        });
        Tensor dx({n, in_});
        parallel_for(n, [&](std::size_t s) {
            double* d = dx.data.data() + s * in_;
            for (std::size_t o = 0; o < out_; ++o) {
                const double u = dy.data[s * out_ + o];
                const double* wr = weff_.data() + o * in_;
                for (std::size_t i = 0; i < in_; ++i) d[i] += u * wr[i];
            }
        });
        std::vector<double> dmaster(w_.size());
        q_.backward(w_, *ctx_, dweff, dmaster);
        for (std::size_t i = 0; i < w_.size(); ++i) dw_[i] += dmaster[i];
        return dx;
    }

    void slots(std::vector<ParamSlot>& out) override
    {
        out.push_back({w_, dw_, true});
        if (has_bias_) out.push_back({b_, db_, true});
        q_.slots(out);
    }
    void zero_grad() override
    {
        std::fill(dw_.begin(), dw_.end(), 0.0);
        std::fill(db_.begin(), db_.end(), 0.0);
        q_.zero_grad();
    }
    void post_step() override { q_.project(); }
    WeightQuantizer* quantizer() override { return &q_; }
    std::span<const double> master_weights() const override { return w_; }

    void save(serde::Checkpoint& c) const override
    {
        c.add_array(name() + ".weight", w_);
        if (has_bias_) c.add_array(name() + ".bias", b_);
        q_.save(c, name(), w_);
    }
    void load(const serde::Checkpoint& c) override
    {
        w_ = load_array(c, "weight", w_.size());
        if (has_bias_) b_ = load_array(c, "bias", b_.size());
        q_.load(c, name());
    }

private:
    std::size_t in_, out_;
    bool has_bias_;
    std::vector<double> w_, b_, dw_, db_, weff_;
    WeightQuantizer q_;
    std::optional<Tensor> x_;
    std::optional<Context> ctx_;
};

// ---------------------------------------------------------------------------

/// 2-D convolution, weights [out][in][k][k], zero padding. One quantizer
/// kernel per output channel.
class Conv2d : public Layer {
public:
    Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride = 1,
           std::size_t pad = 0, Precision p = Precision::fp32(), bool bias = false)
        : Layer(std::move(name)), ci_(in_ch), co_(out_ch), k_(k), stride_(stride), pad_(pad), has_bias_(bias),
          w_(out_ch * in_ch * k * k, 0.0), b_(bias ? out_ch : 0, 0.0), dw_(w_.size(), 0.0), db_(b_.size(), 0.0),
          q_(p, out_ch, in_ch * k * k)
    {
        if (k == 0 || stride == 0) throw std::invalid_argument("conv kernel size and stride must be positive");
    }

    std::vector<double>& weights() noexcept { return w_; }
    void init(Rng& rng) { he_init(w_, ci_ * k_ * k_, rng); }

    std::size_t out_size(std::size_t in) const
    {
        if (in + 2 * pad_ < k_) fail_shape("input smaller than the kernel");
        return (in + 2 * pad_ - k_) / stride_ + 1;
    }

    Tensor forward(const Tensor& x, const Context& ctx) override
    {
        if (x.rank() != 4 || x.dim(1) != ci_)
            fail_shape("expected input [N," + std::to_string(ci_) + ",H,W], got " + shape_string(x.shape));
        const std::size_t n = x.batch(), h = x.dim(2), wd = x.dim(3);
        const std::size_t oh = out_size(h), ow = out_size(wd);
        weff_.resize(w_.size());
        q_.apply(w_, ctx, weff_);
        Tensor y({n, co_, oh, ow});
        parallel_for(n, [&](std::size_t s) {
            const double* xs = x.data.data() + s * ci_ * h * wd;
            double* ys = y.data.data() + s * co_ * oh * ow;
            for (std::size_t o = 0; o < co_; ++o)
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        double acc = has_bias_ ? b_[o] : 0.0;
                        for (std::size_t c = 0; c < ci_; ++c)
                            for (std::size_t ky = 0; ky < k_; ++ky) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                                                          static_cast<std::ptrdiff_t>(pad_);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < k_; ++kx) {
                                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                                                              static_cast<std::ptrdiff_t>(pad_);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                                    acc += weff_[((o * ci_ + c) * k_ + ky) * k_ + kx] *
                                           xs[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
                                }
                            }
                        ys[(o * oh + oy) * ow + ox] = acc;
                    }
        });
        x_ = x;
        ctx_ = ctx;
        return y;
    }

    Tensor backward(const Tensor& dy) override
    {
        require_cache(x_.has_value());
        const Tensor& x = *x_;
        const std::size_t n = x.batch(), h = x.dim(2), wd = x.dim(3);
        const std::size_t oh = out_size(h), ow = out_size(wd);
        if (dy.shape != std::vector<std::size_t>{n, co_, oh, ow}) fail_shape("upstream gradient shape mismatch");

        auto in_index = [&](std::size_t o_pos, std::size_t kk) -> std::ptrdiff_t {
            return static_cast<std::ptrdiff_t>(o_pos * stride_ + kk) - static_cast<std::ptrdiff_t>(pad_);
        };

        std::vector<double> dweff(w_.size(), 0.0);
        parallel_for(co_, [&](std::size_t o) {
            double gb = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const double* xs = x.data.data() + s * ci_ * h * wd;
                const double* gs = dy.data.data() + (s * co_ + o) * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double u = gs[oy * ow + ox];
                        gb += u;
                        if (u == 0.0) continue;
                        for (std::size_t c = 0; c < ci_; ++c)
                            for (std::size_t ky = 0; ky < k_; ++ky) {
                                const auto iy = in_index(oy, ky);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < k_; ++kx) {
                                    const auto ix = in_index(ox, kx);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                                    dweff[((o * ci_ + c) * k_ + ky) * k_ + kx] +=
                                        u * xs[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
                                }
                            }
                    }
            }
            if (has_bias_) db_[o] += gb;
        });

        Tensor dx({n, ci_, h, wd});
        parallel_for(n, [&](std::size_t s) {
            double* ds = dx.data.data() + s * ci_ * h * wd;
            for (std::size_t o = 0; o < co_; ++o) {
                const double* gs = dy.data.data() + (s * co_ + o) * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const double u = gs[oy * ow + ox];
                        if (u == 0.0) continue;
                        for (std::size_t c = 0; c < ci_; ++c)
                            for (std::size_t ky = 0; ky < k_; ++ky) {
                                const auto iy = in_index(oy, ky);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < k_; ++kx) {
                                    const auto ix = in_index(ox, kx);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                                    ds[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] +=
                                        u * weff_[((o * ci_ + c) * k_ + ky) * k_ + kx];
                                }
                            }
                    }
            }
        });

        std::vector<double> dmaster(w_.size());
        q_.backward(w_, *ctx_, dweff, dmaster);
        for (std::size_t i = 0; i < w_.size(); ++i) dw_[i] += dmaster[i];
        return dx;
    }

    void slots(std::vector<ParamSlot>& out) override
    {
        out.push_back({w_, dw_, true});
        if (has_bias_) out.push_back({b_, db_, true});
        q_.slots(out);
    }
    void zero_grad() override
    {
        std::fill(dw_.begin(), dw_.end(), 0.0);
        std::fill(db_.begin(), db_.end(), 0.0);
        q_.zero_grad();
    }
    void post_step() override { q_.project(); }
    WeightQuantizer* quantizer() override { return &q_; }
    std::span<const double> master_weights() const override { return w_; }

    void save(serde::Checkpoint& c) const override
    {
        c.add_array(name() + ".weight", w_);
        if (has_bias_) c.add_array(name() + ".bias", b_);
        q_.save(c, name(), w_);
    }
    void load(const serde::Checkpoint& c) override
    {
        w_ = load_array(c, "weight", w_.size());
        if (has_bias_) b_ = load_array(c, "bias", b_.size());
        q_.load(c, name());
    }

private:
    std::size_t ci_, co_, k_, stride_, pad_;
    bool has_bias_;
    std::vector<double> w_, b_, dw_, db_, weff_;
    WeightQuantizer q_;
    std::optional<Tensor> x_;
    std::optional<Context> ctx_;
};

// ---------------------------------------------------------------------------

/// Per-channel batch norm over [N, C, ...]. Running statistics use momentum
/// 0.1 and the unbiased batch variance.
class BatchNorm : public Layer {
public:
    static constexpr double kMomentum = 0.1;
    static constexpr double kEps = 1e-5;

    BatchNorm(std::string name, std::size_t channels)
        : Layer(std::move(name)), c_(channels), gamma_(channels, 1.0), beta_(channels, 0.0), mean_(channels, 0.0),
          var_(channels, 1.0), dgamma_(channels, 0.0), dbeta_(channels, 0.0)
    {
    }

    std::size_t channels() const noexcept { return c_; }
    std::vector<double>& gamma() noexcept { return gamma_; }
    std::vector<double>& beta() noexcept { return beta_; }
    std::vector<double>& running_mean() noexcept { return mean_; }
    std::vector<double>& running_var() noexcept { return var_; }
    const std::vector<double>& gamma() const noexcept { return gamma_; }
    const std::vector<double>& beta() const noexcept { return beta_; }

    BnChannelParams affine() const { return {beta_, gamma_}; }

    Tensor forward(const Tensor& x, const Context& ctx) override
    {
        if (x.rank() < 2 || x.dim(1) != c_)
            fail_shape("expected " + std::to_string(c_) + " channels, got shape " + shape_string(x.shape));
        const std::size_t n = x.batch(), sp = x.sample_size() / c_, m = n * sp;
        Tensor y(x.shape);
        xhat_.assign(x.size(), 0.0);
        inv_std_.assign(c_, 0.0);
        for (std::size_t c = 0; c < c_; ++c) {
            double mu, var;
            if (ctx.training) {
                if (m < 2) fail_shape("batch statistics need at least two values per channel");
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < sp; ++j) s += x.data[(i * c_ + c) * sp + j];
                mu = s / static_cast<double>(m);
                double q = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < sp; ++j) {
                        const double d = x.data[(i * c_ + c) * sp + j] - mu;
                        q += d * d;
                    }
                var = q / static_cast<double>(m);
                mean_[c] = (1.0 - kMomentum) * mean_[c] + kMomentum * mu;
                var_[c] = (1.0 - kMomentum) * var_[c] + kMomentum * q / static_cast<double>(m - 1);
            } else {
                mu = mean_[c];
                var = var_[c];
            }
            const double is = 1.0 / std::sqrt(var + kEps);
            inv_std_[c] = is;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < sp; ++j) {
                    const std::size_t idx = (i * c_ + c) * sp + j;
                    const double xh = (x.data[idx] - mu) * is;
                    xhat_[idx] = xh;
                    y.data[idx] = gamma_[c] * xh + beta_[c];
                }
        }
        shape_ = x.shape;
        batch_stats_ = ctx.training;
        cached_ = true;
        return y;
    }

    Tensor backward(const Tensor& dy) override
    {
        require_cache(cached_);
        if (dy.shape != shape_) fail_shape("upstream gradient shape mismatch");
        const std::size_t n = shape_[0], sp = dy.sample_size() / c_, m = n * sp;
        Tensor dx(shape_);
        for (std::size_t c = 0; c < c_; ++c) {
            double sdy = 0.0, sdyx = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < sp; ++j) {
                    const std::size_t idx = (i * c_ + c) * sp + j;
                    sdy += dy.data[idx];
                    sdyx += dy.data[idx] * xhat_[idx];
                }
            dgamma_[c] += sdyx;
            dbeta_[c] += sdy;
            const double k = gamma_[c] * inv_std_[c];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < sp; ++j) {
                    const std::size_t idx = (i * c_ + c) * sp + j;
                    dx.data[idx] = batch_stats_ ? k * (dy.data[idx] - (sdy + xhat_[idx] * sdyx) / static_cast<double>(m))
                                                : k * dy.data[idx];
                }
        }
        return dx;
    }

    void slots(std::vector<ParamSlot>& out) override
    {
        out.push_back({gamma_, dgamma_, true});
        out.push_back({beta_, dbeta_, true});
    }
    void zero_grad() override
    {
        std::fill(dgamma_.begin(), dgamma_.end(), 0.0);
        std::fill(dbeta_.begin(), dbeta_.end(), 0.0);
    }
    void save(serde::Checkpoint& c) const override
    {
        c.add_array(name() + ".gamma", gamma_);
        c.add_array(name() + ".beta", beta_);
        c.add_array(name() + ".running_mean", mean_);
        c.add_array(name() + ".running_var", var_);
    }
    void load(const serde::Checkpoint& c) override
    {
        gamma_ = load_array(c, "gamma", c_);
        beta_ = load_array(c, "beta", c_);
        mean_ = load_array(c, "running_mean", c_);
        var_ = load_array(c, "running_var", c_);
    }

private:
    std::size_t c_;
    std::vector<double> gamma_, beta_, mean_, var_, dgamma_, dbeta_;
    std::vector<double> xhat_, inv_std_;
    std::vector<std::size_t> shape_;
    bool batch_stats_ = false;
    bool cached_ = false;
};

// ---------------------------------------------------------------------------

class ReLU : public Layer {
public:
    using Layer::Layer;

    Tensor forward(const Tensor& x, const Context&) override
    {
        Tensor y = x;
        for (auto& v : y.data) v = std::max(v, 0.0);
        x_ = x;
        return y;
    }
    Tensor backward(const Tensor& dy) override
    {
        require_cache(x_.has_value());
        if (dy.shape != x_->shape) fail_shape("upstream gradient shape mismatch");
        Tensor dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!(x_->data[i] > 0.0)) dx.data[i] = 0.0;
        return dx;
    }

private:
    std::optional<Tensor> x_;
};

/// Clipped, quantized ReLU. The clip value is derived from the affine
/// parameters of a source batch norm and refreshed at every epoch start.
class ReLUx : public Layer {
public:
    /// Smallest clip value used when the BN-derived bound is not positive.
    static constexpr double kMinClip = 1e-6;

    ReLUx(std::string name, int bits, const BatchNorm* source, double sigmas = kDefaultClipSigmas)
        : Layer(std::move(name)), bits_(bits), sigmas_(sigmas), source_(source)
    {
        check_act_args(1.0, bits);
        refresh();
    }

    int bits() const noexcept { return bits_; }
    double clip() const noexcept { return clip_; }
    void set_clip(double c)
    {
        check_act_args(c, bits_);
        clip_ = c;
    }
    void refresh()
    {
        if (source_) clip_ = std::max(clip_value(source_->affine(), sigmas_), kMinClip);
    }
    void on_epoch_begin() override { refresh(); }

    Tensor forward(const Tensor& x, const Context&) override
    {
        Tensor y(x.shape);
        relu_x_quant(x.data, clip_, bits_, y.data);
        x_ = x;
        return y;
    }
    Tensor backward(const Tensor& dy) override
    {
        require_cache(x_.has_value());
        if (dy.shape != x_->shape) fail_shape("upstream gradient shape mismatch");
        return Tensor(dy.shape, relu_x_grad(x_->data, clip_, dy.data));
    }

    void save(serde::Checkpoint& c) const override
    {
        const double v[1] = {clip_};
        c.add_array(name() + ".clip", v);
    }
    void load(const serde::Checkpoint& c) override
    {
        auto v = c.find(name() + ".clip") ? load_array(c, "clip", 1) : std::vector<double>{};
        if (v.empty()) refresh();
        else set_clip(v[0]);
    }

private:
    int bits_;
    double sigmas_;
    const BatchNorm* source_;
    double clip_ = 1.0;
    std::optional<Tensor> x_;
};

class Flatten : public Layer {
public:
    using Layer::Layer;

    Tensor forward(const Tensor& x, const Context&) override
    {
        if (x.rank() < 2) fail_shape("flatten needs a batch dimension");
        in_shape_ = x.shape;
        return Tensor({x.batch(), x.sample_size()}, x.data);
    }
    Tensor backward(const Tensor& dy) override
    {
        require_cache(!in_shape_.empty());
        if (dy.size() != Tensor::count(in_shape_)) fail_shape("upstream gradient shape mismatch");
        return Tensor(in_shape_, dy.data);
    }

private:
    std::vector<std::size_t> in_shape_;
};

/// Non-overlapping k x k average pooling on [N, C, H, W].
class AvgPool2d : public Layer {
public:
    AvgPool2d(std::string name, std::size_t k) : Layer(std::move(name)), k_(k)
    {
        if (k == 0) throw std::invalid_argument("pool size must be positive");
    }

    Tensor forward(const Tensor& x, const Context&) override
    {
        if (x.rank() != 4 || x.dim(2) % k_ != 0 || x.dim(3) % k_ != 0)
            fail_shape("expected [N,C,H,W] with H and W divisible by " + std::to_string(k_) + ", got " +
                       shape_string(x.shape));
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / k_, ow = w / k_;
        Tensor y({n, c, oh, ow});
        const double inv = 1.0 / static_cast<double>(k_ * k_);
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double s = 0.0;
                    for (std::size_t ky = 0; ky < k_; ++ky)
                        for (std::size_t kx = 0; kx < k_; ++kx) s += x.data[(p * h + oy * k_ + ky) * w + ox * k_ + kx];
                    y.data[(p * oh + oy) * ow + ox] = s * inv;
                }
        in_shape_ = x.shape;
        return y;
    }
    Tensor backward(const Tensor& dy) override
    {
        require_cache(!in_shape_.empty());
        const std::size_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
        const std::size_t oh = h / k_, ow = w / k_;
        if (dy.shape != std::vector<std::size_t>{n, c, oh, ow}) fail_shape("upstream gradient shape mismatch");
        Tensor dx(in_shape_);
        const double inv = 1.0 / static_cast<double>(k_ * k_);
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) dx.data[(p * h + y) * w + x] = dy.data[(p * oh + y / k_) * ow + x / k_] * inv;
        return dx;
    }

private:
    std::size_t k_;
    std::vector<std::size_t> in_shape_;
};

// ---------------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;   // mean over the batch
    Tensor grad;         // dL/dlogits
    std::size_t correct = 0;
};

/// Mean softmax cross-entropy over logits [N, K].
inline LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels)
{
    if (logits.rank() != 2) throw std::invalid_argument("logits must be [N, K]");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) throw std::invalid_argument("label count does not match batch size");
    LossResult r;
    r.grad = Tensor({n, k});
    std::vector<double> losses(n);
    for (std::size_t s = 0; s < n; ++s) {
        const auto z = logits.sample(s);
        const int y = labels[s];
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw std::invalid_argument("label out of range");
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        const double lse = m + std::log(sum);
        losses[s] = lse - z[static_cast<std::size_t>(y)];
        auto g = r.grad.sample(s);
        for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(z[j] - lse) / static_cast<double>(n);
        g[static_cast<std::size_t>(y)] -= 1.0 / static_cast<double>(n);
        if (static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == static_cast<std::size_t>(y))
            ++r.correct;
    }
    r.loss = pairwise_sum(losses) / static_cast<double>(n);
    return r;
}

} // namespace dbq::nn
