// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "dbq/nn/data.hpp"
#include "dbq/nn/model.hpp"
#include "dbq/schedule.hpp"

namespace dbq::nn {

struct TrainOptions {
    TrainSchedule schedule;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double temperature = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double eval_acc = std::numeric_limits<double>::quiet_NaN();

    bool operator==(const EpochMetrics&) const = default;
};

inline Context eval_context() { return {false, QuantMode::infer, 1.0}; }

/// Top-1 accuracy. BN always runs on running statistics here; `ctx` picks
/// the quantizer path.
inline double evaluate(Sequential& model, const Dataset& data, Context ctx = eval_context(), std::size_t batch = 256)
{
    if (data.empty()) throw std::invalid_argument("cannot evaluate on an empty dataset");
    ctx.training = false;
    std::size_t correct = 0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < data.size(); start += batch) {
        rows.resize(std::min(batch, data.size() - start));
        std::iota(rows.begin(), rows.end(), start);
        auto [x, y] = data.batch(rows);
        const Tensor logits = model.forward(x, ctx);
        const std::size_t k = logits.dim(1);
        for (std::size_t s = 0; s < rows.size(); ++s) {
            const auto z = logits.sample(s);
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (z[j] > z[arg]) arg = j;
            if (static_cast<int>(arg) == y[s]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// SGD training loop shared by FP training and quantized fine-tuning.
/// Batches of a single sample are dropped because BN needs batch statistics.
inline std::vector<EpochMetrics> run_epochs(Sequential& model, const TrainOptions& opt, const Dataset& train,
                                            const Dataset* eval)
{
    opt.schedule.validate();
    if (train.empty()) throw std::invalid_argument("training dataset is empty");
    if (opt.batch_size < 2) throw std::invalid_argument("batch size must be at least 2");

    Rng rng(opt.seed);
    SgdMomentum sgd(opt.schedule.momentum, opt.schedule.weight_decay);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EpochMetrics> log;

    for (int e = 0; e < opt.schedule.epochs; ++e) {
        model.on_epoch_begin();
        EpochMetrics m;
        m.epoch = e;
        m.lr = lr_at(e, opt.schedule);
        m.temperature = temperature_at(e, opt.schedule);
        const Context ctx{true, QuantMode::train, m.temperature};
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t seen = 0, correct = 0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t n = std::min(opt.batch_size, order.size() - start);
            if (n < 2) break;
            auto [x, y] = train.batch(std::span<const std::size_t>(order).subspan(start, n));
            model.zero_grad();
            const Tensor logits = model.forward(x, ctx);
            auto loss = softmax_cross_entropy(logits, y);
            model.backward(loss.grad);
            const auto slots = model.slots();
            sgd.step(slots, m.lr);
            model.post_step();
            loss_sum += loss.loss * static_cast<double>(n);
            correct += loss.correct;
            seen += n;
        }
        m.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        m.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        if (eval && !eval->empty()) m.eval_acc = evaluate(model, *eval, {false, QuantMode::infer, m.temperature});
        log.push_back(m);
    }
    return log;
}

inline std::vector<EpochMetrics> train_fp(Sequential& model, const TrainOptions& opt, const Dataset& train,
                                          const Dataset* eval = nullptr)
{
    return run_epochs(model, opt, train, eval);
}

struct FinetuneResult {
    std::vector<EpochMetrics> log;
    double init_acc = 0.0;        // inference-mode accuracy right after quantizer initialization
    double final_temperature = 0.0;
    double train_mode_acc = 0.0;  // smooth quantizer at the final temperature
    double infer_acc = 0.0;       // exact ternary quantizer
};

/// Initializes every quantizer from the (trained) master weights, fine-tunes
/// with the temperature schedule, then reports accuracy on `eval` (or on the
/// training set when no evaluation set is given).
inline FinetuneResult finetune_quantized(Sequential& model, const TrainOptions& opt, const Dataset& train,
                                         const Dataset* eval = nullptr)
{
    opt.schedule.validate();
    const Dataset& report = (eval && !eval->empty()) ? *eval : train;
    FinetuneResult r;
    model.init_quantizers();
    model.on_epoch_begin();
    r.init_acc = evaluate(model, report);
    r.log = run_epochs(model, opt, train, eval);
    r.final_temperature = opt.schedule.epochs > 0 ? temperature_at(opt.schedule.epochs - 1, opt.schedule)
                                                  : opt.schedule.t_init;
    r.train_mode_acc = evaluate(model, report, {false, QuantMode::train, r.final_temperature});
    r.infer_acc = evaluate(model, report);
    return r;
}

/// CSV log with header epoch,lr,T,train_loss,train_acc,eval_acc.
inline void write_metrics_csv(std::ostream& os, const std::vector<EpochMetrics>& log)
{
    const auto old = os.precision(17);
    os << "epoch,lr,T,train_loss,train_acc,eval_acc\n";
    for (const auto& m : log) {
        os << m.epoch << ',' << m.lr << ',' << m.temperature << ',' << m.train_loss << ',' << m.train_acc << ',';
        if (!std::isnan(m.eval_acc)) os << m.eval_acc;
        os << '\n';
    }
    os.precision(old);
}

} // namespace dbq::nn
