// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// JSON experiment configuration and the runner behind `dbq train`.
// Relative paths are resolved against the directory holding the config.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbq/cost_model.hpp"
#include "dbq/nn/train.hpp"

namespace dbq::nn {

struct ModelConfig {
    std::string type = "mlp"; // "mlp" or "toy_cnn"
    std::size_t inputs = 2;   // mlp
    std::vector<std::size_t> hidden{16};
    std::size_t channels = 1; // toy_cnn
    std::size_t size = 8;
    std::size_t classes = 2;
};

struct DataConfig {
    std::string type = "blobs"; // blobs, spirals, patches, idx
    std::size_t train = 512;
    std::size_t eval = 256;
    std::size_t classes = 2;
    std::size_t dims = 2;
    double spread = 4.0;
    double sigma = 0.5;
    double noise = 0.3;
    std::size_t size = 8;
    std::string train_images, train_labels, eval_images, eval_labels;
};

struct PhaseConfig {
    TrainSchedule schedule;
    std::size_t batch_size = 32;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    ModelConfig model;
    DataConfig data;
    PhaseConfig fp;
    PhaseConfig finetune;
    QuantizeMap quantize;
    std::string fp_checkpoint = "fp.ckpt";
    std::string finetune_checkpoint = "finetune.ckpt";
    std::string fp_metrics = "fp_metrics.csv";
    std::string finetune_metrics = "finetune_metrics.csv";
};

/// Independent 64-bit stream seeds derived from the experiment seed (splitmix64).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kDataStream = 1, kPrototypeStream = 2, kInitStream = 3, kFpStream = 4, kFinetuneStream = 5 };

namespace detail {

template <class T>
void read_opt(const nlohmann::json& o, const char* key, T& out, const std::string& where, std::vector<std::string>& errs)
{
    if (!o.contains(key)) return;
    try {
        out = o.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        errs.push_back(where + "." + key + ": wrong type");
    }
}

inline PhaseConfig parse_phase(const nlohmann::json& o, const std::string& where, std::vector<std::string>& errs,
                               PhaseConfig p)
{
    if (!o.is_object()) {
        errs.push_back(where + ": expected an object");
        return p;
    }
    auto& s = p.schedule;
    read_opt(o, "eta0", s.eta0, where, errs);
    read_opt(o, "epochs", s.epochs, where, errs);
    read_opt(o, "warmup_epochs", s.warmup_epochs, where, errs);
    read_opt(o, "t_init", s.t_init, where, errs);
    read_opt(o, "t_inc", s.t_inc, where, errs);
    read_opt(o, "momentum", s.momentum, where, errs);
    read_opt(o, "weight_decay", s.weight_decay, where, errs);
    read_opt(o, "batch_size", p.batch_size, where, errs);
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        errs.push_back(where + ": " + e.what());
    }
    if (p.batch_size < 2) errs.push_back(where + ".batch_size: must be at least 2");
    return p;
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p)
{
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

} // namespace detail

inline ExperimentConfig parse_experiment(const std::string& text, const std::string& source = "<config>",
                                         const std::filesystem::path& base = {})
{
    const auto doc = cost::detail::parse_json(text, source);
    if (!doc.is_object()) throw cost::SpecError(source, {"top level must be an object"});
    std::vector<std::string> errs;
    ExperimentConfig c;
    detail::read_opt(doc, "seed", c.seed, "config", errs);

    if (doc.contains("model")) {
        const auto& m = doc["model"];
        detail::read_opt(m, "type", c.model.type, "model", errs);
        detail::read_opt(m, "inputs", c.model.inputs, "model", errs);
        detail::read_opt(m, "hidden", c.model.hidden, "model", errs);
        detail::read_opt(m, "channels", c.model.channels, "model", errs);
        detail::read_opt(m, "size", c.model.size, "model", errs);
        detail::read_opt(m, "classes", c.model.classes, "model", errs);
    }
    if (c.model.type != "mlp" && c.model.type != "toy_cnn") errs.push_back("model.type: expected mlp or toy_cnn");
    if (c.model.classes < 2) errs.push_back("model.classes: must be at least 2");

    if (doc.contains("data")) {
        const auto& d = doc["data"];
        detail::read_opt(d, "type", c.data.type, "data", errs);
        detail::read_opt(d, "train", c.data.train, "data", errs);
        detail::read_opt(d, "eval", c.data.eval, "data", errs);
        detail::read_opt(d, "classes", c.data.classes, "data", errs);
        detail::read_opt(d, "dims", c.data.dims, "data", errs);
        detail::read_opt(d, "spread", c.data.spread, "data", errs);
        detail::read_opt(d, "sigma", c.data.sigma, "data", errs);
        detail::read_opt(d, "noise", c.data.noise, "data", errs);
        detail::read_opt(d, "size", c.data.size, "data", errs);
        detail::read_opt(d, "train_images", c.data.train_images, "data", errs);
        detail::read_opt(d, "train_labels", c.data.train_labels, "data", errs);
        detail::read_opt(d, "eval_images", c.data.eval_images, "data", errs);
        detail::read_opt(d, "eval_labels", c.data.eval_labels, "data", errs);
    }
    const auto& dt = c.data.type;
    if (dt != "blobs" && dt != "spirals" && dt != "patches" && dt != "idx")
        errs.push_back("data.type: expected blobs, spirals, patches or idx");
    if (dt != "idx" && c.data.train < 2) errs.push_back("data.train: need at least 2 samples");
    if (dt == "idx" && (c.data.train_images.empty() || c.data.train_labels.empty()))
        errs.push_back("data: idx data needs train_images and train_labels");

    PhaseConfig fp_default;
    fp_default.schedule.epochs = 10;
    c.fp = detail::parse_phase(doc.value("fp", nlohmann::json::object()), "fp", errs, fp_default);
    PhaseConfig ft_default;
    ft_default.schedule.epochs = 5;
    ft_default.schedule.eta0 = 0.01;
    c.finetune = detail::parse_phase(doc.value("finetune", nlohmann::json::object()), "finetune", errs, ft_default);

    if (doc.contains("quantize")) {
        const auto& q = doc["quantize"];
        auto prec = [&](const char* key, Precision& out) {
            if (!q.contains(key)) return;
            if (!q[key].is_string()) {
                errs.push_back(std::string("quantize.") + key + ": expected a precision string");
                return;
            }
            auto p = cost::parse_precision(q[key].get<std::string>());
            if (!p) errs.push_back(std::string("quantize.") + key + ": unknown precision '" + q[key].get<std::string>() + "'");
            else out = *p;
        };
        prec("first", c.quantize.first);
        prec("other", c.quantize.other);
        prec("fully-connected", c.quantize.fully_connected);
        prec("activations", c.quantize.activations);
        detail::read_opt(q, "clip_sigmas", c.quantize.clip_sigmas, "quantize", errs);
        detail::read_opt(q, "project_alphas", c.quantize.project_alphas, "quantize", errs);
        if (c.quantize.activations.is_ternary()) errs.push_back("quantize.activations: cannot be ternary");
        if (!(c.quantize.clip_sigmas > 0.0)) errs.push_back("quantize.clip_sigmas: must be positive");
    }

    if (doc.contains("output")) {
        const auto& o = doc["output"];
        detail::read_opt(o, "fp_checkpoint", c.fp_checkpoint, "output", errs);
        detail::read_opt(o, "finetune_checkpoint", c.finetune_checkpoint, "output", errs);
        detail::read_opt(o, "fp_metrics", c.fp_metrics, "output", errs);
        detail::read_opt(o, "finetune_metrics", c.finetune_metrics, "output", errs);
    }
    if (!errs.empty()) throw cost::SpecError(source, errs);

    for (auto* p : {&c.fp_checkpoint, &c.finetune_checkpoint, &c.fp_metrics, &c.finetune_metrics, &c.data.train_images,
                    &c.data.train_labels, &c.data.eval_images, &c.data.eval_labels})
        *p = detail::resolve(base, *p);
    return c;
}

inline ExperimentConfig load_experiment(const std::string& path)
{
    return parse_experiment(cost::detail::read_file(path), path, std::filesystem::path(path).parent_path());
}

struct Datasets {
    Dataset train;
    Dataset eval;
};

inline Datasets make_datasets(const ExperimentConfig& c)
{
    const auto& d = c.data;
    Rng rng(derive_seed(c.seed, kDataStream));
    Datasets out;
    if (d.type == "blobs") {
        // Draw both splits from one call so they share cluster centres.
        Dataset all = make_blobs(d.train + d.eval, d.classes, d.dims, d.spread, d.sigma, rng);
        std::vector<std::size_t> a(d.train), b(d.eval);
        std::iota(a.begin(), a.end(), std::size_t{0});
        std::iota(b.begin(), b.end(), d.train);
        out.train = all.subset(a);
        out.eval = all.subset(b);
    } else if (d.type == "spirals") {
        out.train = make_spirals(d.train, d.classes, d.noise, rng);
        out.eval = make_spirals(d.eval, d.classes, d.noise, rng);
    } else if (d.type == "patches") {
        const PatchTask task(d.classes, d.size, derive_seed(c.seed, kPrototypeStream), d.noise);
        out.train = task.sample(d.train, rng);
        out.eval = task.sample(d.eval, rng);
    } else {
        out.train = load_idx(d.train_images, d.train_labels);
        if (!d.eval_images.empty()) out.eval = load_idx(d.eval_images, d.eval_labels);
    }
    return out;
}

inline Sequential build_model(const ExperimentConfig& c, const QuantizeMap& q)
{
    Rng rng(derive_seed(c.seed, kInitStream));
    Sequential m = c.model.type == "toy_cnn" ? make_toy_cnn(c.model.channels, c.model.size, c.model.classes, q, rng)
                                              : make_mlp(c.model.inputs, c.model.hidden, c.model.classes, q, rng);
    m.set_alpha_projection(q.project_alphas);
    return m;
}

inline void check_data_matches(const ExperimentConfig& c, const Dataset& d)
{
    const std::vector<std::size_t> want = c.model.type == "toy_cnn"
                                              ? std::vector<std::size_t>{c.model.channels, c.model.size, c.model.size}
                                              : std::vector<std::size_t>{c.model.inputs};
    if (d.sample_shape != want)
        throw std::invalid_argument("dataset sample shape " + shape_string(d.sample_shape) +
                                    " does not match the model input " + shape_string(want));
    if (d.classes > c.model.classes) throw std::invalid_argument("dataset has more classes than the model outputs");
}

inline TrainOptions options(const PhaseConfig& p, std::uint64_t seed)
{
    return {p.schedule, p.batch_size, seed};
}

} // namespace dbq::nn
