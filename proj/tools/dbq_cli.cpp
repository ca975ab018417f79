// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// dbq: cost evaluation, quantizer fitting, self-checks and desk-scale training.
// Exit codes: 0 success, 1 failed check, 2 usage or input error.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dbq/cost_model.hpp"
#include "dbq/nn/config.hpp"
#include "dbq/quantizer.hpp"
#include "dbq/quantizer_init.hpp"
#include "dbq/selfcheck.hpp"
#include "dbq/serde.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInputError = 2;

/// Raised for problems that map to exit code 2.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string sci(double v)
{
    std::ostringstream os;
    os << std::scientific << std::setprecision(4) << v;
    return os.str();
}

// ---------------------------------------------------------------------------

struct CostArgs {
    std::string arch, assign, csv, convention = "output";
};

int cmd_cost(const CostArgs& a)
{
    using namespace dbq::cost;
    const ArchSpec arch = load_arch(a.arch);
    const PrecisionAssignment pa = load_assignment(a.assign);
    const ActConvention conv = a.convention == "both" ? ActConvention::both : ActConvention::output;
    const CostReport r = evaluate(arch, pa, conv);

    std::cout << "architecture: " << (arch.name.empty() ? a.arch : arch.name) << " (" << arch.layers.size()
              << " layers, " << arch.total_weights() << " weights)\n";
    std::cout << "assignment:   " << (pa.name.empty() ? a.assign : pa.name) << "\n";
    std::cout << "C_C " << sci(static_cast<double>(r.cc)) << " full adders\n";
    std::cout << "C_S " << sci(static_cast<double>(r.cs)) << " full adders\n";
    std::cout << "C_R " << sci(static_cast<double>(r.cr)) << " bits\n";
    std::cout << "C_M " << sci(static_cast<double>(r.cm)) << " bits\n\n";

    std::cout << std::left << std::setw(14) << "layer" << std::setw(16) << "kind" << std::setw(10) << "weights"
              << std::setw(10) << "acts" << std::right << std::setw(13) << "Cc" << std::setw(13) << "Cs"
              << std::setw(13) << "Cr" << std::setw(13) << "Cm" << "\n";
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        const auto& c = r.layers[i];
        const LayerPrecision lp = pa.resolve(l);
        std::cout << std::left << std::setw(14) << l.name << std::setw(16) << to_string(l.kind) << std::setw(10)
                  << to_string(lp.weights) << std::setw(10) << to_string(lp.activations) << std::right
                  << std::setw(13) << sci(static_cast<double>(c.cc)) << std::setw(13) << sci(static_cast<double>(c.cs))
                  << std::setw(13) << sci(static_cast<double>(c.cr)) << std::setw(13) << sci(static_cast<double>(c.cm))
                  << "\n";
    }
    if (!a.csv.empty()) {
        std::ofstream out(a.csv);
        if (!out) throw InputError("cannot write '" + a.csv + "'");
        write_csv(out, r);
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct QuantizeArgs {
    std::string weights, out;
    int branches = 2;
    bool report = false;
};

int cmd_quantize(const QuantizeArgs& a)
{
    using namespace dbq;
    if (a.branches < 1 || a.branches > kMaxBranches)
        throw InputError("unsupported branch count " + std::to_string(a.branches) + " (supported: 1 to 4)");
    std::vector<std::uint8_t> bytes;
    try {
        bytes = serde::read_file(a.weights);
    } catch (const std::runtime_error& e) {
        throw InputError(e.what());
    }
    serde::WeightMatrix m;
    try {
        m = serde::decode_weights(bytes);
    } catch (const serde::FormatError& e) {
        throw InputError(a.weights + ": " + e.what());
    }
    if (m.rows == 0) throw InputError(a.weights + ": no kernels");
    if (m.cols < level_count(a.branches))
        throw InputError(a.weights + ": kernels have " + std::to_string(m.cols) + " weights, need at least " +
                         std::to_string(level_count(a.branches)) + " for " + std::to_string(a.branches) + " branches");
    for (double v : m.data)
        if (!std::isfinite(v)) throw InputError(a.weights + ": non-finite weight value");

    serde::Checkpoint ck;
    std::vector<double> mse(m.rows), ratios;
    std::vector<std::vector<double>> levels(m.rows);
    for (std::size_t k = 0; k < m.rows; ++k) {
        const auto w = m.row(k);
        const QuantizerParams p = init_quantizer(w, a.branches);
        const TernaryBranches t = decompose(w, p);
        const auto z = t.reconstruct();
        std::vector<double> err(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) err[i] = (z[i] - w[i]) * (z[i] - w[i]);
        mse[k] = pairwise_sum(err) / static_cast<double>(w.size());
        levels[k] = quant_levels(sign_matrix(a.branches), effective_scales(p));
        std::sort(levels[k].begin(), levels[k].end());
        for (int j = 0; j + 1 < a.branches; ++j) ratios.push_back(p.alphas[j] / p.alphas[j + 1]);
        ck.add_params("kernel" + std::to_string(k) + ".params", p);
        ck.add_branches("kernel" + std::to_string(k) + ".branches", t);
    }
    serde::write_file(a.out, ck.encode());

    const double max_mse = *std::max_element(mse.begin(), mse.end());
    std::cout << "kernels: " << m.rows << " x " << m.cols << " weights, " << a.branches << " branches\n";
    std::cout << "max MSE: " << sci(max_mse) << "\n";
    if (!ratios.empty()) {
        const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
        std::cout << "alpha ratio: min " << std::setprecision(6) << *lo << ", max " << *hi << "\n";
    }
    std::cout << "wrote " << a.out << "\n";

    if (a.report) {
        std::cout << "\nkernel,mse,levels\n";
        for (std::size_t k = 0; k < m.rows; ++k) {
            std::cout << k << ',' << sci(mse[k]) << ',';
            for (std::size_t i = 0; i < levels[k].size(); ++i) std::cout << (i ? " " : "") << sci(levels[k][i]);
            std::cout << '\n';
        }
        if (!ratios.empty()) {
            // Ratios of consecutive branch scales lie in [1, 2] after projection.
            constexpr int kBins = 10;
            std::vector<std::size_t> hist(kBins, 0);
            for (double r : ratios) {
                int b = static_cast<int>(std::floor((r - 1.0) * kBins));
                hist[static_cast<std::size_t>(std::clamp(b, 0, kBins - 1))]++;
            }
            std::cout << "\nratio_bin_low,ratio_bin_high,count\n";
            for (int b = 0; b < kBins; ++b)
                std::cout << std::fixed << std::setprecision(1) << 1.0 + b / double(kBins) << ','
                          << 1.0 + (b + 1) / double(kBins) << ',' << hist[static_cast<std::size_t>(b)] << '\n';
            std::cout << std::defaultfloat;
        }
    }
    return kOk;
}

// ---------------------------------------------------------------------------

int cmd_check(std::uint64_t seed, bool inject_fault)
{
    const auto r = dbq::run_self_check(seed, inject_fault);
    auto verdict = [](bool ok) { return ok ? "PASS" : "FAIL"; };
    std::cout << "gradient check:      max rel err " << sci(r.grad_max_error) << " (tol " << sci(dbq::kGradTolerance)
              << ") " << verdict(r.grad_ok) << "\n";
    std::cout << "decomposition check: " << r.decomposition_mismatches << " mismatches " << verdict(r.decomposition_ok)
              << "\n";
    std::cout << "roundtrip check:     " << r.roundtrip_failures << " failures " << verdict(r.roundtrip_ok) << "\n";
    return r.ok() ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------

void write_text(const std::string& path, const std::string& text)
{
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) std::filesystem::create_directories(dir);
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
}

void write_checkpoint(const std::string& path, const dbq::serde::Checkpoint& ck)
{
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) std::filesystem::create_directories(dir);
    dbq::serde::write_file(path, ck.encode());
}

int cmd_train(const std::string& config_path, const std::string& mode)
{
    using namespace dbq::nn;
    const ExperimentConfig cfg = load_experiment(config_path);
    Datasets data;
    try {
        data = make_datasets(cfg);
        check_data_matches(cfg, data.train);
        if (!data.eval.empty()) check_data_matches(cfg, data.eval);
    } catch (const std::exception& e) {
        throw InputError(config_path + ": " + e.what());
    }
    const Dataset* eval = data.eval.empty() ? nullptr : &data.eval;
    std::ostringstream csv;

    if (mode == "fp") {
        Sequential model = build_model(cfg, QuantizeMap{});
        const auto log = train_fp(model, options(cfg.fp, derive_seed(cfg.seed, kFpStream)), data.train, eval);
        write_metrics_csv(csv, log);
        write_text(cfg.fp_metrics, csv.str());
        write_checkpoint(cfg.fp_checkpoint, model.save());
        const double train_acc = evaluate(model, data.train);
        std::cout << "fp training: " << log.size() << " epochs, train accuracy " << std::setprecision(4)
                  << 100.0 * train_acc << "%";
        if (eval) std::cout << ", eval accuracy " << 100.0 * evaluate(model, *eval) << "%";
        std::cout << "\nmetrics: " << cfg.fp_metrics << "\ncheckpoint: " << cfg.fp_checkpoint << "\n";
        return kOk;
    }

    if (!std::filesystem::exists(cfg.fp_checkpoint))
        throw InputError("fp checkpoint '" + cfg.fp_checkpoint + "' not found; run --mode fp first");
    dbq::serde::Checkpoint fp_ck;
    try {
        fp_ck = dbq::serde::Checkpoint::decode(dbq::serde::read_file(cfg.fp_checkpoint));
    } catch (const std::exception& e) {
        throw InputError(cfg.fp_checkpoint + ": " + e.what());
    }
    Sequential model = build_model(cfg, cfg.quantize);
    model.load(fp_ck);
    const auto r = finetune_quantized(model, options(cfg.finetune, derive_seed(cfg.seed, kFinetuneStream)), data.train, eval);
    write_metrics_csv(csv, r.log);
    write_text(cfg.finetune_metrics, csv.str());
    write_checkpoint(cfg.finetune_checkpoint, model.save());
    std::cout << std::setprecision(4) << "finetune: " << r.log.size() << " epochs, final T " << r.final_temperature
              << "\naccuracy after init " << 100.0 * r.init_acc << "%, train-mode " << 100.0 * r.train_mode_acc
              << "%, inference " << 100.0 * r.infer_acc << "%\nmetrics: " << cfg.finetune_metrics
              << "\ncheckpoint: " << cfg.finetune_checkpoint << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Ternary-branch weight quantization toolkit"};
    app.require_subcommand(1);

    CostArgs cost;
    auto* c = app.add_subcommand("cost", "Evaluate hardware cost metrics for an architecture");
    c->add_option("--arch", cost.arch, "Architecture spec (JSON)")->required();
    c->add_option("--assign", cost.assign, "Precision assignment (JSON)")->required();
    c->add_option("--csv", cost.csv, "Write the per-layer breakdown as CSV");
    c->add_option("--act-convention", cost.convention, "Activations counted in C_R")
        ->check(CLI::IsMember({"output", "both"}));

    QuantizeArgs quant;
    auto* q = app.add_subcommand("quantize", "Fit ternary-branch quantizers to a weight file");
    q->add_option("--weights", quant.weights, "Weight file: u64 rows, u64 cols, f64 row-major data")->required();
    q->add_option("--branches", quant.branches, "Number of ternary branches")->required();
    q->add_option("--out", quant.out, "Output checkpoint container")->required();
    q->add_flag("--report", quant.report, "Print per-kernel fit details");

    std::uint64_t seed = 1;
    bool fault = false;
    auto* k = app.add_subcommand("check", "Run gradient, decomposition and serialization self-checks");
    k->add_option("--seed", seed, "Seed for the random test cases");
    k->add_flag("--inject-fault", fault)->group("");

    std::string config, mode;
    auto* t = app.add_subcommand("train", "Run FP training or quantized fine-tuning");
    t->add_option("--config", config, "Experiment config (JSON)")->required();
    t->add_option("--mode", mode, "fp or finetune")->required()->check(CLI::IsMember({"fp", "finetune"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInputError;
    }

    try {
        if (*c) return cmd_cost(cost);
        if (*q) return cmd_quantize(quant);
        if (*k) return cmd_check(seed, fault);
        if (*t) return cmd_train(config, mode);
    } catch (const std::exception& e) {
        // Spec, config and file problems all surface here.
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    }
    return kInputError;
}
