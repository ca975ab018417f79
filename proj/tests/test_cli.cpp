// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

#include "dbq/nn/config.hpp"
#include "dbq/serde.hpp"
#include "dbq/util.hpp"

namespace fs = std::filesystem;
using namespace dbq;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args)
{
    const std::string cmd = std::string("\"") + DBQ_CLI + "\" " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string source(const std::string& rel) { return std::string(DBQ_SOURCE_DIR) + "/" + rel; }

double number_after(const std::string& text, const std::string& label)
{
    std::smatch m;
    const std::regex re(label + R"(\s*([-+0-9.eE]+))");
    if (!std::regex_search(text, m, re)) throw std::runtime_error("'" + label + "' not found in:\n" + text);
    return std::stod(m[1].str());
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("dbq_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void write_weights(const std::string& name, const serde::WeightMatrix& m) const
    {
        serde::write_file(path(name), serde::encode_weights(m));
    }

    std::string write_config(const std::string& fp, const std::string& finetune) const
    {
        const std::string text = R"({
  "seed": 3,
  "model": {"type": "mlp", "inputs": 2, "hidden": [16], "classes": 2},
  "data": {"type": "blobs", "train": 512, "eval": 256, "classes": 2, "dims": 2, "spread": 4.0, "sigma": 0.5},
  "fp": )" + fp + R"(,
  "finetune": )" + finetune + R"(,
  "quantize": {"first": "fp32", "other": "2T", "fully-connected": "2T", "activations": "8b"},
  "output": {"fp_checkpoint": "fp.ckpt", "finetune_checkpoint": "ft.ckpt",
             "fp_metrics": "fp.csv", "finetune_metrics": "ft.csv"}
})";
        std::ofstream(path("config.json")) << text;
        return path("config.json");
    }

    fs::path dir_;
};

constexpr const char* kFpPhase =
    R"({"eta0": 0.1, "epochs": 10, "warmup_epochs": 1, "momentum": 0.9, "weight_decay": 0.0005, "batch_size": 32})";

} // namespace

TEST_F(CliTest, UsageErrors)
{
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("cost --arch x.json").code, 2);
}

TEST_F(CliTest, MissingFileNamesPath)
{
    const std::string missing = path("nope.json");
    const auto r = run("cost --arch " + missing + " --assign " + source("data/assign/resnet20_fp.json"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find(missing), std::string::npos) << r.out;
}

TEST_F(CliTest, CostReportAndCsv)
{
    const auto r = run("cost --arch " + source("data/arch/resnet20.json") + " --assign " +
                       source("data/assign/resnet20_fp.json") + " --csv " + path("cost.csv"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NEAR(number_after(r.out, "C_C"), 2.3734e10, 0.0001e10);
    EXPECT_NEAR(number_after(r.out, "C_M"), 8.6308e6, 0.0001e6);
    std::ifstream csv(path("cost.csv"));
    std::string header, line;
    ASSERT_TRUE(std::getline(csv, header));
    EXPECT_NE(header.find("layer"), std::string::npos) << header;
    std::size_t rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    EXPECT_GE(rows, 20u);
}

TEST_F(CliTest, CheckIsDeterministic)
{
    const auto a = run("check --seed 3");
    const auto b = run("check --seed 3");
    EXPECT_EQ(a.code, 0) << a.out;
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(run("check --seed 3 --inject-fault").code, 1);
}

TEST_F(CliTest, QuantizeRecoversExactLevels)
{
    // Levels of a two-branch quantizer with scales 1.0 and 0.6.
    const std::vector<double> levels{-1.6, -1.0, -0.6, -0.4, 0.0, 0.4, 0.6, 1.0, 1.6};
    serde::WeightMatrix m{3, 45, {}};
    for (std::size_t k = 0; k < m.rows; ++k)
        for (std::size_t i = 0; i < m.cols; ++i) m.data.push_back(levels[i % levels.size()] * (1.0 + 0.5 * k));
    write_weights("w.bin", m);
    const auto r = run("quantize --weights " + path("w.bin") + " --branches 2 --out " + path("q.ckpt"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_LE(number_after(r.out, "max MSE:"), 1e-18);
    const auto ck = serde::Checkpoint::decode(serde::read_file(path("q.ckpt")));
    EXPECT_EQ(ck.entries().size(), 6u);
    const auto t = ck.branches("kernel0.branches");
    const auto z = t.reconstruct();
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], m.data[i], 1e-9);
}

TEST_F(CliTest, QuantizeGaussianRatiosInRange)
{
    Rng rng(1);
    serde::WeightMatrix m{8, 200, {}};
    for (std::size_t i = 0; i < m.rows * m.cols; ++i) m.data.push_back(rng.normal(0.0, 0.05));
    write_weights("w.bin", m);
    const auto r = run("quantize --weights " + path("w.bin") + " --branches 2 --out " + path("q.ckpt") + " --report");
    ASSERT_EQ(r.code, 0) << r.out;
    const double lo = number_after(r.out, "alpha ratio: min"), hi = number_after(r.out, ", max");
    EXPECT_GT(lo, 1.0);
    EXPECT_LE(hi, 2.0);
    EXPECT_NE(r.out.find("ratio_bin_low"), std::string::npos);
}

TEST_F(CliTest, QuantizeInputErrors)
{
    write_weights("w.bin", {2, 20, std::vector<double>(40, 0.1)});
    EXPECT_EQ(run("quantize --weights " + path("w.bin") + " --branches 5 --out " + path("q")).code, 2);
    EXPECT_EQ(run("quantize --weights " + path("missing.bin") + " --branches 2 --out " + path("q")).code, 2);
    write_weights("small.bin", {1, 4, std::vector<double>(4, 0.1)});
    EXPECT_EQ(run("quantize --weights " + path("small.bin") + " --branches 2 --out " + path("q")).code, 2);
    std::ofstream(path("junk.bin")) << "abc";
    const auto r = run("quantize --weights " + path("junk.bin") + " --branches 2 --out " + path("q"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("junk.bin"), std::string::npos) << r.out;
}

TEST_F(CliTest, TrainFpOnBlobs)
{
    const auto cfg = write_config(kFpPhase, R"({"epochs": 2, "t_init": 5, "t_inc": 5})");
    const auto r = run("train --config " + cfg + " --mode fp");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_GE(number_after(r.out, "eval accuracy"), 99.0);
    EXPECT_TRUE(fs::exists(path("fp.ckpt")));
    std::ifstream csv(path("fp.csv"));
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "epoch,lr,T,train_loss,train_acc,eval_acc");
}

TEST_F(CliTest, TrainRejectsBadSchedule)
{
    const auto cfg = write_config(R"({"epochs": 3, "warmup_epochs": 3})", R"({"epochs": 1})");
    EXPECT_EQ(run("train --config " + cfg + " --mode fp").code, 2);
    const auto ok = write_config(kFpPhase, R"({"epochs": 1})");
    const auto r = run("train --config " + ok + " --mode finetune");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("fp checkpoint"), std::string::npos) << r.out;
    EXPECT_EQ(run("train --config " + ok + " --mode other").code, 2);
}

TEST_F(CliTest, ZeroEpochFinetuneSavesInitializedModel)
{
    const auto cfg_path = write_config(kFpPhase, R"({"epochs": 0, "t_init": 5})");
    ASSERT_EQ(run("train --config " + cfg_path + " --mode fp").code, 0);
    const auto r = run("train --config " + cfg_path + " --mode finetune");
    ASSERT_EQ(r.code, 0) << r.out;

    const auto cfg = nn::load_experiment(cfg_path);
    nn::Sequential m = nn::build_model(cfg, cfg.quantize);
    m.load(serde::Checkpoint::decode(serde::read_file(cfg.fp_checkpoint)));
    m.init_quantizers();
    m.on_epoch_begin();
    EXPECT_EQ(serde::read_file(cfg.finetune_checkpoint), m.save().encode());
    EXPECT_NEAR(number_after(r.out, "accuracy after init"), number_after(r.out, "inference"), 1e-9);
}
