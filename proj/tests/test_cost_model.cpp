// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>
#include <string>

#include "dbq/cost_model.hpp"
#include "dbq/util.hpp"
#include "oracles.hpp"

using namespace dbq;
using namespace dbq::cost;

namespace {

std::string data_path(const std::string& rel) { return std::string(DBQ_SOURCE_DIR) + "/data/" + rel; }

LayerSpec dense_layer(std::int64_t n, std::int64_t d, std::int64_t acts = 0)
{
    LayerSpec l;
    l.name = "l";
    l.kind = LayerKind::other;
    l.dot_products = n;
    l.dot_length = d;
    l.weights = n * d;
    l.activations = acts;
    return l;
}

PrecisionAssignment uniform(Precision w, Precision a, double density = 1.0)
{
    PrecisionAssignment p;
    for (auto k : {LayerKind::first, LayerKind::depthwise, LayerKind::pointwise, LayerKind::fully_connected,
                   LayerKind::other})
        p.by_kind[k] = LayerPrecision{w, a, density};
    return p;
}

double rel(double got, double want) { return std::abs(got - want) / want; }

} // namespace

TEST(EffectivePrecisions, Conventions)
{
    auto e = effective_precisions({Precision::fp32(), Precision::fp32()});
    EXPECT_EQ(e.weight_compute, 23);
    EXPECT_EQ(e.weight_storage, 32);
    e = effective_precisions({Precision::ternary(2), Precision::fixed(8)});
    EXPECT_EQ(e.weight_compute, 2);
    EXPECT_EQ(e.weight_storage, 4);
    e = effective_precisions({Precision::fixed(8), Precision::fixed(8)});
    EXPECT_EQ(e.weight_compute, 8);
    EXPECT_EQ(e.weight_storage, 8);
    EXPECT_EQ(e.act_compute, 8);
}

TEST(EffectivePrecisions, Fp32OperandPromotesMac)
{
    const auto e = effective_precisions({Precision::fp32(), Precision::fixed(8)});
    EXPECT_EQ(e.weight_compute, 23);
    EXPECT_EQ(e.act_compute, 23);
    EXPECT_EQ(e.act_storage, 8);
}

TEST(CompCost, SingleFullAdder)
{
    ArchSpec a{"one", {dense_layer(1, 1)}};
    EXPECT_EQ(comp_cost(a, uniform(Precision::fixed(1), Precision::fixed(1))), 1);
}

TEST(CompCost, FixedMatchesTextbookCount)
{
    Rng rng(1);
    for (int rep = 0; rep < 200; ++rep) {
        const auto n = static_cast<std::int64_t>(1 + rng.index(50));
        const auto d = static_cast<std::int64_t>(1 + rng.index(3000));
        const int bw = 2 + static_cast<int>(rng.index(15)), ba = 2 + static_cast<int>(rng.index(15));
        ArchSpec a{"x", {dense_layer(n, d)}};
        EXPECT_EQ(comp_cost(a, uniform(Precision::fixed(bw), Precision::fixed(ba))), n * oracle::fixed_dot_adders(d, bw, ba));
    }
}

TEST(CompCost, ZeroLengthThrows)
{
    ArchSpec a{"bad", {dense_layer(3, 0)}};
    EXPECT_THROW(comp_cost(a, uniform(Precision::fixed(8), Precision::fixed(8))), std::invalid_argument);
}

TEST(CompCost, DoublingDotProductsDoubles)
{
    const auto p = uniform(Precision::ternary(2), Precision::fixed(8));
    ArchSpec a{"x", {dense_layer(7, 300)}}, b{"x", {dense_layer(14, 300)}};
    EXPECT_EQ(2 * comp_cost(a, p), comp_cost(b, p));
}

TEST(CompCost, MonotoneInPrecisionAndLength)
{
    ArchSpec a{"x", {dense_layer(4, 100)}}, longer{"x", {dense_layer(4, 101)}};
    std::int64_t prev = 0;
    for (int b = 2; b <= 16; ++b) {
        const auto c = comp_cost(a, uniform(Precision::fixed(b), Precision::fixed(8)));
        EXPECT_GE(c, prev);
        prev = c;
        EXPECT_LE(c, comp_cost(longer, uniform(Precision::fixed(b), Precision::fixed(8))));
    }
    EXPECT_LE(comp_cost(a, uniform(Precision::ternary(1), Precision::fixed(8))),
              comp_cost(a, uniform(Precision::ternary(2), Precision::fixed(8))));
}

TEST(SparseCost, DensityOneEqualsDense)
{
    const auto arch = load_arch(data_path("arch/resnet20.json"));
    const auto p = load_assignment(data_path("assign/resnet20_dbq2t.json"));
    const auto r = evaluate(arch, p);
    EXPECT_EQ(r.cs, r.cc);
}

TEST(SparseCost, HalfDensityHalvesMultiplierTerm)
{
    const std::int64_t n = 3, d = 64, bw = 8, ba = 8;
    ArchSpec a{"x", {dense_layer(n, d)}};
    const auto cs = sparse_comp_cost(a, uniform(Precision::fixed(8), Precision::fixed(8), 0.5));
    const std::int64_t lg = 6;
    EXPECT_EQ(cs, n * ((d / 2) * bw * ba + (d / 2 - 1) * (ba + bw + lg - 1)));
    EXPECT_LT(cs, comp_cost(a, uniform(Precision::fixed(8), Precision::fixed(8))));
}

TEST(SparseCost, TernaryRatioFollowsActiveLength)
{
    Rng rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        const auto d = static_cast<std::int64_t>(16 + rng.index(2000));
        const double dens = rng.uniform(0.05, 1.0);
        ArchSpec a{"x", {dense_layer(5, d)}};
        const auto p = uniform(Precision::ternary(2), Precision::fixed(8), dens);
        const auto r = evaluate(a, p);
        const double active = std::round(dens * static_cast<double>(d));
        EXPECT_NEAR(static_cast<double>(r.cs) / static_cast<double>(r.cc), (active - 1) / static_cast<double>(d - 1), 1e-12);
    }
}

TEST(ReprCost, ZeroActivationsEqualsStorage)
{
    ArchSpec a{"x", {dense_layer(10, 20, 0)}};
    const auto p = uniform(Precision::fixed(4), Precision::fixed(8));
    EXPECT_EQ(repr_cost(a, p), storage_cost(a, p));
}

TEST(ReprCost, DifferenceDependsOnlyOnActivations)
{
    ArchSpec a{"x", {dense_layer(10, 20, 500)}};
    for (auto w : {Precision::fp32(), Precision::fixed(4), Precision::ternary(2)}) {
        const auto p = uniform(w, Precision::fixed(8));
        EXPECT_EQ(repr_cost(a, p) - storage_cost(a, p), 500 * 8);
    }
    a.layers[0].input_activations = 200;
    const auto p = uniform(Precision::ternary(2), Precision::fp32());
    EXPECT_EQ(repr_cost(a, p, ActConvention::both) - storage_cost(a, p), 700 * 32);
}

TEST(CostReport, Invariants)
{
    const auto arch = load_arch(data_path("arch/mobilenetv1.json"));
    for (const char* f : {"mobilenetv1_fp", "mobilenetv1_fx8_1", "mobilenetv1_dbq2t_4", "mobilenetv1_dbq2t_4_sparse"}) {
        const auto r = evaluate(arch, load_assignment(data_path(std::string("assign/") + f + ".json")));
        EXPECT_LE(r.cs, r.cc) << f;
        EXPECT_LE(r.cm, r.cr) << f;
    }
}

TEST(BundledSpecs, ResNet20Rows)
{
    const auto arch = load_arch(data_path("arch/resnet20.json"));
    EXPECT_EQ(arch.layers.size(), 20u);
    EXPECT_LT(rel(static_cast<double>(arch.total_weights()) * 32, 8.63e6), 0.02);

    auto r = evaluate(arch, load_assignment(data_path("assign/resnet20_fp.json")));
    EXPECT_LT(rel(r.cc, 23.73e9), 0.05);
    EXPECT_LT(rel(r.cm, 8.63e6), 0.02);
    r = evaluate(arch, load_assignment(data_path("assign/resnet20_dbq1t.json")));
    EXPECT_LT(rel(r.cc, 1.60e9), 0.05);
    EXPECT_LT(rel(r.cm, 0.61e6), 0.05);
    r = evaluate(arch, load_assignment(data_path("assign/resnet20_dbq2t.json")));
    EXPECT_LT(rel(r.cc, 2.83e9), 0.05);
    EXPECT_LT(rel(r.cm, 1.15e6), 0.05);
    r = evaluate(arch, load_assignment(data_path("assign/resnet20_dbq2t_sparse.json")));
    EXPECT_LT(rel(r.cs, 1.79e9), 0.10);
}

TEST(BundledSpecs, MobileNetV1TwoBranchFour)
{
    const auto arch = load_arch(data_path("arch/mobilenetv1.json"));
    const auto r = evaluate(arch, load_assignment(data_path("assign/mobilenetv1_dbq2t_4.json")));
    EXPECT_LT(rel(r.cc, 2.18e10), 0.05);
    EXPECT_LT(rel(r.cm, 2.18e7), 0.05);
}

TEST(Sparsity, AllZeroLayer)
{
    QuantizedLayerWeights l{"z", {}, {}};
    TernaryBranches t;
    t.scales = {1.0, 0.5};
    t.branch_vectors = {std::vector<std::int8_t>(6, 0), std::vector<std::int8_t>(6, 0)};
    l.kernels.push_back(t);
    EXPECT_EQ(sparsity_table({l}).rows[0].sparsity, 1.0);
}

TEST(Sparsity, HandBuiltLayer)
{
    TernaryBranches t;
    t.scales = {1.0, 0.5};
    t.branch_vectors = {{1, 0, -1, 1}, {0, -1, 0, 1}};
    const auto rep = sparsity_table({{"l", {t}, {}}});
    EXPECT_EQ(rep.rows[0].zeros, 3);
    EXPECT_EQ(rep.rows[0].elements, 8);
    EXPECT_EQ(rep.rows[0].sparsity, 0.375);
}

TEST(Sparsity, FixedPointAndWeightedAverage)
{
    TernaryBranches t;
    t.scales = {1.0};
    t.branch_vectors = {{0, 0, 1, -1}};
    const auto rep = sparsity_table({{"t", {t}, {}}, {"f", {}, {0.0, 0.5, 0.0, 0.0, -0.25, 1.0}}});
    EXPECT_EQ(rep.rows[1].zeros, 3);
    EXPECT_EQ(rep.elements, 10);
    EXPECT_EQ(rep.zeros, 5);
    EXPECT_EQ(rep.average, 0.5);
    EXPECT_EQ(rep.densities().at("f"), 0.5);
}

TEST(Sparsity, RandomRecount)
{
    Rng rng(3);
    std::vector<QuantizedLayerWeights> model;
    std::int64_t zeros = 0, total = 0;
    for (int l = 0; l < 5; ++l) {
        QuantizedLayerWeights q{"l" + std::to_string(l), {}, {}};
        for (int k = 0; k < 4; ++k) {
            TernaryBranches t;
            t.scales = {1.0, 0.5};
            t.branch_vectors.assign(2, std::vector<std::int8_t>(37));
            for (auto& v : t.branch_vectors)
                for (auto& e : v) {
                    e = static_cast<std::int8_t>(static_cast<int>(rng.index(3)) - 1);
                    zeros += e == 0;
                    ++total;
                }
            q.kernels.push_back(t);
        }
        model.push_back(q);
    }
    const auto rep = sparsity_table(model);
    EXPECT_EQ(rep.zeros, zeros);
    EXPECT_EQ(rep.elements, total);
}

TEST(ParsePrecision, Spellings)
{
    EXPECT_EQ(parse_precision("fp32"), Precision::fp32());
    EXPECT_EQ(parse_precision("32b"), Precision::fp32());
    EXPECT_EQ(parse_precision("FP"), Precision::fp32());
    EXPECT_EQ(parse_precision("8b"), Precision::fixed(8));
    EXPECT_EQ(parse_precision("fixed4"), Precision::fixed(4));
    EXPECT_EQ(parse_precision("2T"), Precision::ternary(2));
    EXPECT_EQ(parse_precision("ternary1"), Precision::ternary(1));
    EXPECT_FALSE(parse_precision("5T"));
    EXPECT_FALSE(parse_precision("1b"));
    EXPECT_FALSE(parse_precision("17b"));
    EXPECT_FALSE(parse_precision("int8"));
}

TEST(LoadArch, EmptyFileIsParseError)
{
    try {
        parse_arch("", "empty.json");
        FAIL() << "expected a parse error";
    } catch (const SpecError& e) {
        EXPECT_NE(std::string(e.what()).find("parse error"), std::string::npos);
    }
}

TEST(LoadArch, ParseErrorHasLineNumber)
{
    try {
        parse_arch("{\n  \"layers\": [\n    {,}\n  ]\n}", "bad.json");
        FAIL();
    } catch (const SpecError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(LoadArch, ZeroLengthNamesLayer)
{
    const std::string doc = R"({"layers": [{"name": "convA", "kind": "other", "dot_products": 4, "dot_length": 0,
                                             "weights": 0, "activations": 4}]})";
    try {
        parse_arch(doc);
        FAIL();
    } catch (const SpecError& e) {
        EXPECT_NE(std::string(e.what()).find("convA"), std::string::npos);
    }
}

TEST(LoadArch, CollectsEveryProblem)
{
    const std::string doc = R"({"layers": [
        {"name": "a", "kind": "other", "dot_products": -1, "dot_length": 3, "weights": 3, "activations": 1},
        {"name": "a", "kind": "bogus", "dot_products": 1, "dot_length": 3, "weights": 3, "activations": 1},
        {"name": "fc", "kind": "fully-connected", "dot_products": 2, "dot_length": 3, "weights": 5, "activations": 2}]})";
    try {
        parse_arch(doc);
        FAIL();
    } catch (const SpecError& e) {
        EXPECT_EQ(e.problems().size(), 4u) << e.what();
    }
}

TEST(LoadArch, MissingFileNamesPath)
{
    try {
        load_arch("/nonexistent/arch.json");
        FAIL();
    } catch (const SpecError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/arch.json"), std::string::npos);
    }
}

TEST(LoadAssignment, Rejections)
{
    EXPECT_THROW(parse_assignment(R"({"activations": "2T"})"), SpecError);
    EXPECT_THROW(parse_assignment(R"({"weights": {"conv": "8b"}})"), SpecError);
    EXPECT_THROW(parse_assignment(R"({"density": 1.5})"), SpecError);
    EXPECT_THROW(parse_assignment(R"({"weights": "9T"})"), SpecError);
    EXPECT_THROW(parse_assignment(R"({"bn": "1T"})"), SpecError);
}

TEST(LoadAssignment, LayerOverride)
{
    const auto p = parse_assignment(R"({"weights": "2T", "activations": "8b", "layers": {"fc": {"weights": "4b"}}})");
    LayerSpec fc = dense_layer(1, 1);
    fc.name = "fc";
    LayerSpec other = dense_layer(1, 1);
    EXPECT_EQ(p.resolve(fc).weights, Precision::fixed(4));
    EXPECT_EQ(p.resolve(fc).activations, Precision::fp32());
    EXPECT_EQ(p.resolve(other).weights, Precision::ternary(2));
}

TEST(Csv, HeaderRowsAndTotal)
{
    ArchSpec a{"x", {dense_layer(1, 1, 2)}};
    a.layers[0].name = "only";
    std::ostringstream os;
    write_csv(os, evaluate(a, uniform(Precision::fixed(1), Precision::fixed(2))));
    const auto s = os.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "layer,Cc,Cs,Cr,Cm");
    EXPECT_NE(s.find("\nonly,"), std::string::npos);
    EXPECT_NE(s.find("\ntotal,"), std::string::npos);
}
