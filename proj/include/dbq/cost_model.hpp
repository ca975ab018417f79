// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Hardware cost metrics for an architecture under a precision assignment:
//   C_C  full adders for all dot products
//   C_S  same, counting only non-zero weights
//   C_R  weight + activation storage bits
//   C_M  weight storage bits
//
// Costing conventions:
//   * fp32 operands are treated as 23-bit (mantissa) fixed point for compute
//     and 32 bits for storage. A dot product with any fp32 operand is costed
//     as a floating-point MAC, i.e. both operands at 23 bits.
//   * A B-branch ternary layer needs no multipliers: each branch is an adder
//     tree over sign-selected activations, B * N * (D-1) * (B_A + ceil(log2 D) - 1)
//     full adders. Storage is 2 bits per weight per branch.
//   * Batch norm attached to a layer costs one multiply and one
//     (B_W + B_A)-bit add per output element at the BN precision, and stores
//     two values per channel.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbq/quantizer.hpp"

namespace dbq::cost {

enum class LayerKind { first, depthwise, pointwise, fully_connected, other };

inline const char* to_string(LayerKind k)
{
    switch (k) {
    case LayerKind::first: return "first";
    case LayerKind::depthwise: return "depthwise";
    case LayerKind::pointwise: return "pointwise";
    case LayerKind::fully_connected: return "fully-connected";
    case LayerKind::other: return "other";
    }
    return "other";
}

inline std::optional<LayerKind> parse_kind(const std::string& s)
{
    if (s == "first") return LayerKind::first;
    if (s == "depthwise" || s == "dw") return LayerKind::depthwise;
    if (s == "pointwise" || s == "pw") return LayerKind::pointwise;
    if (s == "fully-connected" || s == "fc") return LayerKind::fully_connected;
    if (s == "other") return LayerKind::other;
    return std::nullopt;
}

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::other;
    std::int64_t dot_products = 0;      // N_l
    std::int64_t dot_length = 0;        // D_l
    std::int64_t weights = 0;           // |W_l|
    std::int64_t activations = 0;       // |A_l|, output elements
    std::int64_t input_activations = 0; // input elements, used by the "both" convention
    std::int64_t bn_channels = 0;       // channels of a BN applied to the output, 0 for none
};

struct ArchSpec {
    std::string name;
    std::vector<LayerSpec> layers;

    std::int64_t total_weights() const
    {
        std::int64_t n = 0;
        for (const auto& l : layers) n += l.weights;
        return n;
    }
};

/// Parse or validation failure. what() carries every problem, one per line.
class SpecError : public std::runtime_error {
public:
    SpecError(std::string source, std::vector<std::string> problems)
        : std::runtime_error(format(source, problems)), problems_(std::move(problems))
    {
    }
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string format(const std::string& source, const std::vector<std::string>& problems)
    {
        std::string s = source + ":";
        for (const auto& p : problems) s += "\n  " + p;
        return s;
    }
    std::vector<std::string> problems_;
};

// ---------------------------------------------------------------------------
// Precision

struct Precision {
    enum class Kind { fp32, fixed, ternary };
    Kind kind = Kind::fp32;
    int bits = 32; // fixed: bit width; ternary: branch count

    static Precision fp32() { return {Kind::fp32, 32}; }
    static Precision fixed(int b) { return {Kind::fixed, b}; }
    static Precision ternary(int branches) { return {Kind::ternary, branches}; }

    bool is_fp32() const { return kind == Kind::fp32; }
    bool is_ternary() const { return kind == Kind::ternary; }

    bool operator==(const Precision&) const = default;
};

/// Accepts "fp32"/"32b", "fixed8"/"8b" and "ternary2"/"2T".
inline std::optional<Precision> parse_precision(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "fp32" || s == "32b" || s == "fp") return Precision::fp32();
    auto number = [](const std::string& digits) -> std::optional<int> {
        if (digits.empty() || digits.size() > 2) return std::nullopt;
        for (char c : digits)
            if (c < '0' || c > '9') return std::nullopt;
        return std::stoi(digits);
    };
    std::optional<int> n;
    if (s.starts_with("fixed") && (n = number(s.substr(5)))) {
    } else if (s.size() >= 2 && s.back() == 'b' && (n = number(s.substr(0, s.size() - 1)))) {
    } else if (s.starts_with("ternary") && (n = number(s.substr(7)))) {
        if (*n < 1 || *n > kMaxBranches) return std::nullopt;
        return Precision::ternary(*n);
    } else if (s.size() >= 2 && s.back() == 't' && (n = number(s.substr(0, s.size() - 1)))) {
        if (*n < 1 || *n > kMaxBranches) return std::nullopt;
        return Precision::ternary(*n);
    } else {
        return std::nullopt;
    }
    if (*n < 2 || *n > 16) return std::nullopt;
    return Precision::fixed(*n);
}

inline std::string to_string(const Precision& p)
{
    switch (p.kind) {
    case Precision::Kind::fp32: return "fp32";
    case Precision::Kind::fixed: return "fixed" + std::to_string(p.bits);
    case Precision::Kind::ternary: return "ternary" + std::to_string(p.bits);
    }
    return "fp32";
}

/// Precision choice for one layer.
struct LayerPrecision {
    Precision weights = Precision::fp32();
    Precision activations = Precision::fp32();
    double density = 1.0; // fraction of non-zero weights, for C_S
};

struct EffectivePrecisions {
    int weight_compute = 23;
    int weight_storage = 32;
    int act_compute = 23;
    int act_storage = 32;
    int branches = 0; // > 0 for ternary weights
};

inline constexpr int kMantissaBits = 23;

inline EffectivePrecisions effective_precisions(const LayerPrecision& lp)
{
    EffectivePrecisions e;
    switch (lp.weights.kind) {
    case Precision::Kind::fp32: e.weight_compute = kMantissaBits; e.weight_storage = 32; break;
    case Precision::Kind::fixed: e.weight_compute = lp.weights.bits; e.weight_storage = lp.weights.bits; break;
    case Precision::Kind::ternary:
        e.weight_compute = lp.weights.bits;
        e.weight_storage = 2 * lp.weights.bits;
        e.branches = lp.weights.bits;
        break;
    }
    if (lp.activations.is_fp32()) {
        e.act_compute = kMantissaBits;
        e.act_storage = 32;
    } else {
        e.act_compute = lp.activations.bits;
        e.act_storage = lp.activations.bits;
    }
    // Floating-point MAC when either side is fp32.
    if (e.branches == 0 && (lp.weights.is_fp32() || lp.activations.is_fp32())) {
        e.weight_compute = kMantissaBits;
        e.act_compute = kMantissaBits;
    }
    return e;
}

/// Per-kind defaults with optional per-layer overrides.
struct PrecisionAssignment {
    std::string name;
    std::map<LayerKind, LayerPrecision> by_kind;
    std::map<std::string, LayerPrecision> by_layer;
    Precision bn = Precision::fp32();

    LayerPrecision resolve(const LayerSpec& l) const
    {
        if (auto it = by_layer.find(l.name); it != by_layer.end()) return it->second;
        if (auto it = by_kind.find(l.kind); it != by_kind.end()) return it->second;
        return {};
    }
};

// ---------------------------------------------------------------------------
// Metrics

enum class ActConvention { output, both };

struct LayerCost {
    std::string name;
    std::int64_t cc = 0;
    std::int64_t cs = 0;
    std::int64_t cr = 0;
    std::int64_t cm = 0;
};

struct CostReport {
    std::vector<LayerCost> layers;
    std::int64_t cc = 0;
    std::int64_t cs = 0;
    std::int64_t cr = 0;
    std::int64_t cm = 0;
};

/// ceil(log2 d) for d >= 1.
inline std::int64_t ceil_log2(std::int64_t d)
{
    if (d <= 1) return 0;
    return static_cast<std::int64_t>(std::bit_width(static_cast<std::uint64_t>(d - 1)));
}

/// Dot-product full adders of one layer with `active` non-zero weights per
/// dot product (active = D gives C_C). BN is not included.
inline std::int64_t dot_product_cost(const LayerSpec& l, const EffectivePrecisions& e, std::int64_t active)
{
    if (l.dot_products == 0) return 0;
    if (l.dot_length <= 0)
        throw std::invalid_argument("layer '" + l.name + "' has dot-product length " + std::to_string(l.dot_length));
    const std::int64_t lg = ceil_log2(l.dot_length);
    const std::int64_t adders = std::max<std::int64_t>(active - 1, 0);
    if (e.branches > 0) return e.branches * l.dot_products * adders * (e.act_compute + lg - 1);
    const std::int64_t bw = e.weight_compute, ba = e.act_compute;
    return l.dot_products * (active * bw * ba + adders * (ba + bw + lg - 1));
}

inline std::int64_t bn_cost(const LayerSpec& l, Precision bn)
{
    if (l.bn_channels == 0) return 0;
    const std::int64_t b = bn.is_fp32() ? kMantissaBits : bn.bits;
    return l.activations * (b * b + 2 * b);
}

inline std::int64_t bn_storage(const LayerSpec& l, Precision bn)
{
    return 2 * l.bn_channels * (bn.is_fp32() ? 32 : bn.bits);
}

inline std::int64_t active_length(const LayerSpec& l, double density)
{
    if (density >= 1.0) return l.dot_length;
    return std::llround(density * static_cast<double>(l.dot_length));
}

inline LayerCost layer_cost(const LayerSpec& l, const LayerPrecision& lp, Precision bn,
                            ActConvention conv = ActConvention::output)
{
    const auto e = effective_precisions(lp);
    LayerCost c;
    c.name = l.name;
    const std::int64_t bnc = bn_cost(l, bn);
    c.cc = dot_product_cost(l, e, l.dot_length) + bnc;
    c.cs = dot_product_cost(l, e, active_length(l, lp.density)) + bnc;
    c.cm = l.weights * e.weight_storage + bn_storage(l, bn);
    const std::int64_t acts = l.activations + (conv == ActConvention::both ? l.input_activations : 0);
    c.cr = c.cm + acts * e.act_storage;
    return c;
}

inline CostReport evaluate(const ArchSpec& arch, const PrecisionAssignment& assign,
                           ActConvention conv = ActConvention::output)
{
    CostReport r;
    for (const auto& l : arch.layers) {
        auto c = layer_cost(l, assign.resolve(l), assign.bn, conv);
        r.cc += c.cc;
        r.cs += c.cs;
        r.cr += c.cr;
        r.cm += c.cm;
        r.layers.push_back(std::move(c));
    }
    return r;
}

inline std::int64_t comp_cost(const ArchSpec& a, const PrecisionAssignment& p) { return evaluate(a, p).cc; }
inline std::int64_t sparse_comp_cost(const ArchSpec& a, const PrecisionAssignment& p) { return evaluate(a, p).cs; }
inline std::int64_t repr_cost(const ArchSpec& a, const PrecisionAssignment& p, ActConvention c = ActConvention::output)
{
    return evaluate(a, p, c).cr;
}
inline std::int64_t storage_cost(const ArchSpec& a, const PrecisionAssignment& p) { return evaluate(a, p).cm; }

/// CSV rows "layer,Cc,Cs,Cr,Cm" followed by a "total" row.
inline void write_csv(std::ostream& os, const CostReport& r)
{
    os << "layer,Cc,Cs,Cr,Cm\n";
    for (const auto& l : r.layers) os << l.name << ',' << l.cc << ',' << l.cs << ',' << l.cr << ',' << l.cm << '\n';
    os << "total," << r.cc << ',' << r.cs << ',' << r.cr << ',' << r.cm << '\n';
}

// ---------------------------------------------------------------------------
// Sparsity accounting

/// Quantized weights of one layer: ternary branches per kernel, or the
/// quantized values of a fixed-point layer.
struct QuantizedLayerWeights {
    std::string name;
    std::vector<TernaryBranches> kernels;
    std::vector<double> fixed_values;
};

struct SparsityRow {
    std::string name;
    std::int64_t elements = 0;
    std::int64_t zeros = 0;
    double sparsity = 0.0;
};

struct SparsityReport {
    std::vector<SparsityRow> rows;
    std::int64_t elements = 0;
    std::int64_t zeros = 0;
    double average = 0.0; // element-weighted

    /// Non-zero density per layer, for PrecisionAssignment overrides.
    std::map<std::string, double> densities() const
    {
        std::map<std::string, double> d;
        for (const auto& r : rows) d[r.name] = 1.0 - r.sparsity;
        return d;
    }
};

inline SparsityReport sparsity_table(const std::vector<QuantizedLayerWeights>& model)
{
    SparsityReport rep;
    for (const auto& layer : model) {
        SparsityRow row;
        row.name = layer.name;
        for (const auto& k : layer.kernels)
            for (const auto& v : k.branch_vectors) {
                row.elements += static_cast<std::int64_t>(v.size());
                row.zeros += std::count(v.begin(), v.end(), std::int8_t{0});
            }
        for (double v : layer.fixed_values) {
            ++row.elements;
            if (v == 0.0) ++row.zeros;
        }
        row.sparsity = row.elements == 0 ? 1.0 : static_cast<double>(row.zeros) / static_cast<double>(row.elements);
        rep.elements += row.elements;
        rep.zeros += row.zeros;
        rep.rows.push_back(std::move(row));
    }
    rep.average = rep.elements == 0 ? 1.0 : static_cast<double>(rep.zeros) / static_cast<double>(rep.elements);
    return rep;
}

// ---------------------------------------------------------------------------
// File loading

namespace detail {

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SpecError(path, {"cannot open file"});
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json parse_json(const std::string& text, const std::string& source)
{
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < upto; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw SpecError(source, {"parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                                 ": " + e.what()});
    }
}

inline std::optional<std::int64_t> get_count(const nlohmann::json& obj, const char* key, const std::string& where,
                                             std::vector<std::string>& problems, bool required)
{
    if (!obj.contains(key)) {
        if (required) problems.push_back(where + "." + key + ": missing");
        return std::nullopt;
    }
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) {
        problems.push_back(where + "." + key + ": expected an integer");
        return std::nullopt;
    }
    const auto n = v.get<std::int64_t>();
    if (n < 0) problems.push_back(where + "." + key + ": must be non-negative, got " + std::to_string(n));
    return n;
}

} // namespace detail

/// Parses an architecture JSON document. Collects every problem before throwing.
inline ArchSpec parse_arch(const std::string& text, const std::string& source = "<arch>")
{
    const auto doc = detail::parse_json(text, source);
    std::vector<std::string> problems;
    ArchSpec arch;
    if (!doc.is_object()) throw SpecError(source, {"top level must be an object"});
    if (doc.contains("name") && doc["name"].is_string()) arch.name = doc["name"].get<std::string>();
    if (!doc.contains("layers") || !doc["layers"].is_array()) throw SpecError(source, {"layers: missing or not an array"});
    if (doc["layers"].empty()) problems.push_back("layers: empty");

    std::set<std::string> seen;
    std::size_t idx = 0;
    for (const auto& jl : doc["layers"]) {
        const std::string where = "layers[" + std::to_string(idx++) + "]";
        if (!jl.is_object()) {
            problems.push_back(where + ": expected an object");
            continue;
        }
        LayerSpec l;
        if (!jl.contains("name") || !jl["name"].is_string()) {
            problems.push_back(where + ".name: missing or not a string");
        } else {
            l.name = jl["name"].get<std::string>();
            if (!seen.insert(l.name).second) problems.push_back(where + ".name: duplicate layer name '" + l.name + "'");
        }
        const std::string named = l.name.empty() ? where : where + " ('" + l.name + "')";
        if (!jl.contains("kind") || !jl["kind"].is_string()) {
            problems.push_back(named + ".kind: missing or not a string");
        } else if (auto k = parse_kind(jl["kind"].get<std::string>())) {
            l.kind = *k;
        } else {
            problems.push_back(named + ".kind: unknown kind '" + jl["kind"].get<std::string>() + "'");
        }
        l.dot_products = detail::get_count(jl, "dot_products", named, problems, true).value_or(0);
        l.dot_length = detail::get_count(jl, "dot_length", named, problems, true).value_or(0);
        l.weights = detail::get_count(jl, "weights", named, problems, true).value_or(0);
        l.activations = detail::get_count(jl, "activations", named, problems, true).value_or(0);
        l.input_activations = detail::get_count(jl, "input_activations", named, problems, false).value_or(0);
        l.bn_channels = detail::get_count(jl, "bn_channels", named, problems, false).value_or(0);

        if (l.dot_products > 0 && l.dot_length == 0)
            problems.push_back(named + ".dot_length: must be positive for a layer with dot products");
        if (l.kind == LayerKind::fully_connected && l.dot_products > 0 && l.weights != l.dot_products * l.dot_length)
            problems.push_back(named + ".weights: fully-connected layer needs weights = dot_products * dot_length (" +
                               std::to_string(l.dot_products * l.dot_length) + "), got " + std::to_string(l.weights));
        if ((l.kind == LayerKind::first || l.kind == LayerKind::pointwise || l.kind == LayerKind::other) &&
            l.dot_length > 0 && l.weights % l.dot_length != 0)
            problems.push_back(named + ".weights: not a multiple of dot_length");
        arch.layers.push_back(std::move(l));
    }
    if (!problems.empty()) throw SpecError(source, problems);
    return arch;
}

inline ArchSpec load_arch(const std::string& path) { return parse_arch(detail::read_file(path), path); }

/// Parses a precision assignment document:
///   { "name": ..., "weights": <prec or {kind: prec}>, "activations": <prec or {kind: prec}>,
///     "density": <number or {kind: number}>, "bn": <prec>,
///     "layers": { "<layer>": {"weights": .., "activations": .., "density": ..} } }
inline PrecisionAssignment parse_assignment(const std::string& text, const std::string& source = "<assignment>")
{
    const auto doc = detail::parse_json(text, source);
    if (!doc.is_object()) throw SpecError(source, {"top level must be an object"});
    std::vector<std::string> problems;
    PrecisionAssignment pa;
    if (doc.contains("name") && doc["name"].is_string()) pa.name = doc["name"].get<std::string>();

    const LayerKind kinds[] = {LayerKind::first, LayerKind::depthwise, LayerKind::pointwise, LayerKind::fully_connected,
                               LayerKind::other};
    for (auto k : kinds) pa.by_kind[k] = LayerPrecision{};

    auto prec = [&](const nlohmann::json& v, const std::string& where) -> std::optional<Precision> {
        if (!v.is_string()) {
            problems.push_back(where + ": expected a precision string");
            return std::nullopt;
        }
        auto p = parse_precision(v.get<std::string>());
        if (!p) problems.push_back(where + ": unknown precision '" + v.get<std::string>() + "'");
        return p;
    };
    auto dens = [&](const nlohmann::json& v, const std::string& where) -> std::optional<double> {
        if (!v.is_number()) {
            problems.push_back(where + ": expected a number");
            return std::nullopt;
        }
        const double d = v.get<double>();
        if (!(d > 0.0 && d <= 1.0)) {
            problems.push_back(where + ": density must be in (0, 1]");
            return std::nullopt;
        }
        return d;
    };
    auto per_kind = [&](const char* key, auto&& apply) {
        if (!doc.contains(key)) return;
        const auto& v = doc[key];
        if (v.is_object()) {
            for (auto it = v.begin(); it != v.end(); ++it) {
                auto k = parse_kind(it.key());
                if (!k) {
                    problems.push_back(std::string(key) + "." + it.key() + ": unknown layer kind");
                    continue;
                }
                apply(pa.by_kind[*k], it.value(), std::string(key) + "." + it.key());
            }
        } else {
            for (auto k : kinds) apply(pa.by_kind[k], v, key);
        }
    };
    per_kind("weights", [&](LayerPrecision& lp, const nlohmann::json& v, const std::string& w) {
        if (auto p = prec(v, w)) lp.weights = *p;
    });
    per_kind("activations", [&](LayerPrecision& lp, const nlohmann::json& v, const std::string& w) {
        if (auto p = prec(v, w)) {
            if (p->is_ternary()) problems.push_back(w + ": activations cannot be ternary");
            else lp.activations = *p;
        }
    });
    per_kind("density", [&](LayerPrecision& lp, const nlohmann::json& v, const std::string& w) {
        if (auto d = dens(v, w)) lp.density = *d;
    });
    if (doc.contains("bn")) {
        if (auto p = prec(doc["bn"], "bn")) {
            if (p->is_ternary()) problems.push_back("bn: batch norm cannot be ternary");
            else pa.bn = *p;
        }
    }
    if (doc.contains("layers")) {
        if (!doc["layers"].is_object()) {
            problems.push_back("layers: expected an object keyed by layer name");
        } else {
            for (auto it = doc["layers"].begin(); it != doc["layers"].end(); ++it) {
                const std::string where = "layers." + it.key();
                // Overrides start from nothing and must be complete enough to stand alone.
                LayerPrecision lp;
                const auto& o = it.value();
                if (!o.is_object()) {
                    problems.push_back(where + ": expected an object");
                    continue;
                }
                if (o.contains("weights"))
                    if (auto p = prec(o["weights"], where + ".weights")) lp.weights = *p;
                if (o.contains("activations"))
                    if (auto p = prec(o["activations"], where + ".activations")) lp.activations = *p;
                if (o.contains("density"))
                    if (auto d = dens(o["density"], where + ".density")) lp.density = *d;
                pa.by_layer[it.key()] = lp;
            }
        }
    }
    if (!problems.empty()) throw SpecError(source, problems);
    return pa;
}

inline PrecisionAssignment load_assignment(const std::string& path)
{
    return parse_assignment(detail::read_file(path), path);
}

} // namespace dbq::cost
