// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dbq/selfcheck.hpp"
#include "dbq/serde.hpp"
#include "dbq/util.hpp"

using namespace dbq;
using namespace dbq::serde;

namespace {

TernaryBranches random_branches(Rng& rng, int b, std::size_t d)
{
    TernaryBranches t;
    t.branch_vectors.assign(static_cast<std::size_t>(b), std::vector<std::int8_t>(d));
    for (auto& v : t.branch_vectors)
        for (auto& e : v) e = static_cast<std::int8_t>(static_cast<int>(rng.index(3)) - 1);
    for (int j = 0; j < b; ++j) t.scales.push_back(rng.normal());
    return t;
}

FormatErrorKind kind_of(std::span<const std::uint8_t> blob)
{
    try {
        unpack(blob);
    } catch (const FormatError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "blob was accepted";
    return FormatErrorKind::bad_header;
}

// Header (15) + 2 scales (16) precede the payload for B = 2.
constexpr std::size_t kPayload2 = 15 + 16;

} // namespace

TEST(Pack, HandPackedBytes)
{
    TernaryBranches t;
    t.scales = {0.75, 0.5};
    t.branch_vectors = {{1, -1, 0, 0}, {0, 0, 1, -1}};
    const auto blob = pack(t);
    ASSERT_EQ(blob.size(), blob_size(2, 4));
    EXPECT_EQ(blob.size(), 15u + 16u + 2u);
    EXPECT_EQ(blob[kPayload2], 0b00001001);
    EXPECT_EQ(blob[kPayload2 + 1], 0b10010000);
}

TEST(Pack, HeaderLayout)
{
    TernaryBranches t;
    t.scales = {1.0, 0.5};
    t.branch_vectors = {{1}, {0}};
    const auto blob = pack(t);
    EXPECT_EQ(std::string(blob.begin(), blob.begin() + 4), "DBQ1");
    EXPECT_EQ(blob[4], 1);
    EXPECT_EQ(blob[5], 0);
    EXPECT_EQ(blob[6], 2);
    EXPECT_EQ(blob[7], 1);
    for (int i = 8; i < 15; ++i) EXPECT_EQ(blob[static_cast<std::size_t>(i)], 0);
    // 1.0 as a little-endian IEEE double.
    const std::vector<std::uint8_t> one{0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
    EXPECT_EQ(std::vector<std::uint8_t>(blob.begin() + 15, blob.begin() + 23), one);
}

TEST(Pack, EmptyIsHeaderOnly)
{
    TernaryBranches t;
    t.scales = {1.0, 2.0, 3.0};
    t.branch_vectors.assign(3, {});
    const auto blob = pack(t);
    EXPECT_EQ(blob.size(), 15u + 24u);
    EXPECT_EQ(unpack(blob), t);
}

TEST(Pack, SizeFormula)
{
    Rng rng(1);
    for (int rep = 0; rep < 200; ++rep) {
        const int b = 1 + static_cast<int>(rng.index(4));
        const std::size_t d = rng.index(100);
        const auto blob = pack(random_branches(rng, b, d));
        EXPECT_EQ(blob.size(), 15 + 8 * static_cast<std::size_t>(b) + static_cast<std::size_t>(b) * ((d + 3) / 4));
    }
}

TEST(Pack, RejectsInvalidInput)
{
    TernaryBranches t;
    t.scales = {1.0};
    t.branch_vectors = {{2}};
    EXPECT_THROW(pack(t), std::invalid_argument);
    t.branch_vectors = {{1}, {1}};
    EXPECT_THROW(pack(t), std::invalid_argument);
    t.scales.clear();
    t.branch_vectors.clear();
    EXPECT_THROW(pack(t), std::invalid_argument);
}

TEST(Unpack, Roundtrip)
{
    Rng rng(2);
    for (int rep = 0; rep < 2000; ++rep) {
        const auto t = random_branches(rng, 1 + static_cast<int>(rng.index(4)), rng.index(300));
        const auto blob = pack(t);
        const auto back = unpack(blob);
        ASSERT_EQ(back, t);
        ASSERT_EQ(pack(back), blob);
    }
}

TEST(Unpack, ScalesBitExact)
{
    TernaryBranches t;
    t.scales = {-0.0, 5e-324};
    t.branch_vectors = {{1}, {-1}};
    const auto back = unpack(pack(t));
    EXPECT_TRUE(std::signbit(back.scales[0]));
    EXPECT_EQ(back.scales[1], 5e-324);
}

TEST(Unpack, BadMagic)
{
    Rng rng(3);
    auto blob = pack(random_branches(rng, 2, 10));
    blob[0] = 'X';
    EXPECT_EQ(kind_of(blob), FormatErrorKind::bad_magic);
}

TEST(Unpack, UnsupportedVersion)
{
    Rng rng(4);
    auto blob = pack(random_branches(rng, 2, 10));
    blob[4] = 2;
    EXPECT_EQ(kind_of(blob), FormatErrorKind::unsupported_version);
}

TEST(Unpack, InvalidCodeReportsOffset)
{
    TernaryBranches t;
    t.scales = {1.0, 1.0};
    t.branch_vectors = {{0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}};
    auto blob = pack(t);
    // Second branch, element 1.
    const std::size_t at = kPayload2 + 2;
    blob[at] |= 0b1100;
    try {
        unpack(blob);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.kind(), FormatErrorKind::invalid_code);
        EXPECT_EQ(e.offset(), at);
    }
}

TEST(Unpack, Truncated)
{
    Rng rng(5);
    const auto blob = pack(random_branches(rng, 3, 33));
    for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{20}, blob.size() - 1})
        EXPECT_EQ(kind_of(std::span(blob).first(n)), FormatErrorKind::truncated) << n;
}

TEST(Unpack, HugeLengthIsTruncatedNotAllocated)
{
    Rng rng(6);
    auto blob = pack(random_branches(rng, 1, 4));
    for (int i = 7; i < 15; ++i) blob[static_cast<std::size_t>(i)] = 0xFF;
    EXPECT_EQ(kind_of(blob), FormatErrorKind::truncated);
}

TEST(Unpack, OtherMalformations)
{
    Rng rng(7);
    auto blob = pack(random_branches(rng, 2, 5));
    auto bad_b = blob;
    bad_b[6] = 7;
    EXPECT_EQ(kind_of(bad_b), FormatErrorKind::bad_header);
    auto pad = blob;
    pad[kPayload2 + 1] |= 0b10000000;
    EXPECT_EQ(kind_of(pad), FormatErrorKind::bad_padding);
    auto extra = blob;
    extra.push_back(0);
    EXPECT_EQ(kind_of(extra), FormatErrorKind::trailing_data);
}

TEST(Params, Roundtrip)
{
    Rng rng(8);
    for (int b = 1; b <= kMaxBranches; ++b) {
        const auto p = random_params(b, rng);
        EXPECT_EQ(decode_params(encode_params(p)), p);
    }
    auto bytes = encode_params(random_params(2, rng));
    bytes.pop_back();
    EXPECT_THROW(decode_params(bytes), FormatError);
}

TEST(Arrays, Roundtrip)
{
    const std::vector<double> v{1.0, -2.5, 1e300, 0.0};
    EXPECT_EQ(decode_array(encode_array(v)), v);
    EXPECT_TRUE(decode_array(encode_array(std::vector<double>{})).empty());
}

TEST(Checkpoint, RoundtripAndLookup)
{
    Rng rng(9);
    Checkpoint c;
    const auto t = random_branches(rng, 2, 17);
    const auto p = random_params(2, rng);
    c.add_branches("conv.branches0", t);
    c.add_params("conv.q0", p);
    c.add_array("bn.gamma", std::vector<double>{1.0, 2.0});
    const auto back = Checkpoint::decode(c.encode());
    EXPECT_EQ(back, c);
    EXPECT_EQ(back.branches("conv.branches0"), t);
    EXPECT_EQ(back.params("conv.q0"), p);
    EXPECT_EQ(back.array("bn.gamma"), (std::vector<double>{1.0, 2.0}));
    EXPECT_THROW(back.array("missing"), std::out_of_range);
    EXPECT_THROW(back.array("conv.q0"), std::invalid_argument);
    EXPECT_THROW(c.add_array("bn.gamma", std::vector<double>{}), std::invalid_argument);
}

TEST(Checkpoint, RejectsCorruption)
{
    Checkpoint c;
    c.add_array("a", std::vector<double>{1.0});
    auto bytes = c.encode();
    auto trunc = bytes;
    trunc.pop_back();
    EXPECT_THROW(Checkpoint::decode(trunc), FormatError);
    auto extra = bytes;
    extra.push_back(1);
    EXPECT_THROW(Checkpoint::decode(extra), FormatError);
    bytes[0] = 'Z';
    EXPECT_THROW(Checkpoint::decode(bytes), FormatError);
}

TEST(Weights, Roundtrip)
{
    WeightMatrix m{2, 3, {1, 2, 3, 4, 5, 6}};
    const auto back = decode_weights(encode_weights(m));
    EXPECT_EQ(back.rows, 2u);
    EXPECT_EQ(back.cols, 3u);
    EXPECT_EQ(back.data, m.data);
    EXPECT_EQ(back.row(1)[0], 4.0);
    auto bytes = encode_weights(m);
    bytes.resize(bytes.size() - 8);
    EXPECT_THROW(decode_weights(bytes), FormatError);
}
