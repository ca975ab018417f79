// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Binary formats, all little-endian.
//
// Packed ternary blob:
//   "DBQ1" | u16 version | u8 B | u64 D | B x f64 scales | B * ceil(D/4) payload bytes
// Each element uses 2 bits (00 -> 0, 01 -> +1, 10 -> -1, 11 invalid), branch-major,
// element 0 in the two lowest bits of the first byte. Pad bits are zero.
//
// Quantizer parameters:
//   "DBQP" | u16 version | u8 B | f64 gamma1 | f64 gamma2 | B x f64 alphas | (3^B - 1) x f64 thresholds
//
// f64 array:
//   u64 count | count x f64
//
// Checkpoint container:
//   "DBQC" | u16 version | u32 count | count x index entry | payloads
//   index entry: u16 name length | name bytes | u8 kind | u64 offset | u64 size
// Offsets are from the start of the container.

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbq/quantizer.hpp"

namespace dbq::serde {

enum class FormatErrorKind {
    bad_magic,
    unsupported_version,
    invalid_code,
    truncated,
    bad_header,
    bad_padding,
    trailing_data,
};

inline const char* to_string(FormatErrorKind k)
{
    switch (k) {
    case FormatErrorKind::bad_magic: return "bad magic";
    case FormatErrorKind::unsupported_version: return "unsupported version";
    case FormatErrorKind::invalid_code: return "invalid code";
    case FormatErrorKind::truncated: return "truncated";
    case FormatErrorKind::bad_header: return "bad header";
    case FormatErrorKind::bad_padding: return "non-zero padding";
    case FormatErrorKind::trailing_data: return "trailing data";
    }
    return "format error";
}

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, std::size_t offset, const std::string& detail)
        : std::runtime_error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) + ": " + detail),
          kind_(kind), offset_(offset)
    {
    }
    FormatErrorKind kind() const noexcept { return kind_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    FormatErrorKind kind_;
    std::size_t offset_;
};

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kBlobHeaderSize = 15;

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

// ---------------------------------------------------------------------------
// Byte-level helpers

class Writer {
public:
    void bytes(const void* p, std::size_t n)
    {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { bytes(&v, 2); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void magic(const char (&m)[5]) { bytes(m, 4); }

    std::vector<std::uint8_t>& buffer() { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    void need(std::size_t n, const char* what) const
    {
        if (remaining() < n)
            throw FormatError(FormatErrorKind::truncated, pos_,
                              std::string("need ") + std::to_string(n) + " bytes for " + what + ", have " +
                                  std::to_string(remaining()));
    }
    std::span<const std::uint8_t> bytes(std::size_t n, const char* what)
    {
        need(n, what);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    template <class T>
    T scalar(const char* what)
    {
        T v;
        std::memcpy(&v, bytes(sizeof(T), what).data(), sizeof(T));
        return v;
    }
    std::uint8_t u8(const char* what) { return scalar<std::uint8_t>(what); }
    std::uint16_t u16(const char* what) { return scalar<std::uint16_t>(what); }
    std::uint32_t u32(const char* what) { return scalar<std::uint32_t>(what); }
    std::uint64_t u64(const char* what) { return scalar<std::uint64_t>(what); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    void magic(const char (&m)[5])
    {
        const std::size_t at = pos_;
        if (remaining() < 4)
            throw FormatError(FormatErrorKind::truncated, at, "input shorter than the magic number");
        if (std::memcmp(data_.data() + pos_, m, 4) != 0)
            throw FormatError(FormatErrorKind::bad_magic, at, std::string("expected \"") + m + "\"");
        pos_ += 4;
    }
    void version()
    {
        const std::size_t at = pos_;
        const auto v = u16("version");
        if (v != kFormatVersion)
            throw FormatError(FormatErrorKind::unsupported_version, at, "version " + std::to_string(v));
    }
    void finish() const
    {
        if (remaining() != 0)
            throw FormatError(FormatErrorKind::trailing_data, pos_, std::to_string(remaining()) + " unexpected bytes");
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Packed ternary blob

inline std::size_t payload_bytes_per_branch(std::uint64_t d) { return static_cast<std::size_t>((d + 3) / 4); }

inline std::size_t blob_size(int branches, std::uint64_t d)
{
    const auto b = static_cast<std::size_t>(branches);
    return kBlobHeaderSize + 8 * b + b * payload_bytes_per_branch(d);
}

inline std::uint8_t encode_code(std::int8_t v)
{
    switch (v) {
    case 0: return 0b00;
    case 1: return 0b01;
    case -1: return 0b10;
    default: throw std::invalid_argument("ternary branch entry " + std::to_string(v) + " is not in {-1, 0, +1}");
    }
}

inline void append_blob(Writer& w, const TernaryBranches& t)
{
    const int b = t.branches();
    if (b < 1 || b > kMaxBranches) throw std::invalid_argument("branch count must be in [1, 4]");
    if (t.branch_vectors.size() != static_cast<std::size_t>(b))
        throw std::invalid_argument("branch vector count does not match scale count");
    const std::size_t d = t.length();
    for (const auto& v : t.branch_vectors)
        if (v.size() != d) throw std::invalid_argument("branch vectors have different lengths");

    w.magic("DBQ1");
    w.u16(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(b));
    w.u64(d);
    for (double s : t.scales) w.f64(s);
    const std::size_t per = payload_bytes_per_branch(d);
    for (const auto& v : t.branch_vectors) {
        auto& buf = w.buffer();
        const std::size_t start = buf.size();
        buf.resize(start + per, 0);
        for (std::size_t k = 0; k < d; ++k)
            buf[start + k / 4] |= static_cast<std::uint8_t>(encode_code(v[k]) << (2 * (k % 4)));
    }
}

inline std::vector<std::uint8_t> pack(const TernaryBranches& t)
{
    Writer w;
    w.buffer().reserve(blob_size(t.branches(), t.length()));
    append_blob(w, t);
    return w.take();
}

inline TernaryBranches read_blob(Reader& r)
{
    r.magic("DBQ1");
    r.version();
    const std::size_t b_at = r.pos();
    const int b = r.u8("branch count");
    if (b < 1 || b > kMaxBranches)
        throw FormatError(FormatErrorKind::bad_header, b_at, "branch count " + std::to_string(b) + " not in [1, 4]");
    const std::size_t d_at = r.pos();
    const std::uint64_t d64 = r.u64("element count");
    // Guard the allocation against corrupted lengths before touching the payload.
    const std::uint64_t max_d = static_cast<std::uint64_t>(r.remaining()) * 4;
    if (d64 > max_d)
        throw FormatError(FormatErrorKind::truncated, d_at,
                          "element count " + std::to_string(d64) + " exceeds the available payload");
    const auto d = static_cast<std::size_t>(d64);

    TernaryBranches t;
    t.scales.resize(static_cast<std::size_t>(b));
    for (auto& s : t.scales) s = r.f64("branch scale");
    const std::size_t per = payload_bytes_per_branch(d);
    r.need(per * static_cast<std::size_t>(b), "payload");
    t.branch_vectors.assign(static_cast<std::size_t>(b), std::vector<std::int8_t>(d));
    for (auto& v : t.branch_vectors) {
        const std::size_t base = r.pos();
        const auto bytes = r.bytes(per, "payload");
        for (std::size_t k = 0; k < d; ++k) {
            const unsigned code = (bytes[k / 4] >> (2 * (k % 4))) & 0b11u;
            if (code == 0b11u)
                throw FormatError(FormatErrorKind::invalid_code, base + k / 4,
                                  "code 11 for element " + std::to_string(k));
            v[k] = code == 0b01u ? 1 : (code == 0b10u ? -1 : 0);
        }
        if (d % 4 != 0) {
            const auto used = static_cast<unsigned>(2 * (d % 4));
            if ((bytes[per - 1] >> used) != 0)
                throw FormatError(FormatErrorKind::bad_padding, base + per - 1, "pad bits must be zero");
        }
    }
    return t;
}

inline TernaryBranches unpack(std::span<const std::uint8_t> blob)
{
    Reader r(blob);
    auto t = read_blob(r);
    r.finish();
    return t;
}

// ---------------------------------------------------------------------------
// Quantizer parameters and plain arrays

inline std::vector<std::uint8_t> encode_params(const QuantizerParams& p)
{
    p.validate();
    Writer w;
    w.magic("DBQP");
    w.u16(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(p.branches()));
    w.f64(p.gamma1);
    w.f64(p.gamma2);
    for (double a : p.alphas) w.f64(a);
    for (double t : p.thresholds) w.f64(t);
    return w.take();
}

inline QuantizerParams decode_params(std::span<const std::uint8_t> data)
{
    Reader r(data);
    r.magic("DBQP");
    r.version();
    const std::size_t b_at = r.pos();
    const int b = r.u8("branch count");
    if (b < 1 || b > kMaxBranches)
        throw FormatError(FormatErrorKind::bad_header, b_at, "branch count " + std::to_string(b) + " not in [1, 4]");
    QuantizerParams p;
    p.gamma1 = r.f64("gamma1");
    p.gamma2 = r.f64("gamma2");
    p.alphas.resize(static_cast<std::size_t>(b));
    for (auto& a : p.alphas) a = r.f64("alpha");
    p.thresholds.resize(level_count(b) - 1);
    for (auto& t : p.thresholds) t = r.f64("threshold");
    r.finish();
    return p;
}

inline std::vector<std::uint8_t> encode_array(std::span<const double> v)
{
    Writer w;
    w.u64(v.size());
    for (double x : v) w.f64(x);
    return w.take();
}

inline std::vector<double> decode_array(std::span<const std::uint8_t> data)
{
    Reader r(data);
    const std::uint64_t n = r.u64("array length");
    if (n > r.remaining() / 8)
        throw FormatError(FormatErrorKind::truncated, 8, "array of " + std::to_string(n) + " values does not fit");
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = r.f64("array value");
    r.finish();
    return v;
}

// ---------------------------------------------------------------------------
// Checkpoint container

enum class EntryKind : std::uint8_t { ternary_blob = 1, quantizer_params = 2, f64_array = 3 };

class Checkpoint {
public:
    struct Entry {
        std::string name;
        EntryKind kind;
        std::vector<std::uint8_t> bytes;

        bool operator==(const Entry&) const = default;
    };

    void add(std::string name, EntryKind kind, std::vector<std::uint8_t> bytes)
    {
        if (name.empty() || name.size() > 0xFFFF) throw std::invalid_argument("checkpoint entry name must be 1..65535 bytes");
        if (find(name)) throw std::invalid_argument("duplicate checkpoint entry '" + name + "'");
        entries_.push_back({std::move(name), kind, std::move(bytes)});
    }
    void add_branches(std::string name, const TernaryBranches& t) { add(std::move(name), EntryKind::ternary_blob, pack(t)); }
    void add_params(std::string name, const QuantizerParams& p) { add(std::move(name), EntryKind::quantizer_params, encode_params(p)); }
    void add_array(std::string name, std::span<const double> v) { add(std::move(name), EntryKind::f64_array, encode_array(v)); }

    const Entry* find(const std::string& name) const
    {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    const Entry& get(const std::string& name, EntryKind kind) const
    {
        const Entry* e = find(name);
        if (!e) throw std::out_of_range("checkpoint has no entry '" + name + "'");
        if (e->kind != kind) throw std::invalid_argument("checkpoint entry '" + name + "' has the wrong kind");
        return *e;
    }
    TernaryBranches branches(const std::string& name) const { return unpack(get(name, EntryKind::ternary_blob).bytes); }
    QuantizerParams params(const std::string& name) const { return decode_params(get(name, EntryKind::quantizer_params).bytes); }
    std::vector<double> array(const std::string& name) const { return decode_array(get(name, EntryKind::f64_array).bytes); }

    const std::vector<Entry>& entries() const noexcept { return entries_; }

    std::vector<std::uint8_t> encode() const
    {
        std::size_t index = 4 + 2 + 4;
        for (const auto& e : entries_) index += 2 + e.name.size() + 1 + 8 + 8;
        Writer w;
        w.magic("DBQC");
        w.u16(kFormatVersion);
        w.u32(static_cast<std::uint32_t>(entries_.size()));
        std::uint64_t offset = index;
        for (const auto& e : entries_) {
            w.u16(static_cast<std::uint16_t>(e.name.size()));
            w.bytes(e.name.data(), e.name.size());
            w.u8(static_cast<std::uint8_t>(e.kind));
            w.u64(offset);
            w.u64(e.bytes.size());
            offset += e.bytes.size();
        }
        for (const auto& e : entries_) w.bytes(e.bytes.data(), e.bytes.size());
        return w.take();
    }

    /// Entries must be stored contiguously in index order with no gaps.
    static Checkpoint decode(std::span<const std::uint8_t> data)
    {
        Reader r(data);
        r.magic("DBQC");
        r.version();
        const std::uint32_t count = r.u32("entry count");
        struct Idx {
            std::string name;
            EntryKind kind;
            std::uint64_t offset, size;
            std::size_t at;
        };
        std::vector<Idx> idx;
        for (std::uint32_t i = 0; i < count; ++i) {
            Idx e;
            e.at = r.pos();
            const auto len = r.u16("name length");
            const auto name = r.bytes(len, "entry name");
            e.name.assign(name.begin(), name.end());
            const std::size_t kind_at = r.pos();
            const auto kind = r.u8("entry kind");
            if (kind < 1 || kind > 3)
                throw FormatError(FormatErrorKind::bad_header, kind_at, "unknown entry kind " + std::to_string(kind));
            e.kind = static_cast<EntryKind>(kind);
            e.offset = r.u64("entry offset");
            e.size = r.u64("entry size");
            idx.push_back(std::move(e));
        }
        Checkpoint c;
        std::uint64_t expect = r.pos();
        for (const auto& e : idx) {
            if (e.offset != expect)
                throw FormatError(FormatErrorKind::bad_header, e.at, "entry '" + e.name + "' is not contiguous");
            if (e.size > data.size() - e.offset)
                throw FormatError(FormatErrorKind::truncated, static_cast<std::size_t>(e.offset),
                                  "entry '" + e.name + "' extends past the end");
            const auto body = data.subspan(static_cast<std::size_t>(e.offset), static_cast<std::size_t>(e.size));
            if (c.find(e.name)) throw FormatError(FormatErrorKind::bad_header, e.at, "duplicate entry '" + e.name + "'");
            c.entries_.push_back({e.name, e.kind, {body.begin(), body.end()}});
            expect += e.size;
        }
        if (expect != data.size())
            throw FormatError(FormatErrorKind::trailing_data, static_cast<std::size_t>(expect),
                              std::to_string(data.size() - expect) + " unexpected bytes");
        return c;
    }

    bool operator==(const Checkpoint&) const = default;

private:
    std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Files

inline std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> data)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

/// Weight matrix file: u64 rows | u64 cols | rows*cols f64, row-major.
struct WeightMatrix {
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<double> data;

    std::span<const double> row(std::size_t r) const
    {
        return std::span<const double>(data).subspan(r * cols, cols);
    }
};

inline std::vector<std::uint8_t> encode_weights(const WeightMatrix& m)
{
    if (m.data.size() != m.rows * m.cols) throw std::invalid_argument("weight matrix data size does not match shape");
    Writer w;
    w.u64(m.rows);
    w.u64(m.cols);
    for (double x : m.data) w.f64(x);
    return w.take();
}

inline WeightMatrix decode_weights(std::span<const std::uint8_t> data)
{
    Reader r(data);
    WeightMatrix m;
    m.rows = r.u64("row count");
    m.cols = r.u64("column count");
    if (m.cols != 0 && m.rows > r.remaining() / 8 / m.cols)
        throw FormatError(FormatErrorKind::truncated, 16, "shape " + std::to_string(m.rows) + "x" +
                                                             std::to_string(m.cols) + " does not fit the file");
    m.data.resize(static_cast<std::size_t>(m.rows * m.cols));
    for (auto& x : m.data) x = r.f64("weight value");
    r.finish();
    return m;
}

} // namespace dbq::serde
