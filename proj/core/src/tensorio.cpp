#include "facemae/tensorio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace fm {

std::vector<double> Dataset::image_f64(size_t i) const {
    const float* p = image(i);
    return std::vector<double>(p, p + image_size());
}

void Dataset::validate() const {
    if (labels.size() != n)
        throw InvariantError("dataset: labels length " + std::to_string(labels.size()) +
                             " != n_images " + std::to_string(n));
    if (pixels.size() != size_t(n) * image_size())
        throw InvariantError("dataset: pixel buffer size mismatch");
    for (float p : pixels)
        if (!(p >= 0.0f && p <= 1.0f))
            throw InvariantError("dataset: pixel value out of [0,1]");
}

std::vector<double> EmbeddingSet::row_f64(size_t i) const {
    const float* p = row(i);
    return std::vector<double>(p, p + dim);
}

void EmbeddingSet::validate() const {
    if (labels.size() != n)
        throw InvariantError("embeddings: labels length != n");
    if (rows.size() != size_t(n) * dim)
        throw InvariantError("embeddings: row buffer size mismatch");
    if (!all_finite(rows)) throw InvariantError("embeddings: non-finite entry");
}

Tensor& TensorMap::add(const std::string& name, std::vector<uint32_t> dims) {
    if (has(name)) throw InvariantError("tensor map: duplicate name " + name);
    items.emplace_back(name, Tensor{std::move(dims), {}});
    Tensor& t = items.back().second;
    t.v.assign(t.size(), 0.0);
    return t;
}

Tensor& TensorMap::at(const std::string& name) {
    for (auto& [k, t] : items)
        if (k == name) return t;
    throw InvariantError("tensor map: missing tensor " + name);
}

const Tensor& TensorMap::at(const std::string& name) const {
    for (auto& [k, t] : items)
        if (k == name) return t;
    throw InvariantError("tensor map: missing tensor " + name);
}

bool TensorMap::has(const std::string& name) const {
    for (auto& [k, t] : items)
        if (k == name) return true;
    return false;
}

size_t TensorMap::n_params() const {
    size_t s = 0;
    for (auto& [k, t] : items) s += t.v.size();
    return s;
}

// ---------------------------------------------------------------------------
// Little-endian byte plumbing. Files are read whole and parsed with an
// exact-length cursor so truncation and trailing garbage are both caught.
// ---------------------------------------------------------------------------
namespace {

void put_u16(std::string& out, uint16_t v) {
    out.push_back(char(v & 0xFF));
    out.push_back(char((v >> 8) & 0xFF));
}
void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
void put_f32(std::string& out, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Cursor {
    const uint8_t* p;
    size_t len;
    size_t pos = 0;
    std::string what;

    Cursor(const std::string& buf, std::string w)
        : p(reinterpret_cast<const uint8_t*>(buf.data())), len(buf.size()), what(std::move(w)) {}

    void need(size_t k) const {
        if (pos + k > len) throw FormatError(what + ": truncated file");
    }
    uint8_t u8() {
        need(1);
        return p[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = uint16_t(p[pos]) | uint16_t(p[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
    void bytes(void* dst, size_t k) {
        need(k);
        std::memcpy(dst, p + pos, k);
        pos += k;
    }
    void expect_end() const {
        if (pos != len)
            throw FormatError(what + ": declared lengths disagree with file size (" +
                              std::to_string(len - pos) + " trailing bytes)");
    }
};

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("read failed: " + path);
    return buf;
}

void check_magic(Cursor& c, const char* magic) {
    char m[4];
    c.bytes(m, 4);
    if (std::memcmp(m, magic, 4) != 0)
        throw FormatError(c.what + ": bad magic (expected " + std::string(magic, 4) + ")");
}

void check_version(Cursor& c, uint16_t expected) {
    uint16_t v = c.u16();
    if (v != expected)
        throw FormatError(c.what + ": unsupported version " + std::to_string(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// FMDS: "FMDS", version u16=1, dtype u8=1 (f32 in [0,1]), reserved u8=0,
// N u32, H u16, W u16, C u16, N*u32 labels, N*H*W*C f32.
// ---------------------------------------------------------------------------
void write_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::string out;
    out.reserve(18 + 4 * ds.labels.size() + 4 * ds.pixels.size());
    out += "FMDS";
    put_u16(out, 1);
    out.push_back(char(1));  // dtype 1 = f32
    out.push_back(char(0));  // reserved
    put_u32(out, ds.n);
    put_u16(out, ds.height);
    put_u16(out, ds.width);
    put_u16(out, ds.channels);
    for (uint32_t l : ds.labels) put_u32(out, l);
    for (float p : ds.pixels) put_f32(out, p);
    write_file(path, out);
}

Dataset read_dataset(const std::string& path) {
    std::string buf = read_file(path);
    Cursor c(buf, "FMDS");
    check_magic(c, "FMDS");
    check_version(c, 1);
    uint8_t dtype = c.u8();
    if (dtype != 1) throw FormatError("FMDS: unsupported dtype " + std::to_string(dtype));
    c.u8();  // reserved
    Dataset ds;
    ds.n = c.u32();
    ds.height = c.u16();
    ds.width = c.u16();
    ds.channels = c.u16();
    ds.labels.resize(ds.n);
    for (uint32_t i = 0; i < ds.n; ++i) ds.labels[i] = c.u32();
    size_t count = size_t(ds.n) * ds.image_size();
    ds.pixels.resize(count);
    for (size_t i = 0; i < count; ++i) ds.pixels[i] = c.f32();
    c.expect_end();
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// FMEB: "FMEB", version u16=1, N u32, d u32, N*u32 labels, N*d f32.
// ---------------------------------------------------------------------------
void write_embeddings(const EmbeddingSet& es, const std::string& path) {
    es.validate();
    std::string out;
    out.reserve(14 + 4 * es.labels.size() + 4 * es.rows.size());
    out += "FMEB";
    put_u16(out, 1);
    put_u32(out, es.n);
    put_u32(out, es.dim);
    for (uint32_t l : es.labels) put_u32(out, l);
    for (float x : es.rows) put_f32(out, x);
    write_file(path, out);
}

EmbeddingSet read_embeddings(const std::string& path) {
    std::string buf = read_file(path);
    Cursor c(buf, "FMEB");
    check_magic(c, "FMEB");
    check_version(c, 1);
    EmbeddingSet es;
    es.n = c.u32();
    es.dim = c.u32();
    es.labels.resize(es.n);
    for (uint32_t i = 0; i < es.n; ++i) es.labels[i] = c.u32();
    size_t count = size_t(es.n) * es.dim;
    es.rows.resize(count);
    for (size_t i = 0; i < count; ++i) es.rows[i] = c.f32();
    c.expect_end();
    es.validate();
    return es;
}

// ---------------------------------------------------------------------------
// FMMK: "FMMK", version u16=1, n_images u32, n_patches u32, then per image
// ceil(n_patches/8) bytes; bit j (LSB-first) of row i set <=> patch j masked.
// ---------------------------------------------------------------------------
void write_masks(const std::vector<MaskPattern>& patterns, const std::string& path) {
    uint32_t np = patterns.empty() ? 0 : patterns[0].n_patches;
    for (const auto& p : patterns) {
        if (p.n_patches != np)
            throw InvariantError("FMMK: heterogeneous n_patches (" + std::to_string(np) +
                                 " vs " + std::to_string(p.n_patches) + ")");
        for (uint32_t idx : p.masked)
            if (idx >= np) throw InvariantError("FMMK: masked index out of range");
    }
    const size_t row_bytes = (np + 7) / 8;
    std::string out;
    out.reserve(14 + row_bytes * patterns.size());
    out += "FMMK";
    put_u16(out, 1);
    put_u32(out, uint32_t(patterns.size()));
    put_u32(out, np);
    std::vector<uint8_t> row(row_bytes);
    for (const auto& p : patterns) {
        std::fill(row.begin(), row.end(), 0);
        for (uint32_t idx : p.masked) row[idx / 8] |= uint8_t(1u << (idx % 8));
        out.append(reinterpret_cast<const char*>(row.data()), row_bytes);
    }
    write_file(path, out);
}

std::vector<MaskPattern> read_masks(const std::string& path) {
    std::string buf = read_file(path);
    Cursor c(buf, "FMMK");
    check_magic(c, "FMMK");
    check_version(c, 1);
    uint32_t n_images = c.u32();
    uint32_t np = c.u32();
    const size_t row_bytes = (np + 7) / 8;
    std::vector<MaskPattern> patterns;
    patterns.reserve(n_images);
    std::vector<uint8_t> row(row_bytes);
    for (uint32_t i = 0; i < n_images; ++i) {
        c.bytes(row.data(), row_bytes);
        MaskPattern p;
        p.n_patches = np;
        p.strategy = MaskStrategy::explicit_set;
        for (uint32_t j = 0; j < np; ++j)
            if (row[j / 8] & (1u << (j % 8))) p.masked.push_back(j);
        p.ratio = np ? double(p.masked.size()) / np : 0.0;
        patterns.push_back(std::move(p));
    }
    c.expect_end();
    return patterns;
}

// ---------------------------------------------------------------------------
// FMPR: "FMPR", version u16=1, count u32, then per tensor: name length u16,
// name bytes, rank u8, dims u32*rank, prod(dims) f32.
// ---------------------------------------------------------------------------
void write_params(const TensorMap& params, const std::string& path) {
    std::string out;
    out += "FMPR";
    put_u16(out, 1);
    put_u32(out, uint32_t(params.items.size()));
    for (const auto& [name, t] : params.items) {
        if (name.size() > 0xFFFF) throw InvariantError("FMPR: tensor name too long");
        if (t.v.size() != t.size()) throw InvariantError("FMPR: tensor size mismatch: " + name);
        put_u16(out, uint16_t(name.size()));
        out += name;
        if (t.dims.size() > 0xFF) throw InvariantError("FMPR: rank too large: " + name);
        out.push_back(char(t.dims.size()));
        for (uint32_t d : t.dims) put_u32(out, d);
        for (double x : t.v) put_f32(out, float(x));
    }
    write_file(path, out);
}

TensorMap read_params(const std::string& path) {
    std::string buf = read_file(path);
    Cursor c(buf, "FMPR");
    check_magic(c, "FMPR");
    check_version(c, 1);
    uint32_t count = c.u32();
    TensorMap map;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = c.u16();
        std::string name(name_len, '\0');
        c.bytes(name.data(), name_len);
        uint8_t rank = c.u8();
        std::vector<uint32_t> dims(rank);
        for (uint8_t r = 0; r < rank; ++r) dims[r] = c.u32();
        Tensor& t = map.add(name, dims);
        for (size_t j = 0; j < t.v.size(); ++j) t.v[j] = double(c.f32());
    }
    c.expect_end();
    return map;
}

uint32_t dataset_fingerprint(const Dataset& ds) {
    uint32_t h = 2166136261u;
    auto feed = [&h](const void* data, size_t len) {
        const uint8_t* b = static_cast<const uint8_t*>(data);
        for (size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 16777619u;
        }
    };
    feed(ds.labels.data(), ds.labels.size() * sizeof(uint32_t));
    feed(ds.pixels.data(), ds.pixels.size() * sizeof(float));
    return h;
}

}  // namespace fm
