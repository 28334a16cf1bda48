#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <vector>

#include "facemae/tensorio.hpp"
#include "testutil.hpp"

using namespace fm;

namespace {

Dataset rand_dataset(Rng& rng) {
    Dataset ds;
    ds.n = uint32_t(rng.range_int(0, 6));
    ds.height = uint16_t(rng.range_int(1, 12));
    ds.width = uint16_t(rng.range_int(1, 12));
    ds.channels = uint16_t(rng.range_int(1, 3));
    ds.labels.resize(ds.n);
    ds.pixels.resize(size_t(ds.n) * ds.image_size());
    for (auto& l : ds.labels) l = uint32_t(rng.range_int(0, 1 << 20));
    for (auto& p : ds.pixels) p = float(rng.uniform());
    return ds;
}

EmbeddingSet rand_embeddings(Rng& rng) {
    EmbeddingSet es;
    es.n = uint32_t(rng.range_int(0, 8));
    es.dim = uint32_t(rng.range_int(1, 24));
    es.labels.resize(es.n);
    es.rows.resize(size_t(es.n) * es.dim);
    for (auto& l : es.labels) l = uint32_t(rng.range_int(0, 100));
    for (auto& r : es.rows) r = float(rng.gaussian() * 10.0);
    return es;
}

std::vector<MaskPattern> rand_masks(Rng& rng) {
    const uint32_t np = uint32_t(rng.range_int(1, 64));
    const size_t count = size_t(rng.range_int(0, 5));
    std::vector<MaskPattern> out;
    for (size_t i = 0; i < count; ++i)
        out.push_back(sample_random_mask(np, rng.uniform() * 0.9, rng.next_u64()));
    return out;
}

TensorMap rand_params(Rng& rng) {
    TensorMap tm;
    const int k = int(rng.range_int(1, 5));
    for (int t = 0; t < k; ++t) {
        std::vector<uint32_t> dims;
        const int rank = int(rng.range_int(1, 3));
        for (int r = 0; r < rank; ++r) dims.push_back(uint32_t(rng.range_int(1, 6)));
        Tensor& ten = tm.add("t" + std::to_string(t), dims);
        for (auto& v : ten.v) v = rng.gaussian();
    }
    return tm;
}

std::vector<char> slurp_bytes(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<char>(std::istreambuf_iterator<char>(f), {});
}

void dump_bytes(const std::string& p, const std::vector<char>& b) {
    std::ofstream f(p, std::ios::binary);
    f.write(b.data(), std::streamsize(b.size()));
}

}  // namespace

TEST_CASE("FMDS roundtrip property, 200 random instances") {
    tu::TempDir td("fm-tio");
    Rng rng(101);
    for (int it = 0; it < 200; ++it) {
        Dataset ds = rand_dataset(rng);
        const std::string p = td.file("d.fmds");
        write_dataset(ds, p);
        Dataset back = read_dataset(p);
        CHECK(back.n == ds.n);
        CHECK(back.height == ds.height);
        CHECK(back.width == ds.width);
        CHECK(back.channels == ds.channels);
        CHECK(back.labels == ds.labels);
        CHECK(back.pixels == ds.pixels);  // bit-exact f32
    }
}

TEST_CASE("FMEB roundtrip property incl. n=0, 200 random instances") {
    tu::TempDir td("fm-tio");
    Rng rng(102);
    for (int it = 0; it < 200; ++it) {
        EmbeddingSet es = rand_embeddings(rng);
        const std::string p = td.file("e.fmeb");
        write_embeddings(es, p);
        EmbeddingSet back = read_embeddings(p);
        CHECK(back.n == es.n);
        CHECK(back.dim == es.dim);
        CHECK(back.labels == es.labels);
        CHECK(back.rows == es.rows);
    }
    EmbeddingSet empty;
    empty.dim = 4;
    const std::string p = td.file("e0.fmeb");
    write_embeddings(empty, p);
    EmbeddingSet back = read_embeddings(p);
    CHECK(back.n == 0);
    CHECK(back.dim == 4);
}

TEST_CASE("FMMK roundtrip property, 200 random instances") {
    tu::TempDir td("fm-tio");
    Rng rng(103);
    for (int it = 0; it < 200; ++it) {
        std::vector<MaskPattern> ms = rand_masks(rng);
        const std::string p = td.file("m.fmmk");
        write_masks(ms, p);
        std::vector<MaskPattern> back = read_masks(p);
        REQUIRE(back.size() == ms.size());
        for (size_t i = 0; i < ms.size(); ++i) {
            CHECK(back[i].n_patches == ms[i].n_patches);
            CHECK(back[i].masked == ms[i].masked);
            // strategy/ratio/seed are provenance, not serialized
            CHECK(back[i].strategy == MaskStrategy::explicit_set);
        }
    }
}

TEST_CASE("FMPR roundtrip property, 200 random instances") {
    tu::TempDir td("fm-tio");
    Rng rng(104);
    for (int it = 0; it < 200; ++it) {
        TensorMap tm = rand_params(rng);
        const std::string p = td.file("p.fmpr");
        write_params(tm, p);
        TensorMap back = read_params(p);
        REQUIRE(back.items.size() == tm.items.size());
        for (size_t t = 0; t < tm.items.size(); ++t) {
            CHECK(back.items[t].first == tm.items[t].first);
            CHECK(back.items[t].second.dims == tm.items[t].second.dims);
            // storage is f32: values survive exactly when written from f32
            REQUIRE(back.items[t].second.v.size() == tm.items[t].second.v.size());
            for (size_t j = 0; j < back.items[t].second.v.size(); ++j)
                CHECK(float(back.items[t].second.v[j]) ==
                      float(tm.items[t].second.v[j]));
        }
        // f32 re-write is bit-stable
        const std::string p2 = td.file("p2.fmpr");
        write_params(back, p2);
        CHECK(slurp_bytes(p) == slurp_bytes(p2));
    }
}

TEST_CASE("FMDS byte layout: one 8x8x1 image is 278 bytes, fields LE") {
    tu::TempDir td("fm-tio");
    Dataset ds;
    ds.n = 1;
    ds.height = 8;
    ds.width = 8;
    ds.channels = 1;
    ds.labels = {7};
    ds.pixels.assign(64, 0.5f);
    const std::string p = td.file("one.fmds");
    write_dataset(ds, p);
    const auto b = slurp_bytes(p);
    // 4 magic + 2 ver + 1 dtype + 1 reserved + 4 n + 2+2+2 hwc + 4 label + 64*4
    REQUIRE(b.size() == 278);
    CHECK(std::string(b.data(), 4) == "FMDS");
    CHECK(uint8_t(b[4]) == 1);  // version LE low byte
    CHECK(uint8_t(b[5]) == 0);
    CHECK(uint8_t(b[6]) == 1);  // dtype f32
    CHECK(uint8_t(b[7]) == 0);  // reserved
    CHECK(uint8_t(b[8]) == 1);  // n
    CHECK(uint8_t(b[12]) == 8);  // height
    CHECK(uint8_t(b[14]) == 8);  // width
    CHECK(uint8_t(b[16]) == 1);  // channels
    CHECK(uint8_t(b[18]) == 7);  // label
}

TEST_CASE("FMMK byte layout: 2 images x 16 patches -> 2-byte rows, LSB-first") {
    tu::TempDir td("fm-tio");
    MaskPattern a;
    a.n_patches = 16;
    a.masked = {0, 3, 9};  // bits 0,3 of byte0; bit 1 of byte1
    MaskPattern b;
    b.n_patches = 16;
    b.masked = {15};  // bit 7 of byte1
    const std::string p = td.file("two.fmmk");
    write_masks({a, b}, p);
    const auto bytes = slurp_bytes(p);
    // 4 magic + 2 ver + 4 n_images + 4 n_patches + 2*2 payload
    REQUIRE(bytes.size() == 18);
    CHECK(std::string(bytes.data(), 4) == "FMMK");
    CHECK(uint8_t(bytes[6]) == 2);    // n_images
    CHECK(uint8_t(bytes[10]) == 16);  // n_patches
    CHECK(uint8_t(bytes[14]) == 0b00001001);
    CHECK(uint8_t(bytes[15]) == 0b00000010);
    CHECK(uint8_t(bytes[16]) == 0);
    CHECK(uint8_t(bytes[17]) == 0b10000000);
}

TEST_CASE("corrupt files are rejected with precise errors") {
    tu::TempDir td("fm-tio");
    Rng rng(105);
    Dataset ds = rand_dataset(rng);
    ds.n = 2;
    ds.labels.assign(2, 1);
    ds.pixels.assign(size_t(2) * ds.image_size(), 0.25f);
    const std::string p = td.file("d.fmds");
    write_dataset(ds, p);
    auto good = slurp_bytes(p);

    SUBCASE("bad magic") {
        auto bad = good;
        bad[0] = 'X';
        bad[1] = 'X';
        dump_bytes(p, bad);
        CHECK_THROWS_AS((void)read_dataset(p), FormatError);
    }
    SUBCASE("unsupported version") {
        auto bad = good;
        bad[4] = 9;
        dump_bytes(p, bad);
        CHECK_THROWS_AS((void)read_dataset(p), FormatError);
    }
    SUBCASE("truncation at every prefix boundary") {
        for (size_t cut : {size_t(3), size_t(7), size_t(13), good.size() - 1}) {
            dump_bytes(p, std::vector<char>(good.begin(), good.begin() + cut));
            CHECK_THROWS_AS((void)read_dataset(p), FormatError);
        }
    }
    SUBCASE("trailing bytes") {
        auto bad = good;
        bad.push_back(0);
        dump_bytes(p, bad);
        CHECK_THROWS_AS((void)read_dataset(p), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS((void)read_dataset(td.file("nope.fmds")), IoError);
    }
}

TEST_CASE("invalid in-memory data refuses to serialize or load") {
    tu::TempDir td("fm-tio");
    Dataset ds;
    ds.n = 1;
    ds.height = 2;
    ds.width = 2;
    ds.channels = 1;
    ds.labels = {0};
    ds.pixels = {0.0f, 0.5f, 1.0f, 1.5f};  // 1.5 out of range
    CHECK_THROWS_AS(write_dataset(ds, td.file("bad.fmds")), InvariantError);
    ds.pixels[3] = std::nanf("");
    CHECK_THROWS_AS(write_dataset(ds, td.file("bad.fmds")), InvariantError);

    // a crafted file with an out-of-range pixel is rejected on read too
    ds.pixels[3] = 0.75f;
    const std::string p = td.file("ok.fmds");
    write_dataset(ds, p);
    auto bytes = slurp_bytes(p);
    const float bad = 1.5f;
    std::memcpy(bytes.data() + bytes.size() - 4, &bad, 4);
    dump_bytes(p, bytes);
    CHECK_THROWS_AS((void)read_dataset(p), Error);

    EmbeddingSet es;
    es.n = 1;
    es.dim = 2;
    es.labels = {0};
    es.rows = {1.0f, std::numeric_limits<float>::infinity()};
    CHECK_THROWS_AS(write_embeddings(es, td.file("bad.fmeb")), InvariantError);

    MaskPattern ok;
    ok.n_patches = 4;
    MaskPattern other;
    other.n_patches = 8;
    CHECK_THROWS_AS(write_masks({ok, other}, td.file("bad.fmmk")), InvariantError);
    MaskPattern oob;
    oob.n_patches = 4;
    oob.masked = {4};
    CHECK_THROWS_AS(write_masks({oob}, td.file("bad.fmmk")), InvariantError);
}

TEST_CASE("dataset_fingerprint keyed to labels and pixels") {
    Rng rng(106);
    Dataset ds = rand_dataset(rng);
    while (ds.n == 0) ds = rand_dataset(rng);
    const uint32_t fp = dataset_fingerprint(ds);
    CHECK(dataset_fingerprint(ds) == fp);  // stable
    Dataset d2 = ds;
    d2.pixels[0] = float(d2.pixels[0] < 0.5f ? d2.pixels[0] + 0.25f : d2.pixels[0] - 0.25f);
    CHECK(dataset_fingerprint(d2) != fp);
    Dataset d3 = ds;
    d3.labels[0] ^= 1;
    CHECK(dataset_fingerprint(d3) != fp);
}
