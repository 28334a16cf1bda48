#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "facemae/common.hpp"

using namespace fm;

TEST_CASE("mix64 derives distinct deterministic substreams") {
    CHECK(mix64(1, 0) == mix64(1, 0));
    std::set<uint64_t> seen;
    for (uint64_t seed = 0; seed < 8; ++seed)
        for (uint64_t idx = 0; idx < 64; ++idx) seen.insert(mix64(seed, idx));
    CHECK(seen.size() == 8 * 64);  // no collisions across this grid
    CHECK(mix64(0, 0) != 0);
}

TEST_CASE("Rng streams are deterministic and disjoint per seed") {
    Rng a(42), b(42), c(43);
    bool same = true, differ = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.next_u64();
        same = same && (va == b.next_u64());
        differ = differ || (va != c.next_u64());
    }
    CHECK(same);
    CHECK(differ);
}

TEST_CASE("uniform stays in [0,1) with a sane mean") {
    Rng rng(7);
    double sum = 0;
    for (int i = 0; i < 100000; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / 100000 - 0.5) < 0.01);
}

TEST_CASE("range_int is inclusive and covers both endpoints") {
    Rng rng(3);
    bool lo_hit = false, hi_hit = false;
    for (int i = 0; i < 1000; ++i) {
        int64_t v = rng.range_int(-2, 2);
        REQUIRE(v >= -2);
        REQUIRE(v <= 2);
        lo_hit = lo_hit || v == -2;
        hi_hit = hi_hit || v == 2;
    }
    CHECK(lo_hit);
    CHECK(hi_hit);
}

TEST_CASE("gaussian has near-standard moments") {
    Rng rng(11);
    const int n = 200000;
    double s1 = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        double g = rng.gaussian();
        s1 += g;
        s2 += g * g;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("gaussian is reproducible including the cached spare") {
    Rng a(5), b(5);
    for (int i = 0; i < 20; ++i) CHECK(a.gaussian() == b.gaussian());
}

TEST_CASE("shuffle_all permutes, deterministically per seed") {
    std::vector<int> v(100);
    for (int i = 0; i < 100; ++i) v[i] = i;
    std::vector<int> w = v;
    Rng r1(9), r2(9);
    shuffle_all(v, r1);
    shuffle_all(w, r2);
    CHECK(v == w);
    CHECK(v != std::vector<int>(v.size(), 0));
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 100; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("shuffle_prefix draws a uniform-ish k-subset") {
    // every element should land in the prefix with frequency ~ k/n
    const size_t n = 10, k = 3;
    std::vector<int> counts(n, 0);
    for (uint64_t seed = 0; seed < 6000; ++seed) {
        std::vector<int> v(n);
        for (size_t i = 0; i < n; ++i) v[i] = int(i);
        Rng rng(seed);
        shuffle_prefix(v, k, rng);
        for (size_t i = 0; i < k; ++i) counts[v[i]]++;
    }
    for (size_t i = 0; i < n; ++i) {
        double freq = counts[i] / 6000.0;
        CHECK(freq > 0.25);  // expected 0.3
        CHECK(freq < 0.35);
    }
}

TEST_CASE("dot matches a naive sum and is bit-stable") {
    Rng rng(13);
    for (size_t n : {0ul, 1ul, 7ul, 8ul, 9ul, 64ul, 129ul}) {
        std::vector<double> a(n), b(n);
        for (auto& x : a) x = rng.gaussian();
        for (auto& x : b) x = rng.gaussian();
        double naive = 0;
        for (size_t i = 0; i < n; ++i) naive += a[i] * b[i];
        const double d1 = dot(a.data(), b.data(), n);
        const double d2 = dot(a.data(), b.data(), n);
        CHECK(d1 == d2);
        CHECK(d1 == doctest::Approx(naive).epsilon(1e-12));
    }
}

TEST_CASE("matmul variants agree with the naive triple loop and accumulate") {
    const size_t m = 3, k = 5, n = 4;
    Rng rng(17);
    std::vector<double> A(m * k), Bn(k * n), Bt(n * k), At(k * m);
    for (auto& x : A) x = rng.gaussian();
    for (auto& x : Bn) x = rng.gaussian();
    // Bt = Bn^T, At = A^T
    for (size_t i = 0; i < k; ++i)
        for (size_t j = 0; j < n; ++j) Bt[j * k + i] = Bn[i * n + j];
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < k; ++j) At[j * m + i] = A[i * k + j];

    std::vector<double> ref(m * n, 0.5);  // seed C with 0.5 to check += semantics
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
            for (size_t p = 0; p < k; ++p) ref[i * n + j] += A[i * k + p] * Bn[p * n + j];

    std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5), c3(m * n, 0.5);
    matmul_nn(A.data(), Bn.data(), c1.data(), m, k, n);
    matmul_nt(A.data(), Bt.data(), c2.data(), m, k, n);
    matmul_tn(At.data(), Bn.data(), c3.data(), m, k, n);
    for (size_t i = 0; i < m * n; ++i) {
        CHECK(c1[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        CHECK(c2[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        CHECK(c3[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("all_finite flags NaN and infinity") {
    std::vector<double> ok{1.0, -2.0, 0.0};
    CHECK(all_finite(ok));
    std::vector<double> bad{1.0, std::nan("")};
    CHECK(!all_finite(bad));
    std::vector<float> inf{1.0f, std::numeric_limits<float>::infinity()};
    CHECK(!all_finite(inf));
}
