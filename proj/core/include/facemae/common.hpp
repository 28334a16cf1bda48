#pragma once
// Shared plumbing: error types, seeded RNG, and the small dense-math kernels
// every module leans on. Everything here is deterministic for a fixed seed.

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fm {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes, so keep the taxonomy stable:
// ConfigError -> 2, IoError/FormatError -> 3, NumericError -> 4.
// ---------------------------------------------------------------------------
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};
struct InvariantError : Error {
    explicit InvariantError(const std::string& msg) : Error(msg) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Seeding and random numbers.
//
// splitmix64 is the one generator used everywhere; std distributions are
// implementation-defined, so uniform/gaussian draws are synthesized by hand
// to keep outputs identical across toolchains.
// ---------------------------------------------------------------------------
inline uint64_t sm64_scramble(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derive a child seed from (parent, index). Used for per-identity,
// per-image, per-epoch, per-step sub-streams.
inline uint64_t mix64(uint64_t seed, uint64_t index) {
    return sm64_scramble(seed + 0x9E3779B97F4A7C15ULL * (index + 1));
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return sm64_scramble(state_);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased enough for our ranges (bias < 2^-40 for n < 2^24)
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // inclusive integer range
    int64_t range_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // standard normal via Box-Muller; second draw cached
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Fisher-Yates. shuffle_prefix(v, k, rng) leaves a uniform k-subset (in
// uniform order) in v[0..k); the full shuffle is the k = v.size() case.
template <typename T>
void shuffle_prefix(std::vector<T>& v, size_t k, Rng& rng) {
    const size_t n = v.size();
    if (n == 0) return;
    if (k > n) k = n;
    const size_t last = (k == n) ? n - 1 : k;
    for (size_t i = 0; i < last; ++i) {
        size_t j = i + static_cast<size_t>(rng.below(n - i));
        std::swap(v[i], v[j]);
    }
}

template <typename T>
void shuffle_all(std::vector<T>& v, Rng& rng) {
    shuffle_prefix(v, v.size(), rng);
}

// ---------------------------------------------------------------------------
// Dense kernels (row-major, double). Matrices are flat vectors; shapes are
// passed explicitly. These are the only hot loops in the project.
// ---------------------------------------------------------------------------

// Dot product with eight independent accumulator chains. The fixed
// summation order makes results reproducible while still vectorizing.
inline double dot(const double* a, const double* b, size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i + 0] * b[i + 0];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    double tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

// C[m x n] += A[m x k] * B[k x n]
inline void matmul_nn(const double* A, const double* B, double* C,
                      size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = A + i * k;
        double* ci = C + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double a = ai[p];
            const double* bp = B + p * n;
            for (size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
        }
    }
}

// C[m x n] += A[m x k] * B^T, with B stored [n x k]
inline void matmul_nt(const double* A, const double* B, double* C,
                      size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = A + i * k;
        double* ci = C + i * n;
        for (size_t j = 0; j < n; ++j) ci[j] += dot(ai, B + j * k, k);
    }
}

// C[m x n] += A^T * B, with A stored [k x m], B stored [k x n]
inline void matmul_tn(const double* A, const double* B, double* C,
                      size_t m, size_t k, size_t n) {
    for (size_t p = 0; p < k; ++p) {
        const double* ap = A + p * m;
        const double* bp = B + p * n;
        for (size_t i = 0; i < m; ++i) {
            const double a = ap[i];
            double* ci = C + i * n;
            for (size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
        }
    }
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace fm
