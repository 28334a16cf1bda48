#pragma once
// Membership privacy leakage via exact top-K cosine retrieval:
//   R(A, S, K) = (1/|A|) sum_i 1(z_i in T(a_i, S, K))
// Gallery rows are L2-normalized at index build; top_k is exact with ties
// broken toward the lower gallery row index.

#include <cstdint>
#include <utility>
#include <vector>

#include "facemae/tensorio.hpp"

namespace fm {

struct RetrievalIndex {
    uint32_t n = 0;
    uint32_t dim = 0;
    std::vector<uint32_t> labels;
    std::vector<double> rows;  // n x dim, unit rows

    const double* row(size_t i) const { return rows.data() + i * dim; }
};

struct RiskReport {
    uint32_t k = 0;
    double risk = 0.0;
    uint32_t n_queries = 0;
    std::vector<uint8_t> hits;  // per query, order preserved
    std::vector<std::pair<uint32_t, double>> curve;  // (n_ids, risk)
};

// normalizes a copy of S; throws on zero rows
RetrievalIndex build_index(const EmbeddingSet& s);

// labels of the K nearest gallery rows by cosine, exact; query need not be
// normalized (scale-invariant)
std::vector<uint32_t> top_k(const RetrievalIndex& index, const double* query,
                            uint32_t dim, uint32_t k);

RiskReport leakage_risk(const EmbeddingSet& a, const RetrievalIndex& index, uint32_t k,
                        int n_threads = 1);

// For each count: subsample that many shared identities (seeded), restrict
// both sides to them, report (count, risk). Original row order is preserved.
std::vector<std::pair<uint32_t, double>> risk_curve(const EmbeddingSet& a,
                                                    const EmbeddingSet& s, uint32_t k,
                                                    const std::vector<uint32_t>& id_counts,
                                                    uint64_t seed, int n_threads = 1);

}  // namespace fm
