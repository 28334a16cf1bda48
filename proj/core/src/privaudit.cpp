#include "facemae/privaudit.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace fm {

RetrievalIndex build_index(const EmbeddingSet& s) {
    s.validate();
    if (s.n < 1) throw InvariantError("cannot index an empty embedding set");
    RetrievalIndex idx;
    idx.n = s.n;
    idx.dim = s.dim;
    idx.labels = s.labels;
    idx.rows.resize(size_t(s.n) * s.dim);
    for (size_t i = 0; i < s.n; ++i) {
        const float* src = s.row(i);
        double* dst = idx.rows.data() + i * s.dim;
        for (size_t j = 0; j < s.dim; ++j) dst[j] = double(src[j]);
        const double norm = std::sqrt(dot(dst, dst, s.dim));
        if (norm == 0.0)
            throw InvariantError("gallery row " + std::to_string(i) + " is zero");
        const double inv = 1.0 / norm;
        for (size_t j = 0; j < s.dim; ++j) dst[j] *= inv;
    }
    return idx;
}

namespace {

// best-first partial selection; ties prefer the lower gallery index
struct TopSel {
    uint32_t k = 0;
    uint32_t filled = 0;
    std::vector<double> sim;
    std::vector<uint32_t> idx;

    void reset(uint32_t K) {
        k = K;
        filled = 0;
        sim.assign(K, 0.0);
        idx.assign(K, 0);
    }
    static bool better(double s1, uint32_t i1, double s2, uint32_t i2) {
        return s1 > s2 || (s1 == s2 && i1 < i2);
    }
    void offer(double s, uint32_t i) {
        if (filled == k && !better(s, i, sim[filled - 1], idx[filled - 1])) return;
        uint32_t pos = filled < k ? filled : k - 1;
        while (pos > 0 && better(s, i, sim[pos - 1], idx[pos - 1])) {
            sim[pos] = sim[pos - 1];
            idx[pos] = idx[pos - 1];
            --pos;
        }
        sim[pos] = s;
        idx[pos] = i;
        if (filled < k) ++filled;
    }
};

void normalize_query(const float* src, uint32_t dim, double* dst) {
    for (size_t j = 0; j < dim; ++j) dst[j] = double(src[j]);
    const double norm = std::sqrt(dot(dst, dst, dim));
    if (norm > 0.0) {
        const double inv = 1.0 / norm;
        for (size_t j = 0; j < dim; ++j) dst[j] *= inv;
    }
}

constexpr size_t kQueryBlock = 16;

// exact top-k for a block of normalized queries; gallery is streamed once
// per block so the query rows stay cache-resident
void topk_block(const RetrievalIndex& index, const double* queries, size_t nq,
                std::vector<TopSel>& sel, uint32_t k) {
    for (size_t q = 0; q < nq; ++q) sel[q].reset(k);
    const uint32_t d = index.dim;
    for (uint32_t g = 0; g < index.n; ++g) {
        const double* grow = index.row(g);
        for (size_t q = 0; q < nq; ++q)
            sel[q].offer(dot(grow, queries + q * d, d), g);
    }
}

}  // namespace

std::vector<uint32_t> top_k(const RetrievalIndex& index, const double* query,
                            uint32_t dim, uint32_t k) {
    if (dim != index.dim) throw ShapeError("query dimension mismatch");
    if (k < 1 || k > index.n)
        throw InvariantError("K must be in [1, " + std::to_string(index.n) + "]");
    std::vector<double> qn(dim);
    for (size_t j = 0; j < dim; ++j) qn[j] = query[j];
    const double norm = std::sqrt(dot(qn.data(), qn.data(), dim));
    if (norm > 0.0)
        for (size_t j = 0; j < dim; ++j) qn[j] /= norm;
    std::vector<TopSel> sel(1);
    topk_block(index, qn.data(), 1, sel, k);
    std::vector<uint32_t> labels(k);
    for (uint32_t j = 0; j < k; ++j) labels[j] = index.labels[sel[0].idx[j]];
    return labels;
}

RiskReport leakage_risk(const EmbeddingSet& a, const RetrievalIndex& index, uint32_t k,
                        int n_threads) {
    a.validate();
    if (a.dim != index.dim) throw ShapeError("query/gallery dimension mismatch");
    if (k < 1 || k > index.n)
        throw InvariantError("K must be in [1, " + std::to_string(index.n) + "]");
    RiskReport rep;
    rep.k = k;
    rep.n_queries = a.n;
    rep.hits.assign(a.n, 0);
    if (a.n == 0) return rep;

    auto run_range = [&](size_t lo, size_t hi) {
        std::vector<double> qbuf(kQueryBlock * a.dim);
        std::vector<TopSel> sel(kQueryBlock);
        for (size_t b0 = lo; b0 < hi; b0 += kQueryBlock) {
            const size_t nb = std::min(kQueryBlock, hi - b0);
            for (size_t q = 0; q < nb; ++q)
                normalize_query(a.row(b0 + q), a.dim, qbuf.data() + q * a.dim);
            topk_block(index, qbuf.data(), nb, sel, k);
            for (size_t q = 0; q < nb; ++q) {
                const uint32_t want = a.labels[b0 + q];
                uint8_t hit = 0;
                for (uint32_t j = 0; j < k; ++j)
                    if (index.labels[sel[q].idx[j]] == want) {
                        hit = 1;
                        break;
                    }
                rep.hits[b0 + q] = hit;
            }
        }
    };

    const size_t nt = std::max<size_t>(1, std::min<size_t>(size_t(n_threads), a.n));
    if (nt == 1) {
        run_range(0, a.n);
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (a.n + nt - 1) / nt;
        for (size_t t = 0; t < nt; ++t) {
            const size_t lo = t * chunk;
            const size_t hi = std::min<size_t>(lo + chunk, a.n);
            if (lo >= hi) break;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    size_t hits = 0;
    for (uint8_t h : rep.hits) hits += h;
    rep.risk = double(hits) / double(a.n);
    return rep;
}

namespace {

std::vector<uint32_t> distinct_labels(const std::vector<uint32_t>& labels) {
    std::vector<uint32_t> out = labels;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

EmbeddingSet restrict_to(const EmbeddingSet& es, const std::vector<uint32_t>& keep) {
    EmbeddingSet out;
    out.dim = es.dim;
    for (size_t i = 0; i < es.n; ++i) {
        if (!std::binary_search(keep.begin(), keep.end(), es.labels[i])) continue;
        out.labels.push_back(es.labels[i]);
        const float* src = es.row(i);
        out.rows.insert(out.rows.end(), src, src + es.dim);
    }
    out.n = uint32_t(out.labels.size());
    return out;
}

}  // namespace

std::vector<std::pair<uint32_t, double>> risk_curve(const EmbeddingSet& a,
                                                    const EmbeddingSet& s, uint32_t k,
                                                    const std::vector<uint32_t>& id_counts,
                                                    uint64_t seed, int n_threads) {
    const std::vector<uint32_t> la = distinct_labels(a.labels);
    const std::vector<uint32_t> ls = distinct_labels(s.labels);
    std::vector<uint32_t> shared;
    std::set_intersection(la.begin(), la.end(), ls.begin(), ls.end(),
                          std::back_inserter(shared));
    std::vector<std::pair<uint32_t, double>> curve;
    for (uint32_t count : id_counts) {
        if (count < 1 || count > shared.size())
            throw InvariantError("identity count " + std::to_string(count) +
                                 " exceeds the " + std::to_string(shared.size()) +
                                 " shared identities");
        std::vector<uint32_t> pick = shared;
        Rng rng(mix64(seed, count));
        shuffle_prefix(pick, count, rng);
        pick.resize(count);
        std::sort(pick.begin(), pick.end());
        const EmbeddingSet sub_a = restrict_to(a, pick);
        const EmbeddingSet sub_s = restrict_to(s, pick);
        const RetrievalIndex idx = build_index(sub_s);
        const RiskReport rep = leakage_risk(sub_a, idx, k, n_threads);
        curve.emplace_back(count, rep.risk);
    }
    return curve;
}

}  // namespace fm
