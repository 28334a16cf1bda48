// Retrieval kernel throughput: index build, top-K queries, full risk runs.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "facemae/common.hpp"
#include "facemae/privaudit.hpp"
#include "facemae/tensorio.hpp"

namespace {

fm::EmbeddingSet random_embeddings(uint32_t n, uint32_t dim, uint64_t seed) {
    fm::EmbeddingSet es;
    es.n = n;
    es.dim = dim;
    es.labels.resize(n);
    es.rows.resize(size_t(n) * dim);
    fm::Rng rng(seed);
    for (uint32_t i = 0; i < n; ++i) es.labels[i] = i;
    for (auto& v : es.rows) v = float(rng.gaussian());
    return es;
}

void bm_build_index(benchmark::State& state) {
    const uint32_t n = uint32_t(state.range(0));
    fm::EmbeddingSet s = random_embeddings(n, 128, 7);
    for (auto _ : state) {
        fm::RetrievalIndex idx = fm::build_index(s);
        benchmark::DoNotOptimize(idx.rows.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}

void bm_top_k(benchmark::State& state) {
    const uint32_t n = uint32_t(state.range(0));
    fm::EmbeddingSet s = random_embeddings(n, 128, 7);
    fm::RetrievalIndex idx = fm::build_index(s);
    std::vector<double> q(128);
    fm::Rng rng(9);
    for (auto& v : q) v = rng.gaussian();
    for (auto _ : state) {
        auto labels = fm::top_k(idx, q.data(), 128, 2);
        benchmark::DoNotOptimize(labels.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}

void bm_leakage_risk(benchmark::State& state) {
    const uint32_t n = uint32_t(state.range(0));
    fm::EmbeddingSet s = random_embeddings(n, 128, 7);
    fm::EmbeddingSet a = random_embeddings(n, 128, 8);
    a.labels = s.labels;
    fm::RetrievalIndex idx = fm::build_index(s);
    const int threads = int(state.range(1));
    for (auto _ : state) {
        fm::RiskReport rep = fm::leakage_risk(a, idx, 2, threads);
        benchmark::DoNotOptimize(rep.risk);
    }
    state.SetItemsProcessed(state.iterations() * uint64_t(n) * n);
}

}  // namespace

BENCHMARK(bm_build_index)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_top_k)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_leakage_risk)
    ->Args({1000, 1})
    ->Args({1000, 8})
    ->Args({10000, 1})
    ->Args({10000, 8})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
