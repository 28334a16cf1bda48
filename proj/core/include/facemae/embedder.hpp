#pragma once
// Frozen feature extractor phi: average-pool to a g x g grid, then a fixed
// random projection through tanh. A trained recognizer (pool -> linear ->
// tanh -> linear) can be loaded in its place; the second linear layer is
// optional and absent in the default phi.
//
// Weights are kept as f32 so FMPR save/load reproduces the mapping exactly;
// all arithmetic runs in f64.

#include <cstdint>
#include <string>
#include <vector>

#include "facemae/tensorio.hpp"

namespace fm {

struct FeatureMatrix {
    size_t n = 0;
    size_t d = 0;
    std::vector<double> v;  // n*d row-major

    double* row(size_t i) { return v.data() + i * d; }
    const double* row(size_t i) const { return v.data() + i * d; }
};

struct EmbedderSpec {
    int pool_grid = 4;  // g
    int channels = 1;
    uint32_t d1 = 64;    // width after the first linear (tanh applied)
    uint32_t d_out = 64; // embedding dimension
    bool has_second = false;
    std::vector<float> w1;  // d1 x (g*g*channels)
    std::vector<float> b1;  // d1
    std::vector<float> w2;  // d_out x d1, only when has_second
    std::vector<float> b2;  // d_out

    uint32_t in_dim() const { return uint32_t(pool_grid) * pool_grid * channels; }
};

// Default phi: w1 ~ seeded gaussian / sqrt(g*g*C), zero bias, no second layer.
EmbedderSpec make_embedder(int g, uint32_t d, uint64_t seed, int channels = 1);

// mean over each cell of a g x g grid; h and w must divide by g
std::vector<double> avgpool_grid(const double* img, int h, int w, int c, int g);

struct EmbedCache {
    std::vector<double> pooled;  // g*g*C
    std::vector<double> h;       // d1, post-tanh
    std::vector<double> out;     // d_out
};

// phi(I); image is h*w*c doubles, h and w must divide by pool_grid
std::vector<double> embed(const EmbedderSpec& spec, const double* img, int h, int w);
void embed_with_cache(const EmbedderSpec& spec, const double* img, int h, int w,
                      EmbedCache& cache);

// vector-Jacobian product: given u = dL/d(phi(I)), returns dL/d(image pixels)
std::vector<double> embed_vjp(const EmbedderSpec& spec, const EmbedCache& cache,
                              const double* u, int h, int w);

FeatureMatrix embed_batch(const EmbedderSpec& spec, const Dataset& ds);

// FeatureMatrix -> f32 EmbeddingSet with the given labels, for FMEB output
EmbeddingSet to_embedding_set(const FeatureMatrix& fm_rows,
                              const std::vector<uint32_t>& labels);

// FMPR tensors: phi.meta = {pool_grid, channels}, phi.w1, phi.b1
// and, when present, phi.w2, phi.b2.
void save_embedder(const EmbedderSpec& spec, const std::string& path);
EmbedderSpec load_external_embedder(const std::string& path);

}  // namespace fm
