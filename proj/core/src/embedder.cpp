#include "facemae/embedder.hpp"

#include <cmath>

namespace fm {

EmbedderSpec make_embedder(int g, uint32_t d, uint64_t seed, int channels) {
    if (g < 2) throw ConfigError("pool grid must be >= 2");
    if (d < 2) throw ConfigError("embedding dim must be >= 2");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    EmbedderSpec spec;
    spec.pool_grid = g;
    spec.channels = channels;
    spec.d1 = d;
    spec.d_out = d;
    spec.has_second = false;
    const uint32_t in = spec.in_dim();
    const double scale = 1.0 / std::sqrt(double(in));
    Rng rng(seed);
    spec.w1.resize(size_t(d) * in);
    for (auto& w : spec.w1) w = float(scale * rng.gaussian());
    spec.b1.assign(d, 0.0f);
    return spec;
}

std::vector<double> avgpool_grid(const double* img, int h, int w, int c, int g) {
    if (g < 1 || h % g != 0 || w % g != 0)
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible into a " + std::to_string(g) + "x" +
                         std::to_string(g) + " pool grid");
    const int ch = h / g, cw = w / g;
    const double inv = 1.0 / (double(ch) * cw);
    std::vector<double> out(size_t(g) * g * c, 0.0);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx)
            for (int k = 0; k < c; ++k) {
                double s = 0.0;
                for (int y = gy * ch; y < (gy + 1) * ch; ++y)
                    for (int x = gx * cw; x < (gx + 1) * cw; ++x)
                        s += img[(size_t(y) * w + x) * c + k];
                out[(size_t(gy) * g + gx) * c + k] = s * inv;
            }
    return out;
}

void embed_with_cache(const EmbedderSpec& spec, const double* img, int h, int w,
                      EmbedCache& cache) {
    cache.pooled = avgpool_grid(img, h, w, spec.channels, spec.pool_grid);
    const uint32_t in = spec.in_dim();
    cache.h.assign(spec.d1, 0.0);
    for (uint32_t i = 0; i < spec.d1; ++i) {
        const float* row = spec.w1.data() + size_t(i) * in;
        double s = double(spec.b1[i]);
        for (uint32_t j = 0; j < in; ++j) s += double(row[j]) * cache.pooled[j];
        cache.h[i] = std::tanh(s);
    }
    if (!spec.has_second) {
        cache.out = cache.h;
        return;
    }
    cache.out.assign(spec.d_out, 0.0);
    for (uint32_t i = 0; i < spec.d_out; ++i) {
        const float* row = spec.w2.data() + size_t(i) * spec.d1;
        double s = double(spec.b2[i]);
        for (uint32_t j = 0; j < spec.d1; ++j) s += double(row[j]) * cache.h[j];
        cache.out[i] = s;
    }
}

std::vector<double> embed(const EmbedderSpec& spec, const double* img, int h, int w) {
    EmbedCache cache;
    embed_with_cache(spec, img, h, w, cache);
    return cache.out;
}

std::vector<double> embed_vjp(const EmbedderSpec& spec, const EmbedCache& cache,
                              const double* u, int h, int w) {
    const uint32_t in = spec.in_dim();
    std::vector<double> dh(spec.d1, 0.0);
    if (spec.has_second) {
        for (uint32_t i = 0; i < spec.d_out; ++i) {
            const float* row = spec.w2.data() + size_t(i) * spec.d1;
            for (uint32_t j = 0; j < spec.d1; ++j) dh[j] += u[i] * double(row[j]);
        }
    } else {
        for (uint32_t j = 0; j < spec.d1; ++j) dh[j] = u[j];
    }
    // through tanh, then w1
    std::vector<double> dpool(in, 0.0);
    for (uint32_t i = 0; i < spec.d1; ++i) {
        const double da = dh[i] * (1.0 - cache.h[i] * cache.h[i]);
        const float* row = spec.w1.data() + size_t(i) * in;
        for (uint32_t j = 0; j < in; ++j) dpool[j] += da * double(row[j]);
    }
    // through the average pool: each pixel of a cell gets dcell / cell_size
    const int g = spec.pool_grid, c = spec.channels;
    const int ch = h / g, cw = w / g;
    const double inv = 1.0 / (double(ch) * cw);
    std::vector<double> dimg(size_t(h) * w * c, 0.0);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx)
            for (int k = 0; k < c; ++k) {
                const double dc = dpool[(size_t(gy) * g + gx) * c + k] * inv;
                for (int y = gy * ch; y < (gy + 1) * ch; ++y)
                    for (int x = gx * cw; x < (gx + 1) * cw; ++x)
                        dimg[(size_t(y) * w + x) * c + k] = dc;
            }
    return dimg;
}

FeatureMatrix embed_batch(const EmbedderSpec& spec, const Dataset& ds) {
    FeatureMatrix f;
    f.n = ds.n;
    f.d = spec.d_out;
    f.v.resize(f.n * f.d);
    EmbedCache cache;
    for (size_t i = 0; i < ds.n; ++i) {
        const std::vector<double> img = ds.image_f64(i);
        embed_with_cache(spec, img.data(), ds.height, ds.width, cache);
        std::copy(cache.out.begin(), cache.out.end(), f.row(i));
    }
    return f;
}

EmbeddingSet to_embedding_set(const FeatureMatrix& fm_rows,
                              const std::vector<uint32_t>& labels) {
    if (labels.size() != fm_rows.n)
        throw ShapeError("to_embedding_set: label count mismatch");
    EmbeddingSet es;
    es.n = uint32_t(fm_rows.n);
    es.dim = uint32_t(fm_rows.d);
    es.labels = labels;
    es.rows.resize(fm_rows.v.size());
    for (size_t i = 0; i < fm_rows.v.size(); ++i) es.rows[i] = float(fm_rows.v[i]);
    return es;
}

void save_embedder(const EmbedderSpec& spec, const std::string& path) {
    TensorMap map;
    Tensor& meta = map.add("phi.meta", {2});
    meta.v[0] = spec.pool_grid;
    meta.v[1] = spec.channels;
    Tensor& w1 = map.add("phi.w1", {spec.d1, spec.in_dim()});
    for (size_t i = 0; i < spec.w1.size(); ++i) w1.v[i] = spec.w1[i];
    Tensor& b1 = map.add("phi.b1", {spec.d1});
    for (size_t i = 0; i < spec.b1.size(); ++i) b1.v[i] = spec.b1[i];
    if (spec.has_second) {
        Tensor& w2 = map.add("phi.w2", {spec.d_out, spec.d1});
        for (size_t i = 0; i < spec.w2.size(); ++i) w2.v[i] = spec.w2[i];
        Tensor& b2 = map.add("phi.b2", {spec.d_out});
        for (size_t i = 0; i < spec.b2.size(); ++i) b2.v[i] = spec.b2[i];
    }
    write_params(map, path);
}

EmbedderSpec load_external_embedder(const std::string& path) {
    TensorMap map = read_params(path);
    for (const char* name : {"phi.meta", "phi.w1", "phi.b1"})
        if (!map.has(name))
            throw FormatError(std::string("embedder file missing tensor ") + name);
    const Tensor& meta = map.at("phi.meta");
    if (meta.v.size() != 2) throw FormatError("phi.meta must hold {pool_grid, channels}");
    EmbedderSpec spec;
    spec.pool_grid = int(meta.v[0]);
    spec.channels = int(meta.v[1]);
    if (spec.pool_grid < 1 || spec.channels < 1)
        throw FormatError("phi.meta values out of range");
    const Tensor& w1 = map.at("phi.w1");
    if (w1.dims.size() != 2 || w1.dims[1] != spec.in_dim())
        throw FormatError("phi.w1 shape inconsistent with phi.meta");
    spec.d1 = w1.dims[0];
    spec.w1.resize(w1.v.size());
    for (size_t i = 0; i < w1.v.size(); ++i) spec.w1[i] = float(w1.v[i]);
    const Tensor& b1 = map.at("phi.b1");
    if (b1.v.size() != spec.d1) throw FormatError("phi.b1 shape mismatch");
    spec.b1.resize(b1.v.size());
    for (size_t i = 0; i < b1.v.size(); ++i) spec.b1[i] = float(b1.v[i]);
    spec.has_second = map.has("phi.w2");
    if (spec.has_second) {
        if (!map.has("phi.b2")) throw FormatError("embedder file missing tensor phi.b2");
        const Tensor& w2 = map.at("phi.w2");
        if (w2.dims.size() != 2 || w2.dims[1] != spec.d1)
            throw FormatError("phi.w2 shape mismatch");
        spec.d_out = w2.dims[0];
        spec.w2.resize(w2.v.size());
        for (size_t i = 0; i < w2.v.size(); ++i) spec.w2[i] = float(w2.v[i]);
        const Tensor& b2 = map.at("phi.b2");
        if (b2.v.size() != spec.d_out) throw FormatError("phi.b2 shape mismatch");
        spec.b2.resize(b2.v.size());
        for (size_t i = 0; i < b2.v.size(); ++i) spec.b2[i] = float(b2.v[i]);
    } else {
        spec.d_out = spec.d1;
    }
    return spec;
}

}  // namespace fm
