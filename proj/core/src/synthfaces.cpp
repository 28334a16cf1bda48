#include "facemae/synthfaces.hpp"

#include <algorithm>
#include <cmath>

namespace fm {

void SynthConfig::validate() const {
    if (n_ids < 1) throw ConfigError("n_ids must be >= 1");
    if (imgs_per_id < 1) throw ConfigError("imgs_per_id must be >= 1");
    if (size < 16) throw ConfigError("size must be >= 16");
    if (!(intra_noise >= 0.0)) throw ConfigError("intra_noise must be >= 0");
    if (jitter < 0) throw ConfigError("jitter must be >= 0");
}

namespace {

constexpr int kBlobs = 6;

struct Blob {
    double cx, cy, w, amp;
};

// Identity prototype: blob centers in the central 80% of the canvas,
// widths in [size/16, size/6], amplitudes in [0.4, 1.0].
void draw_prototype(Blob (&blobs)[kBlobs], double size, Rng& rng) {
    for (auto& b : blobs) {
        b.cx = rng.uniform(0.1 * size, 0.9 * size);
        b.cy = rng.uniform(0.1 * size, 0.9 * size);
        b.w = rng.uniform(size / 16.0, size / 6.0);
        b.amp = rng.uniform(0.4, 1.0);
    }
}

}  // namespace

Dataset gen_dataset(const SynthConfig& cfg) {
    cfg.validate();
    const int size = cfg.size;
    Dataset ds;
    ds.n = cfg.n_ids * cfg.imgs_per_id;
    ds.height = cfg.size;
    ds.width = cfg.size;
    ds.channels = 1;
    ds.labels.resize(ds.n);
    ds.pixels.resize(size_t(ds.n) * size * size);

    for (uint32_t id = 0; id < cfg.n_ids; ++id) {
        const uint64_t id_seed = mix64(cfg.seed, id);
        Blob blobs[kBlobs];
        {
            Rng rng(id_seed);
            draw_prototype(blobs, size, rng);
        }
        for (uint32_t j = 0; j < cfg.imgs_per_id; ++j) {
            const size_t img = size_t(id) * cfg.imgs_per_id + j;
            ds.labels[img] = id;
            Rng rng(mix64(id_seed, j));
            // integer translation applied to the blob centers, so the image
            // shifts without boundary artifacts
            const double dx = double(rng.range_int(-cfg.jitter, cfg.jitter));
            const double dy = double(rng.range_int(-cfg.jitter, cfg.jitter));
            float* px = ds.image(img);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    double v = 0.0;
                    for (const auto& b : blobs) {
                        const double ex = x - (b.cx + dx);
                        const double ey = y - (b.cy + dy);
                        v += b.amp * std::exp(-(ex * ex + ey * ey) / (2.0 * b.w * b.w));
                    }
                    if (cfg.intra_noise > 0.0) v += cfg.intra_noise * rng.gaussian();
                    px[y * size + x] = float(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
    return ds;
}

}  // namespace fm
