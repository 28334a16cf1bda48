#pragma once
// Seeded generator of face-like synthetic identity datasets: each identity
// is a fixed arrangement of Gaussian blobs, each instance a jittered, noisy
// rendering of it. Deterministic given the config.

#include <cstdint>

#include "facemae/tensorio.hpp"

namespace fm {

struct SynthConfig {
    uint32_t n_ids = 50;
    uint32_t imgs_per_id = 20;
    uint16_t size = 32;        // square canvas side
    uint64_t seed = 1;
    double intra_noise = 0.05; // per-pixel gaussian sigma
    int jitter = 2;            // max |integer translation| in pixels

    void validate() const;  // throws ConfigError
};

Dataset gen_dataset(const SynthConfig& cfg);

}  // namespace fm
