#pragma once
// Binary formats: FMDS (datasets), FMEB (embeddings), FMMK (mask bitsets),
// FMPR (named parameter tensors). Little-endian, bit-exact roundtrips.

#include <cstdint>
#include <string>
#include <vector>

#include "facemae/common.hpp"
#include "facemae/patchmask.hpp"

namespace fm {

struct Dataset {
    uint32_t n = 0;
    uint16_t height = 0;
    uint16_t width = 0;
    uint16_t channels = 1;
    std::vector<uint32_t> labels;  // n entries
    std::vector<float> pixels;     // n*h*w*c, image-major row-major, in [0,1]

    size_t image_size() const {
        return size_t(height) * width * channels;
    }
    const float* image(size_t i) const { return pixels.data() + i * image_size(); }
    float* image(size_t i) { return pixels.data() + i * image_size(); }

    // image i as doubles, for the math paths
    std::vector<double> image_f64(size_t i) const;

    void validate() const;  // throws InvariantError
};

struct EmbeddingSet {
    uint32_t n = 0;
    uint32_t dim = 0;
    std::vector<uint32_t> labels;  // n entries
    std::vector<float> rows;       // n*dim, finite

    const float* row(size_t i) const { return rows.data() + i * dim; }
    std::vector<double> row_f64(size_t i) const;

    void validate() const;
};

// A named dense tensor; values live in double, files store f32.
struct Tensor {
    std::vector<uint32_t> dims;
    std::vector<double> v;

    size_t size() const {
        size_t s = 1;
        for (uint32_t d : dims) s *= d;
        return s;
    }
};

// Ordered name -> tensor container (order is serialization order).
struct TensorMap {
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor& add(const std::string& name, std::vector<uint32_t> dims);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const;
    size_t n_params() const;
};

// FMDS
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// FMEB
void write_embeddings(const EmbeddingSet& es, const std::string& path);
EmbeddingSet read_embeddings(const std::string& path);

// FMMK (stores n_patches + per-image masked bitsets; strategy/ratio/seed are
// in-memory provenance and are not serialized)
void write_masks(const std::vector<MaskPattern>& patterns, const std::string& path);
std::vector<MaskPattern> read_masks(const std::string& path);

// FMPR
void write_params(const TensorMap& params, const std::string& path);
TensorMap read_params(const std::string& path);

// FNV-1a over a dataset's label+pixel bytes; used to fingerprint training
// data inside checkpoints.
uint32_t dataset_fingerprint(const Dataset& ds);

}  // namespace fm
