#pragma once
// Patch tokenization and mask-pattern generation. Images are flat row-major
// buffers (h*w*c); tokens are flat per-patch pixel vectors in row-major
// patch order, so token i covers patch (i / cols, i % cols).

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "facemae/common.hpp"

namespace fm {

struct PatchGrid {
    int patch_size = 0;
    int rows = 0;
    int cols = 0;

    int n_patches() const { return rows * cols; }

    // throws ShapeError unless h and w divide evenly
    static PatchGrid for_image(int h, int w, int patch_size);
};

enum class MaskStrategy : uint8_t { random = 0, eye = 1, mouth = 2, explicit_set = 3 };

const char* to_string(MaskStrategy s);
MaskStrategy mask_strategy_from_string(const std::string& s);

struct MaskPattern {
    uint32_t n_patches = 0;
    std::vector<uint32_t> masked;  // sorted ascending, unique
    double ratio = 0.0;            // nominal
    MaskStrategy strategy = MaskStrategy::explicit_set;
    uint64_t seed = 0;

    bool is_masked(uint32_t p) const;
    size_t n_visible() const { return n_patches - masked.size(); }
};

// image (h*w*c doubles) -> n_patches tokens of s*s*c values each
std::vector<double> patchify(const double* img, int h, int w, int c, int patch_size);

// exact inverse of patchify
std::vector<double> unpatchify(const std::vector<double>& tokens, int rows, int cols,
                               int patch_size, int c);

// floor(ratio * n_patches) indices drawn without replacement, Fisher-Yates
MaskPattern sample_random_mask(uint32_t n_patches, double ratio, uint64_t seed);

// All patches whose centers fall in the named facial rectangle are masked;
// the remaining budget up to floor(ratio * n) is seeded-random outside it.
MaskPattern region_mask(const PatchGrid& grid, MaskStrategy region, double ratio,
                        uint64_t seed);

// (visible tokens in ascending original order, their original indices)
std::pair<std::vector<double>, std::vector<uint32_t>> apply_mask(
    const std::vector<double>& tokens, uint32_t patch_dim, const MaskPattern& pattern);

}  // namespace fm
