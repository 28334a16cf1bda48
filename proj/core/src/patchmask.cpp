#include "facemae/patchmask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fm {

PatchGrid PatchGrid::for_image(int h, int w, int patch_size) {
    if (patch_size <= 0) throw ShapeError("patch size must be positive");
    if (h % patch_size != 0 || w % patch_size != 0)
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(patch_size));
    return PatchGrid{patch_size, h / patch_size, w / patch_size};
}

const char* to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::random: return "random";
        case MaskStrategy::eye: return "eye";
        case MaskStrategy::mouth: return "mouth";
        case MaskStrategy::explicit_set: return "explicit";
    }
    return "?";
}

MaskStrategy mask_strategy_from_string(const std::string& s) {
    if (s == "random") return MaskStrategy::random;
    if (s == "eye") return MaskStrategy::eye;
    if (s == "mouth") return MaskStrategy::mouth;
    if (s == "explicit") return MaskStrategy::explicit_set;
    throw ConfigError("unknown mask strategy: " + s);
}

bool MaskPattern::is_masked(uint32_t p) const {
    return std::binary_search(masked.begin(), masked.end(), p);
}

std::vector<double> patchify(const double* img, int h, int w, int c, int patch_size) {
    PatchGrid g = PatchGrid::for_image(h, w, patch_size);
    const int s = patch_size;
    const size_t patch_dim = size_t(s) * s * c;
    std::vector<double> tokens(size_t(g.n_patches()) * patch_dim);
    for (int pr = 0; pr < g.rows; ++pr) {
        for (int pc = 0; pc < g.cols; ++pc) {
            double* tok = tokens.data() + (size_t(pr) * g.cols + pc) * patch_dim;
            for (int y = 0; y < s; ++y) {
                const double* src = img + ((size_t(pr) * s + y) * w + size_t(pc) * s) * c;
                std::copy(src, src + size_t(s) * c, tok + size_t(y) * s * c);
            }
        }
    }
    return tokens;
}

std::vector<double> unpatchify(const std::vector<double>& tokens, int rows, int cols,
                               int patch_size, int c) {
    const int s = patch_size;
    const size_t patch_dim = size_t(s) * s * c;
    if (tokens.size() != size_t(rows) * cols * patch_dim)
        throw ShapeError("unpatchify: token buffer size mismatch");
    const int w = cols * s;
    std::vector<double> img(size_t(rows) * s * w * c);
    for (int pr = 0; pr < rows; ++pr) {
        for (int pc = 0; pc < cols; ++pc) {
            const double* tok = tokens.data() + (size_t(pr) * cols + pc) * patch_dim;
            for (int y = 0; y < s; ++y) {
                double* dst = img.data() + ((size_t(pr) * s + y) * w + size_t(pc) * s) * c;
                std::copy(tok + size_t(y) * s * c, tok + size_t(y + 1) * s * c, dst);
            }
        }
    }
    return img;
}

MaskPattern sample_random_mask(uint32_t n_patches, double ratio, uint64_t seed) {
    if (!(ratio >= 0.0 && ratio < 1.0))
        throw InvariantError("mask ratio must be in [0,1)");
    const auto k = uint32_t(std::floor(ratio * n_patches));
    std::vector<uint32_t> idx(n_patches);
    std::iota(idx.begin(), idx.end(), 0u);
    Rng rng(seed);
    shuffle_prefix(idx, k, rng);
    MaskPattern p;
    p.n_patches = n_patches;
    p.ratio = ratio;
    p.strategy = MaskStrategy::random;
    p.seed = seed;
    p.masked.assign(idx.begin(), idx.begin() + k);
    std::sort(p.masked.begin(), p.masked.end());
    return p;
}

namespace {
// Normalized [row_lo,row_hi) x [col_lo,col_hi) rectangles on an aligned face.
struct Rect {
    double row_lo, row_hi, col_lo, col_hi;
};
Rect region_rect(MaskStrategy region) {
    switch (region) {
        case MaskStrategy::eye: return {0.25, 0.45, 0.15, 0.85};
        case MaskStrategy::mouth: return {0.65, 0.85, 0.30, 0.70};
        default: throw InvariantError("region_mask: strategy must be eye or mouth");
    }
}
}  // namespace

MaskPattern region_mask(const PatchGrid& grid, MaskStrategy region, double ratio,
                        uint64_t seed) {
    if (!(ratio >= 0.0 && ratio < 1.0))
        throw InvariantError("mask ratio must be in [0,1)");
    const Rect r = region_rect(region);
    const uint32_t n = uint32_t(grid.n_patches());
    std::vector<uint32_t> in_region, outside;
    for (int pr = 0; pr < grid.rows; ++pr) {
        for (int pc = 0; pc < grid.cols; ++pc) {
            const double cy = (pr + 0.5) / grid.rows;
            const double cx = (pc + 0.5) / grid.cols;
            const uint32_t idx = uint32_t(pr) * grid.cols + pc;
            if (cy >= r.row_lo && cy < r.row_hi && cx >= r.col_lo && cx < r.col_hi)
                in_region.push_back(idx);
            else
                outside.push_back(idx);
        }
    }
    const auto budget = uint32_t(std::floor(ratio * n));
    if (budget < in_region.size())
        throw InvariantError("region_mask: ratio " + std::to_string(ratio) +
                             " below region coverage " +
                             std::to_string(double(in_region.size()) / n));
    const auto extra = uint32_t(budget - in_region.size());
    Rng rng(seed);
    shuffle_prefix(outside, extra, rng);
    MaskPattern p;
    p.n_patches = n;
    p.ratio = ratio;
    p.strategy = region;
    p.seed = seed;
    p.masked = in_region;
    p.masked.insert(p.masked.end(), outside.begin(), outside.begin() + extra);
    std::sort(p.masked.begin(), p.masked.end());
    return p;
}

std::pair<std::vector<double>, std::vector<uint32_t>> apply_mask(
    const std::vector<double>& tokens, uint32_t patch_dim, const MaskPattern& pattern) {
    if (patch_dim == 0 || tokens.size() % patch_dim != 0)
        throw ShapeError("apply_mask: token buffer not a multiple of patch_dim");
    const size_t n = tokens.size() / patch_dim;
    if (n != pattern.n_patches)
        throw ShapeError("apply_mask: token count " + std::to_string(n) +
                         " != pattern n_patches " + std::to_string(pattern.n_patches));
    std::vector<double> visible;
    visible.reserve((n - pattern.masked.size()) * patch_dim);
    std::vector<uint32_t> idx;
    idx.reserve(n - pattern.masked.size());
    for (uint32_t i = 0; i < n; ++i) {
        if (pattern.is_masked(i)) continue;
        idx.push_back(i);
        const double* tok = tokens.data() + size_t(i) * patch_dim;
        visible.insert(visible.end(), tok, tok + patch_dim);
    }
    return {std::move(visible), std::move(idx)};
}

}  // namespace fm
