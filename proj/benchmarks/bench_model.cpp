// Autoencoder forward/backward cost per image at the default architecture.

#include <benchmark/benchmark.h>

#include <vector>

#include "facemae/autoenc.hpp"
#include "facemae/common.hpp"
#include "facemae/patchmask.hpp"

namespace {

struct Fixture {
    fm::ModelConfig cfg;
    fm::TensorMap params;
    std::vector<double> img;
    fm::MaskPattern pattern;
    int h, w;

    explicit Fixture(int side) : h(side), w(side) {
        cfg.seed = 3;
        params = fm::init_params(cfg);
        img.resize(size_t(h) * w);
        fm::Rng rng(11);
        for (auto& v : img) v = rng.uniform();
        fm::PatchGrid grid = fm::PatchGrid::for_image(h, w, cfg.patch_size);
        pattern = fm::sample_random_mask(grid.n_patches(), 0.75, 5);
    }
};

void bm_forward(benchmark::State& state) {
    Fixture fx(int(state.range(0)));
    fm::ForwardCache cache;
    for (auto _ : state) {
        auto rec = fm::forward(fx.params, fx.cfg, fx.img.data(), fx.h, fx.w, fx.pattern, cache);
        benchmark::DoNotOptimize(rec.data());
    }
}

void bm_forward_backward(benchmark::State& state) {
    Fixture fx(int(state.range(0)));
    fm::ForwardCache cache;
    fm::TensorMap grads = fm::zero_like(fx.params);
    for (auto _ : state) {
        auto rec = fm::forward(fx.params, fx.cfg, fx.img.data(), fx.h, fx.w, fx.pattern, cache);
        auto drec = fm::mse_loss_grad(rec, fx.img.data(), fx.h, fx.w, 1, fx.cfg.patch_size,
                                      fx.pattern);
        fm::zero_all(grads);
        fm::backward(fx.params, fx.cfg, cache, drec, grads);
        benchmark::DoNotOptimize(grads.items.data());
    }
}

}  // namespace

BENCHMARK(bm_forward)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_forward_backward)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
