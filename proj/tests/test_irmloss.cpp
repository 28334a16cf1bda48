#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "facemae/irmloss.hpp"
#include "facemae/synthfaces.hpp"
#include "testutil.hpp"

using namespace fm;

namespace {

FeatureMatrix fmat(size_t n, size_t d, std::vector<double> v) {
    FeatureMatrix f;
    f.n = n;
    f.d = d;
    f.v = std::move(v);
    return f;
}

FeatureMatrix rand_fmat(size_t n, size_t d, uint64_t seed, double lo = -1.0,
                        double hi = 1.0) {
    Rng rng(seed);
    FeatureMatrix f = fmat(n, d, std::vector<double>(n * d));
    for (auto& x : f.v) x = lo + (hi - lo) * rng.uniform();
    return f;
}

// double-loop oracles, independent of the library's matmul path
double delta_oracle(const FeatureMatrix& x, const FeatureMatrix& y) {
    double s = 0.0;
    for (size_t i = 0; i < x.n; ++i) {
        double r = 0.0;
        for (size_t j = 0; j < x.d; ++j) {
            double e = x.v[i * x.d + j] - y.v[i * y.d + j];
            r += e * e;
        }
        s += std::sqrt(r);
    }
    return s / double(x.n);
}

FeatureMatrix gram_oracle(const FeatureMatrix& f) {
    FeatureMatrix g = fmat(f.n, f.n, std::vector<double>(f.n * f.n, 0.0));
    for (size_t i = 0; i < f.n; ++i)
        for (size_t j = 0; j < f.n; ++j) {
            double s = 0.0;
            for (size_t k = 0; k < f.d; ++k) s += f.v[i * f.d + k] * f.v[j * f.d + k];
            g.v[i * f.n + j] = s;
        }
    return g;
}

}  // namespace

TEST_CASE("delta basics and worked example") {
    // F = [[1,0],[0,1]], F_hat = 0: each row distance 1, mean 1
    FeatureMatrix f = fmat(2, 2, {1, 0, 0, 1});
    FeatureMatrix z = fmat(2, 2, {0, 0, 0, 0});
    CHECK(delta(f, z) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(delta(f, f) == 0.0);
    CHECK(delta(z, f) == delta(f, z));  // symmetric

    FeatureMatrix a = rand_fmat(7, 5, 11), b = rand_fmat(7, 5, 12),
                  c = rand_fmat(7, 5, 13);
    CHECK(delta(a, b) == doctest::Approx(delta_oracle(a, b)).epsilon(1e-12));
    CHECK(delta(a, c) <= delta(a, b) + delta(b, c) + 1e-12);  // triangle
    CHECK(delta(a, b) >= 0.0);

    FeatureMatrix bad = fmat(2, 3, {0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS((void)delta(f, bad), ShapeError);
    FeatureMatrix empty;
    CHECK_THROWS_AS((void)delta(empty, empty), ShapeError);
}

TEST_CASE("gram matches double-loop oracle, symmetric, orthonormal -> I") {
    FeatureMatrix f = rand_fmat(6, 9, 21);
    FeatureMatrix g = gram(f), go = gram_oracle(f);
    REQUIRE(g.n == 6);
    REQUIRE(g.d == 6);
    for (size_t i = 0; i < g.v.size(); ++i)
        CHECK(g.v[i] == doctest::Approx(go.v[i]).epsilon(1e-12));
    for (size_t i = 0; i < g.n; ++i)
        for (size_t j = 0; j < g.n; ++j)
            CHECK(g.v[i * g.n + j] == doctest::Approx(g.v[j * g.n + i]).epsilon(1e-12));

    FeatureMatrix e = fmat(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
    FeatureMatrix ge = gram(e);
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 3; ++j)
            CHECK(ge.v[i * 3 + j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-15));
}

TEST_CASE("dc_loss worked example and mode algebra") {
    // F = I2, F_hat = 0, beta = 1: Delta(F,0) = 1, G = I2, G_hat = 0,
    // Delta(I2,0) = 1 => L_dc = 2
    FeatureMatrix f = fmat(2, 2, {1, 0, 0, 1});
    FeatureMatrix z = fmat(2, 2, {0, 0, 0, 0});
    IrmConfig irm;  // beta=1, mode=irm
    CHECK(dc_loss(f, z, irm) == doctest::Approx(2.0).epsilon(1e-15));

    FeatureMatrix a = rand_fmat(8, 6, 31), b = rand_fmat(8, 6, 32);
    IrmConfig im{0.0, LossMode::im, 1.0};
    IrmConfig rm{0.0, LossMode::rm, 1.0};
    IrmConfig mse{1.0, LossMode::mse, 1.0};
    CHECK(dc_loss(a, b, mse) == 0.0);

    // beta = 0 irm == im; beta linearity: irm(beta) == im + beta*rm
    IrmConfig irm0{0.0, LossMode::irm, 1.0};
    CHECK(dc_loss(a, b, irm0) == doctest::Approx(dc_loss(a, b, im)).epsilon(1e-15));
    for (double beta : {0.25, 1.0, 3.5}) {
        IrmConfig c{beta, LossMode::irm, 1.0};
        IrmConfig cm{beta, LossMode::irm_mse, 1.0};
        const double want = dc_loss(a, b, im) + beta * dc_loss(a, b, rm);
        CHECK(dc_loss(a, b, c) == doctest::Approx(want).epsilon(1e-9));
        CHECK(dc_loss(a, b, cm) == doctest::Approx(want).epsilon(1e-9));  // pixel term lives elsewhere
    }
}

TEST_CASE("dc_loss invariant under joint row permutation") {
    FeatureMatrix a = rand_fmat(9, 5, 41), b = rand_fmat(9, 5, 42);
    std::vector<size_t> perm(9);
    for (size_t i = 0; i < 9; ++i) perm[i] = i;
    Rng rng(43);
    shuffle_all(perm, rng);
    FeatureMatrix ap = fmat(9, 5, std::vector<double>(45)), bp = ap;
    for (size_t i = 0; i < 9; ++i)
        for (size_t j = 0; j < 5; ++j) {
            ap.v[i * 5 + j] = a.v[perm[i] * 5 + j];
            bp.v[i * 5 + j] = b.v[perm[i] * 5 + j];
        }
    for (LossMode m : {LossMode::im, LossMode::rm, LossMode::irm}) {
        IrmConfig c{0.7, m, 1.0};
        CHECK(dc_loss(ap, bp, c) == doctest::Approx(dc_loss(a, b, c)).epsilon(1e-9));
    }
}

TEST_CASE("dc_loss_grad matches finite differences in every mode") {
    const size_t n = 6, d = 4;
    FeatureMatrix f = rand_fmat(n, d, 51, -1.0, 1.0);
    // keep rows well away from F so no distance term sits at its kink
    FeatureMatrix fh = rand_fmat(n, d, 52, 2.0, 3.0);
    for (LossMode m :
         {LossMode::mse, LossMode::im, LossMode::rm, LossMode::irm, LossMode::irm_mse}) {
        IrmConfig cfg{0.6, m, 1.0};
        FeatureMatrix g = dc_loss_grad(f, fh, cfg);
        REQUIRE(g.n == n);
        REQUIRE(g.d == d);
        for (size_t i = 0; i < n * d; ++i) {
            const double got = g.v[i];
            const double want =
                tu::fd([&] { return dc_loss(f, fh, cfg); }, fh.v[i], 1e-5);
            CHECK(got == doctest::Approx(want).epsilon(1e-5));
        }
    }
    // subgradient 0 at coincident rows
    IrmConfig irm;
    FeatureMatrix g0 = dc_loss_grad(f, f, irm);
    for (double x : g0.v) CHECK(x == 0.0);
}

// End-to-end check of the exact composition train_facemae differentiates:
// params -> forward -> paste -> phi -> dc_loss (+ masked-pixel mse term).
TEST_CASE("training-step gradient chain matches finite differences") {
    ModelConfig mc;
    mc.patch_size = 4;
    mc.d_enc = 8;
    mc.d_dec = 8;
    mc.enc_depth = 1;
    mc.dec_depth = 1;
    mc.seed = 7;
    const int h = 8, w = 8;
    const PatchGrid grid = PatchGrid::for_image(h, w, mc.patch_size);
    EmbedderSpec phi = make_embedder(2, 6, 17);
    IrmConfig irm{0.8, LossMode::irm_mse, 0.7};

    const size_t b = 3;
    std::vector<std::vector<double>> imgs;
    std::vector<MaskPattern> pats;
    for (size_t k = 0; k < b; ++k) {
        imgs.push_back(tu::rand_image(h, w, 1, 100 + k));
        pats.push_back(sample_random_mask(uint32_t(grid.n_patches()), 0.5, 200 + k));
    }

    TensorMap params = init_params(mc);
    FeatureMatrix f_b = fmat(b, phi.d_out, std::vector<double>(b * phi.d_out));
    for (size_t k = 0; k < b; ++k) {
        const auto e = embed(phi, imgs[k].data(), h, w);
        std::copy(e.begin(), e.end(), f_b.row(k));
    }

    // loss as a function of the current params, mirroring one train step
    auto loss_of = [&]() {
        FeatureMatrix fh = fmat(b, phi.d_out, std::vector<double>(b * phi.d_out));
        double mse_sum = 0.0;
        ForwardCache fc;
        for (size_t k = 0; k < b; ++k) {
            const auto recon = forward(params, mc, imgs[k].data(), h, w, pats[k], fc);
            const auto e = embed(phi, recon.data(), h, w);
            std::copy(e.begin(), e.end(), fh.row(k));
            mse_sum += mse_loss(recon, imgs[k].data(), h, w, 1, mc.patch_size, pats[k]);
        }
        return dc_loss(f_b, fh, irm) + irm.mse_weight * mse_sum / double(b);
    };

    // analytic gradient via the same calls the trainer makes
    TensorMap grads = zero_like(params);
    {
        FeatureMatrix fh = fmat(b, phi.d_out, std::vector<double>(b * phi.d_out));
        std::vector<ForwardCache> fcs(b);
        std::vector<EmbedCache> ecs(b);
        std::vector<std::vector<double>> recons(b);
        for (size_t k = 0; k < b; ++k) {
            recons[k] = forward(params, mc, imgs[k].data(), h, w, pats[k], fcs[k]);
            embed_with_cache(phi, recons[k].data(), h, w, ecs[k]);
            std::copy(ecs[k].out.begin(), ecs[k].out.end(), fh.row(k));
        }
        FeatureMatrix dfh = dc_loss_grad(f_b, fh, irm);
        for (size_t k = 0; k < b; ++k) {
            std::vector<double> drecon = embed_vjp(phi, ecs[k], dfh.row(k), h, w);
            const auto dm = mse_loss_grad(recons[k], imgs[k].data(), h, w, 1,
                                          mc.patch_size, pats[k]);
            const double s = irm.mse_weight / double(b);
            for (size_t j = 0; j < drecon.size(); ++j) drecon[j] += s * dm[j];
            backward(params, mc, fcs[k], drecon, grads);
        }
    }

    // probe a spread of entries in every tensor
    size_t checked = 0;
    for (size_t t = 0; t < params.items.size(); ++t) {
        auto& [name, ten] = params.items[t];
        const Tensor& g = grads.items[t].second;
        REQUIRE(g.v.size() == ten.v.size());
        const size_t m = ten.v.size();
        for (size_t probe : {size_t(0), m / 2, m - 1}) {
            const double want = tu::fd(loss_of, ten.v[probe], 1e-4);
            const double got = g.v[probe];
            INFO(name << "[" << probe << "] analytic=" << got << " fd=" << want);
            CHECK(got == doctest::Approx(want).epsilon(1e-4));
            ++checked;
        }
    }
    CHECK(checked >= 20);
}

TEST_CASE("train_facemae config validation") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.mask_ratio = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.optim.warmup_epochs = cfg.optim.total_epochs + 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.irm.beta = std::nan("");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    CHECK(loss_mode_from_string("irm+mse") == LossMode::irm_mse);
    CHECK(to_string(LossMode::irm_mse) == std::string("irm+mse"));
    CHECK_THROWS_AS((void)loss_mode_from_string("l2"), ConfigError);
}

TEST_CASE("train_facemae: zero epochs returns untouched init, empty history") {
    SynthConfig sc;
    sc.n_ids = 3;
    sc.imgs_per_id = 2;
    sc.size = 16;
    sc.seed = 5;
    Dataset ds = gen_dataset(sc);
    TrainConfig cfg;
    cfg.model.patch_size = 4;
    cfg.model.d_enc = 8;
    cfg.model.d_dec = 8;
    cfg.model.enc_depth = 1;
    cfg.model.dec_depth = 1;
    cfg.optim.total_epochs = 0;
    cfg.optim.warmup_epochs = 0;
    EmbedderSpec phi = make_embedder(4, 8, 3);
    TrainResult r = train_facemae(ds, phi, cfg);
    CHECK(r.history.empty());
    TensorMap want = init_params(cfg.model);
    REQUIRE(r.params.items.size() == want.items.size());
    for (size_t t = 0; t < want.items.size(); ++t) {
        CHECK(r.params.items[t].first == want.items[t].first);
        CHECK(r.params.items[t].second.v == want.items[t].second.v);
    }
}

TEST_CASE("train_facemae: deterministic and loss decreases on a small run") {
    SynthConfig sc;
    sc.n_ids = 4;
    sc.imgs_per_id = 4;
    sc.size = 16;
    sc.seed = 9;
    sc.intra_noise = 0.03;
    sc.jitter = 1;
    Dataset ds = gen_dataset(sc);

    TrainConfig cfg;
    cfg.model.patch_size = 4;
    cfg.model.d_enc = 16;
    cfg.model.d_dec = 8;
    cfg.model.enc_depth = 1;
    cfg.model.dec_depth = 1;
    cfg.model.seed = 2;
    cfg.irm = IrmConfig{1.0, LossMode::irm_mse, 1.0};
    cfg.optim.base_lr = 3e-3;
    cfg.optim.total_epochs = 60;
    cfg.optim.warmup_epochs = 6;
    cfg.batch_size = 16;
    cfg.seed = 13;
    EmbedderSpec phi = make_embedder(4, 16, 3);

    TrainResult r1 = train_facemae(ds, phi, cfg);
    REQUIRE(r1.history.size() == 60);  // one step per epoch at batch 16
    for (const auto& row : r1.history) CHECK(std::isfinite(row.loss));

    // smoothed (window 10) loss decreases and ends below half the start
    auto mean10 = [&](size_t lo) {
        double s = 0.0;
        for (size_t i = lo; i < lo + 10; ++i) s += r1.history[i].loss;
        return s / 10.0;
    };
    const double head = mean10(0), tail = mean10(r1.history.size() - 10);
    CHECK(tail < head);
    CHECK(r1.history.back().loss < 0.5 * r1.history.front().loss);

    TrainResult r2 = train_facemae(ds, phi, cfg);
    for (size_t t = 0; t < r1.params.items.size(); ++t)
        CHECK(r1.params.items[t].second.v == r2.params.items[t].second.v);
    REQUIRE(r2.history.size() == r1.history.size());
    for (size_t i = 0; i < r1.history.size(); ++i)
        CHECK(r1.history[i].loss == r2.history[i].loss);
}
