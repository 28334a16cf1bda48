#include "facemae/irmloss.hpp"

#include <algorithm>
#include <cmath>

namespace fm {

const char* to_string(LossMode m) {
    switch (m) {
        case LossMode::mse: return "mse";
        case LossMode::im: return "im";
        case LossMode::rm: return "rm";
        case LossMode::irm: return "irm";
        case LossMode::irm_mse: return "irm+mse";
    }
    return "?";
}

LossMode loss_mode_from_string(const std::string& s) {
    if (s == "mse") return LossMode::mse;
    if (s == "im") return LossMode::im;
    if (s == "rm") return LossMode::rm;
    if (s == "irm") return LossMode::irm;
    if (s == "irm+mse") return LossMode::irm_mse;
    throw ConfigError("unknown loss mode: " + s);
}

double delta(const FeatureMatrix& x, const FeatureMatrix& y) {
    if (x.n != y.n || x.d != y.d) throw ShapeError("delta: shape mismatch");
    if (x.n == 0) throw ShapeError("delta: empty matrices");
    double s = 0.0;
    for (size_t i = 0; i < x.n; ++i) {
        const double* xi = x.row(i);
        const double* yi = y.row(i);
        double r = 0.0;
        for (size_t j = 0; j < x.d; ++j) {
            const double e = xi[j] - yi[j];
            r += e * e;
        }
        s += std::sqrt(r);
    }
    return s / double(x.n);
}

FeatureMatrix gram(const FeatureMatrix& f) {
    FeatureMatrix g;
    g.n = f.n;
    g.d = f.n;
    g.v.assign(f.n * f.n, 0.0);
    matmul_nt(f.v.data(), f.v.data(), g.v.data(), f.n, f.d, f.n);
    return g;
}

double dc_loss(const FeatureMatrix& f, const FeatureMatrix& fhat, const IrmConfig& cfg) {
    if (f.n != fhat.n || f.d != fhat.d) throw ShapeError("dc_loss: shape mismatch");
    switch (cfg.mode) {
        case LossMode::mse: return 0.0;
        case LossMode::im: return delta(f, fhat);
        case LossMode::rm: return delta(gram(f), gram(fhat));
        case LossMode::irm:
        case LossMode::irm_mse:
            return delta(f, fhat) + cfg.beta * delta(gram(f), gram(fhat));
    }
    return 0.0;
}

FeatureMatrix dc_loss_grad(const FeatureMatrix& f, const FeatureMatrix& fhat,
                           const IrmConfig& cfg) {
    if (f.n != fhat.n || f.d != fhat.d) throw ShapeError("dc_loss_grad: shape mismatch");
    const size_t n = f.n, d = f.d;
    FeatureMatrix g;
    g.n = n;
    g.d = d;
    g.v.assign(n * d, 0.0);
    if (cfg.mode == LossMode::mse) return g;

    const bool wants_im = cfg.mode != LossMode::rm;
    const bool wants_rm = cfg.mode != LossMode::im;
    const double rm_w = (cfg.mode == LossMode::rm) ? 1.0 : cfg.beta;

    if (wants_im) {
        for (size_t i = 0; i < n; ++i) {
            const double* fi = f.row(i);
            const double* hi = fhat.row(i);
            double r = 0.0;
            for (size_t j = 0; j < d; ++j) {
                const double e = hi[j] - fi[j];
                r += e * e;
            }
            r = std::sqrt(r);
            if (r == 0.0) continue;  // subgradient 0 at the kink
            const double inv = 1.0 / (double(n) * r);
            double* gi = g.row(i);
            for (size_t j = 0; j < d; ++j) gi[j] += (hi[j] - fi[j]) * inv;
        }
    }
    if (wants_rm && rm_w != 0.0) {
        const FeatureMatrix gf = gram(f);
        const FeatureMatrix gh = gram(fhat);
        // M_pq = (Ghat_pq - G_pq) / (n * ||Ghat_p - G_p||); dF_hat += w (M + M^T) F_hat
        std::vector<double> m(n * n, 0.0);
        for (size_t p = 0; p < n; ++p) {
            const double* gfp = gf.row(p);
            const double* ghp = gh.row(p);
            double r = 0.0;
            for (size_t q = 0; q < n; ++q) {
                const double e = ghp[q] - gfp[q];
                r += e * e;
            }
            r = std::sqrt(r);
            if (r == 0.0) continue;
            const double inv = 1.0 / (double(n) * r);
            double* mp = m.data() + p * n;
            for (size_t q = 0; q < n; ++q) mp[q] = (ghp[q] - gfp[q]) * inv;
        }
        std::vector<double> sym(n * n);
        for (size_t p = 0; p < n; ++p)
            for (size_t q = 0; q < n; ++q)
                sym[p * n + q] = rm_w * (m[p * n + q] + m[q * n + p]);
        matmul_nn(sym.data(), fhat.v.data(), g.v.data(), n, n, d);
    }
    return g;
}

void TrainConfig::validate() const {
    model.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
        throw ConfigError("mask_ratio must be in [0,1)");
    if (optim.total_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (optim.warmup_epochs < 0 || optim.warmup_epochs > optim.total_epochs)
        throw ConfigError("warmup_epochs must be in [0, epochs]");
    if (!std::isfinite(irm.beta)) throw ConfigError("beta must be finite");
    if (!std::isfinite(irm.mse_weight)) throw ConfigError("mse_weight must be finite");
}

TrainResult train_facemae(const Dataset& ds, const EmbedderSpec& phi,
                          const TrainConfig& cfg) {
    cfg.validate();
    ds.validate();
    if (ds.n == 0) throw InvariantError("cannot train on an empty dataset");
    const int h = ds.height, w = ds.width;
    const PatchGrid grid = PatchGrid::for_image(h, w, cfg.model.patch_size);
    const auto n_patches = uint32_t(grid.n_patches());

    TrainResult res;
    res.params = init_params(cfg.model);
    TensorMap grads = zero_like(res.params);
    OptimState st;
    st.cfg = cfg.optim;
    st.init_like(res.params);

    const bool use_feat = includes_features(cfg.irm.mode);
    const bool use_mse = includes_mse(cfg.irm.mode);
    const double mse_w = (cfg.irm.mode == LossMode::mse) ? 1.0 : cfg.irm.mse_weight;

    FeatureMatrix f_full;
    if (use_feat) f_full = embed_batch(phi, ds);

    const uint64_t mask_root = mix64(cfg.seed, 1);
    const uint64_t order_root = mix64(cfg.seed, 2);
    const size_t n = ds.n;
    const size_t bsz = std::min<size_t>(cfg.batch_size, n);
    const size_t steps_per_epoch = (n + bsz - 1) / bsz;

    std::vector<size_t> order(n);
    std::vector<ForwardCache> caches(bsz);
    std::vector<std::vector<double>> recons(bsz);
    std::vector<EmbedCache> emb_caches(bsz);
    uint64_t global_step = 0;

    for (int epoch = 0; epoch < cfg.optim.total_epochs; ++epoch) {
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng order_rng(mix64(order_root, uint64_t(epoch)));
        shuffle_all(order, order_rng);
        const uint64_t epoch_seed = mix64(mask_root, uint64_t(epoch));

        for (size_t step = 0; step < steps_per_epoch; ++step) {
            const size_t b0 = step * bsz;
            const size_t b = std::min(bsz, n - b0);
            const uint64_t step_seed = mix64(epoch_seed, step);

            FeatureMatrix f_b, fh_b;
            if (use_feat) {
                f_b.n = fh_b.n = b;
                f_b.d = fh_b.d = phi.d_out;
                f_b.v.resize(b * f_b.d);
                fh_b.v.resize(b * f_b.d);
            }
            double mse_sum = 0.0;
            for (size_t k = 0; k < b; ++k) {
                const size_t idx = order[b0 + k];
                const MaskPattern pattern = sample_random_mask(
                    n_patches, cfg.mask_ratio, mix64(step_seed, idx));
                const std::vector<double> img = ds.image_f64(idx);
                recons[k] = forward(res.params, cfg.model, img.data(), h, w, pattern,
                                    caches[k]);
                if (use_feat) {
                    std::copy(f_full.row(idx), f_full.row(idx) + f_full.d, f_b.row(k));
                    embed_with_cache(phi, recons[k].data(), h, w, emb_caches[k]);
                    std::copy(emb_caches[k].out.begin(), emb_caches[k].out.end(),
                              fh_b.row(k));
                }
                if (use_mse)
                    mse_sum += mse_loss(recons[k], img.data(), h, w, cfg.model.channels,
                                        cfg.model.patch_size, pattern);
            }

            double loss = 0.0;
            FeatureMatrix dfh;
            if (use_feat) {
                loss += dc_loss(f_b, fh_b, cfg.irm);
                dfh = dc_loss_grad(f_b, fh_b, cfg.irm);
            }
            if (use_mse) loss += mse_w * mse_sum / double(b);
            if (!std::isfinite(loss))
                throw NumericError("non-finite loss at step " +
                                   std::to_string(global_step));

            zero_all(grads);
            for (size_t k = 0; k < b; ++k) {
                const size_t idx = order[b0 + k];
                std::vector<double> drecon(size_t(h) * w * cfg.model.channels, 0.0);
                if (use_feat) {
                    const std::vector<double> dr =
                        embed_vjp(phi, emb_caches[k], dfh.row(k), h, w);
                    for (size_t j = 0; j < drecon.size(); ++j) drecon[j] += dr[j];
                }
                if (use_mse) {
                    const std::vector<double> img = ds.image_f64(idx);
                    const std::vector<double> dm =
                        mse_loss_grad(recons[k], img.data(), h, w, cfg.model.channels,
                                      cfg.model.patch_size, caches[k].pattern);
                    const double s = mse_w / double(b);
                    for (size_t j = 0; j < drecon.size(); ++j) drecon[j] += s * dm[j];
                }
                backward(res.params, cfg.model, caches[k], drecon, grads);
            }

            const double epoch_f =
                double(epoch) + double(step + 1) / double(steps_per_epoch);
            const double lr = lr_at(cfg.optim, epoch_f);
            opt_step(res.params, grads, st, lr);
            res.history.push_back({global_step, loss, lr});
            ++global_step;
        }
    }
    return res;
}

}  // namespace fm
