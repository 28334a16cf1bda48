#include "facemae/autoenc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fm {

void ModelConfig::validate() const {
    if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
    if (d_enc < 4 || d_dec < 4) throw ConfigError("d_enc and d_dec must be >= 4");
    if (enc_depth < 1 || dec_depth < 1) throw ConfigError("block depths must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
}

std::vector<std::pair<std::string, std::vector<uint32_t>>> expected_tensors(
    const ModelConfig& cfg) {
    cfg.validate();
    const auto pd = uint32_t(cfg.patch_dim());
    const auto de = uint32_t(cfg.d_enc), dd = uint32_t(cfg.d_dec);
    std::vector<std::pair<std::string, std::vector<uint32_t>>> out;
    out.push_back({"patch_embed.w", {de, pd}});
    out.push_back({"patch_embed.b", {de}});
    auto block = [&out](const std::string& pre, uint32_t d) {
        out.push_back({pre + ".attn.wq", {d, d}});
        out.push_back({pre + ".attn.wk", {d, d}});
        out.push_back({pre + ".attn.wv", {d, d}});
        out.push_back({pre + ".attn.wo", {d, d}});
        out.push_back({pre + ".mlp.w1", {2 * d, d}});
        out.push_back({pre + ".mlp.b1", {2 * d}});
        out.push_back({pre + ".mlp.w2", {d, 2 * d}});
        out.push_back({pre + ".mlp.b2", {d}});
    };
    for (int i = 0; i < cfg.enc_depth; ++i) block("enc" + std::to_string(i), de);
    out.push_back({"proj.w", {dd, de}});
    out.push_back({"proj.b", {dd}});
    out.push_back({"mask_token", {dd}});
    for (int i = 0; i < cfg.dec_depth; ++i) block("dec" + std::to_string(i), dd);
    out.push_back({"head.w", {pd, dd}});
    out.push_back({"head.b", {pd}});
    return out;
}

TensorMap init_params(const ModelConfig& cfg) {
    TensorMap params;
    Rng rng(cfg.seed);
    for (const auto& [name, dims] : expected_tensors(cfg)) {
        Tensor& t = params.add(name, dims);
        if (dims.size() == 2) {
            const double scale = 1.0 / std::sqrt(double(dims[1]));
            for (auto& w : t.v) w = scale * rng.gaussian();
        }
        // rank-1 tensors (biases, mask token) stay zero
    }
    return params;
}

namespace {

// 1-D sinusoidal encoding of an integer position into L slots
void enc1d(double pos, int L, double* out) {
    for (int j = 0; j < L; ++j) {
        const double freq = std::pow(10000.0, -double(2 * (j / 2)) / double(L));
        const double a = pos * freq;
        out[j] = (j % 2 == 0) ? std::sin(a) : std::cos(a);
    }
}

void colsum_add(const std::vector<double>& a, size_t T, size_t d, double* out) {
    for (size_t i = 0; i < T; ++i) {
        const double* row = a.data() + i * d;
        for (size_t j = 0; j < d; ++j) out[j] += row[j];
    }
}

void add_bias_rows(std::vector<double>& x, size_t T, size_t d, const Tensor& b) {
    for (size_t i = 0; i < T; ++i) {
        double* row = x.data() + i * d;
        for (size_t j = 0; j < d; ++j) row[j] += b.v[j];
    }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

}  // namespace

std::vector<double> posenc_2d(int rows, int cols, int d) {
    const int lr = (d + 1) / 2, lc = d - lr;
    std::vector<double> pe(size_t(rows) * cols * d);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double* row = pe.data() + (size_t(r) * cols + c) * d;
            enc1d(double(r), lr, row);
            enc1d(double(c), lc, row + lr);
        }
    return pe;
}

BlockRefs block_refs(const TensorMap& params, const std::string& prefix) {
    return BlockRefs{&params.at(prefix + ".attn.wq"), &params.at(prefix + ".attn.wk"),
                     &params.at(prefix + ".attn.wv"), &params.at(prefix + ".attn.wo"),
                     &params.at(prefix + ".mlp.w1"),  &params.at(prefix + ".mlp.b1"),
                     &params.at(prefix + ".mlp.w2"),  &params.at(prefix + ".mlp.b2")};
}

BlockGradRefs block_grad_refs(TensorMap& grads, const std::string& prefix) {
    return BlockGradRefs{&grads.at(prefix + ".attn.wq"), &grads.at(prefix + ".attn.wk"),
                         &grads.at(prefix + ".attn.wv"), &grads.at(prefix + ".attn.wo"),
                         &grads.at(prefix + ".mlp.w1"),  &grads.at(prefix + ".mlp.b1"),
                         &grads.at(prefix + ".mlp.w2"),  &grads.at(prefix + ".mlp.b2")};
}

void block_forward(const BlockRefs& w, const std::vector<double>& x, size_t T, size_t d,
                   BlockCache& c, std::vector<double>& out) {
    const size_t hidden = 2 * d;
    c.T = T;
    c.d = d;
    c.x_in = x;
    c.q.assign(T * d, 0.0);
    c.k.assign(T * d, 0.0);
    c.v.assign(T * d, 0.0);
    matmul_nt(x.data(), w.wq->v.data(), c.q.data(), T, d, d);
    matmul_nt(x.data(), w.wk->v.data(), c.k.data(), T, d, d);
    matmul_nt(x.data(), w.wv->v.data(), c.v.data(), T, d, d);

    const double scale = 1.0 / std::sqrt(double(d));
    c.p.assign(T * T, 0.0);
    for (size_t i = 0; i < T; ++i) {
        double* pi = c.p.data() + i * T;
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < T; ++j) {
            pi[j] = dot(c.q.data() + i * d, c.k.data() + j * d, d) * scale;
            mx = std::max(mx, pi[j]);
        }
        double den = 0.0;
        for (size_t j = 0; j < T; ++j) {
            pi[j] = std::exp(pi[j] - mx);
            den += pi[j];
        }
        for (size_t j = 0; j < T; ++j) pi[j] /= den;
    }
    c.att.assign(T * d, 0.0);
    matmul_nn(c.p.data(), c.v.data(), c.att.data(), T, T, d);
    std::vector<double> o(T * d, 0.0);
    matmul_nt(c.att.data(), w.wo->v.data(), o.data(), T, d, d);
    c.x_mid.resize(T * d);
    for (size_t i = 0; i < T * d; ++i) c.x_mid[i] = (x[i] + o[i]) * kInvSqrt2;

    std::vector<double> a1(T * hidden, 0.0);
    matmul_nt(c.x_mid.data(), w.w1->v.data(), a1.data(), T, d, hidden);
    add_bias_rows(a1, T, hidden, *w.b1);
    c.h.resize(T * hidden);
    for (size_t i = 0; i < T * hidden; ++i) c.h[i] = std::tanh(a1[i]);
    std::vector<double> m(T * d, 0.0);
    matmul_nt(c.h.data(), w.w2->v.data(), m.data(), T, hidden, d);
    add_bias_rows(m, T, d, *w.b2);
    out.resize(T * d);
    for (size_t i = 0; i < T * d; ++i) out[i] = (c.x_mid[i] + m[i]) * kInvSqrt2;
}

void block_backward(const BlockRefs& w, const BlockCache& c,
                    const std::vector<double>& dout, std::vector<double>& dx,
                    const BlockGradRefs& g) {
    const size_t T = c.T, d = c.d, hidden = 2 * d;

    // out = (x_mid + mlp(x_mid)) / sqrt(2)
    std::vector<double> dm(T * d), dxm(T * d);
    for (size_t i = 0; i < T * d; ++i) {
        dm[i] = dout[i] * kInvSqrt2;
        dxm[i] = dout[i] * kInvSqrt2;
    }
    std::vector<double> dh(T * hidden, 0.0);
    matmul_nn(dm.data(), w.w2->v.data(), dh.data(), T, d, hidden);
    matmul_tn(dm.data(), c.h.data(), g.w2->v.data(), d, T, hidden);
    colsum_add(dm, T, d, g.b2->v.data());
    std::vector<double> da1(T * hidden);
    for (size_t i = 0; i < T * hidden; ++i) da1[i] = dh[i] * (1.0 - c.h[i] * c.h[i]);
    matmul_nn(da1.data(), w.w1->v.data(), dxm.data(), T, hidden, d);
    matmul_tn(da1.data(), c.x_mid.data(), g.w1->v.data(), hidden, T, d);
    colsum_add(da1, T, hidden, g.b1->v.data());

    // x_mid = (x_in + att Wo^T) / sqrt(2)
    std::vector<double> do_(T * d);
    dx.assign(T * d, 0.0);
    for (size_t i = 0; i < T * d; ++i) {
        do_[i] = dxm[i] * kInvSqrt2;
        dx[i] = dxm[i] * kInvSqrt2;
    }
    std::vector<double> datt(T * d, 0.0);
    matmul_nn(do_.data(), w.wo->v.data(), datt.data(), T, d, d);
    matmul_tn(do_.data(), c.att.data(), g.wo->v.data(), d, T, d);

    // att = P V
    std::vector<double> dp(T * T, 0.0), dv(T * d, 0.0);
    matmul_nt(datt.data(), c.v.data(), dp.data(), T, d, T);
    matmul_tn(c.p.data(), datt.data(), dv.data(), T, T, d);

    // softmax rows; fold in the 1/sqrt(d) score scale
    const double scale = 1.0 / std::sqrt(double(d));
    for (size_t i = 0; i < T; ++i) {
        double* dpi = dp.data() + i * T;
        const double* pi = c.p.data() + i * T;
        const double acc = dot(dpi, pi, T);
        for (size_t j = 0; j < T; ++j) dpi[j] = pi[j] * (dpi[j] - acc) * scale;
    }
    std::vector<double> dq(T * d, 0.0), dk(T * d, 0.0);
    matmul_nn(dp.data(), c.k.data(), dq.data(), T, T, d);
    matmul_tn(dp.data(), c.q.data(), dk.data(), T, T, d);

    matmul_nn(dq.data(), w.wq->v.data(), dx.data(), T, d, d);
    matmul_nn(dk.data(), w.wk->v.data(), dx.data(), T, d, d);
    matmul_nn(dv.data(), w.wv->v.data(), dx.data(), T, d, d);
    matmul_tn(dq.data(), c.x_in.data(), g.wq->v.data(), d, T, d);
    matmul_tn(dk.data(), c.x_in.data(), g.wk->v.data(), d, T, d);
    matmul_tn(dv.data(), c.x_in.data(), g.wv->v.data(), d, T, d);
}

std::vector<double> forward(const TensorMap& params, const ModelConfig& cfg,
                            const double* img, int h, int w,
                            const MaskPattern& pattern, ForwardCache& c) {
    cfg.validate();
    c.grid = PatchGrid::for_image(h, w, cfg.patch_size);
    if (uint32_t(c.grid.n_patches()) != pattern.n_patches)
        throw ShapeError("mask pattern covers " + std::to_string(pattern.n_patches) +
                         " patches, image has " + std::to_string(c.grid.n_patches()));
    c.pattern = pattern;
    const size_t pd = size_t(cfg.patch_dim());
    const size_t n = size_t(c.grid.n_patches());
    const size_t de = size_t(cfg.d_enc), dd = size_t(cfg.d_dec);

    c.tokens = patchify(img, h, w, cfg.channels, cfg.patch_size);
    auto [vis_tokens, vis] = apply_mask(c.tokens, uint32_t(pd), pattern);
    c.vis_tokens = std::move(vis_tokens);
    c.vis = std::move(vis);
    const size_t tv = c.vis.size();

    c.pe_enc = posenc_2d(c.grid.rows, c.grid.cols, cfg.d_enc);
    c.pe_dec = posenc_2d(c.grid.rows, c.grid.cols, cfg.d_dec);

    // embed visible tokens, add positions of their original grid slots
    c.enc_x0.assign(tv * de, 0.0);
    matmul_nt(c.vis_tokens.data(), params.at("patch_embed.w").v.data(), c.enc_x0.data(),
              tv, pd, de);
    const Tensor& peb = params.at("patch_embed.b");
    for (size_t i = 0; i < tv; ++i) {
        double* row = c.enc_x0.data() + i * de;
        const double* pe = c.pe_enc.data() + size_t(c.vis[i]) * de;
        for (size_t j = 0; j < de; ++j) row[j] += peb.v[j] + pe[j];
    }

    c.enc_blocks.assign(size_t(cfg.enc_depth), BlockCache{});
    std::vector<double> x = c.enc_x0;
    for (int b = 0; b < cfg.enc_depth; ++b) {
        std::vector<double> nx;
        block_forward(block_refs(params, "enc" + std::to_string(b)), x, tv, de,
                      c.enc_blocks[size_t(b)], nx);
        x = std::move(nx);
    }
    c.enc_out = std::move(x);

    c.proj_out.assign(tv * dd, 0.0);
    matmul_nt(c.enc_out.data(), params.at("proj.w").v.data(), c.proj_out.data(), tv, de,
              dd);
    add_bias_rows(c.proj_out, tv, dd, params.at("proj.b"));

    // full-length decoder input: projected visible tokens in their original
    // slots, the mask token elsewhere, positions added everywhere
    const Tensor& mtok = params.at("mask_token");
    c.dec_x0.assign(n * dd, 0.0);
    size_t vi = 0;
    for (size_t p = 0; p < n; ++p) {
        double* row = c.dec_x0.data() + p * dd;
        const double* pe = c.pe_dec.data() + p * dd;
        if (vi < tv && c.vis[vi] == p) {
            const double* src = c.proj_out.data() + vi * dd;
            for (size_t j = 0; j < dd; ++j) row[j] = src[j] + pe[j];
            ++vi;
        } else {
            for (size_t j = 0; j < dd; ++j) row[j] = mtok.v[j] + pe[j];
        }
    }

    c.dec_blocks.assign(size_t(cfg.dec_depth), BlockCache{});
    std::vector<double> y = c.dec_x0;
    for (int b = 0; b < cfg.dec_depth; ++b) {
        std::vector<double> ny;
        block_forward(block_refs(params, "dec" + std::to_string(b)), y, n, dd,
                      c.dec_blocks[size_t(b)], ny);
        y = std::move(ny);
    }
    c.dec_out = std::move(y);

    c.pred.assign(n * pd, 0.0);
    matmul_nt(c.dec_out.data(), params.at("head.w").v.data(), c.pred.data(), n, dd, pd);
    add_bias_rows(c.pred, n, pd, params.at("head.b"));

    // paste: predicted pixels at masked slots, original pixels at visible ones
    std::vector<double> out_tokens(n * pd);
    for (size_t p = 0; p < n; ++p) {
        const double* src = c.pattern.is_masked(uint32_t(p)) ? c.pred.data() + p * pd
                                                             : c.tokens.data() + p * pd;
        std::copy(src, src + pd, out_tokens.data() + p * pd);
    }
    return unpatchify(out_tokens, c.grid.rows, c.grid.cols, cfg.patch_size, cfg.channels);
}

double mse_loss(const std::vector<double>& recon, const double* orig, int h, int w,
                int c, int patch_size, const MaskPattern& pattern) {
    const std::vector<double> rt = patchify(recon.data(), h, w, c, patch_size);
    const std::vector<double> ot = patchify(orig, h, w, c, patch_size);
    const size_t pd = size_t(patch_size) * patch_size * c;
    if (pattern.masked.empty()) return 0.0;
    double s = 0.0;
    for (uint32_t p : pattern.masked) {
        const double* r = rt.data() + size_t(p) * pd;
        const double* o = ot.data() + size_t(p) * pd;
        for (size_t j = 0; j < pd; ++j) {
            const double e = r[j] - o[j];
            s += e * e;
        }
    }
    return s / (double(pattern.masked.size()) * double(pd));
}

std::vector<double> mse_loss_grad(const std::vector<double>& recon, const double* orig,
                                  int h, int w, int c, int patch_size,
                                  const MaskPattern& pattern) {
    const PatchGrid grid = PatchGrid::for_image(h, w, patch_size);
    const std::vector<double> rt = patchify(recon.data(), h, w, c, patch_size);
    const std::vector<double> ot = patchify(orig, h, w, c, patch_size);
    const size_t pd = size_t(patch_size) * patch_size * c;
    std::vector<double> dt(rt.size(), 0.0);
    if (!pattern.masked.empty()) {
        const double inv = 1.0 / (double(pattern.masked.size()) * double(pd));
        for (uint32_t p : pattern.masked) {
            const double* r = rt.data() + size_t(p) * pd;
            const double* o = ot.data() + size_t(p) * pd;
            double* d = dt.data() + size_t(p) * pd;
            for (size_t j = 0; j < pd; ++j) d[j] = 2.0 * (r[j] - o[j]) * inv;
        }
    }
    return unpatchify(dt, grid.rows, grid.cols, patch_size, c);
}

void backward(const TensorMap& params, const ModelConfig& cfg, const ForwardCache& c,
              const std::vector<double>& drecon, TensorMap& grads) {
    const size_t pd = size_t(cfg.patch_dim());
    const size_t n = size_t(c.grid.n_patches());
    const size_t de = size_t(cfg.d_enc), dd = size_t(cfg.d_dec);
    const size_t tv = c.vis.size();

    // gradient reaches the model only through predicted patches at masked slots
    std::vector<double> dpred = patchify(drecon.data(), c.grid.rows * cfg.patch_size,
                                         c.grid.cols * cfg.patch_size, cfg.channels,
                                         cfg.patch_size);
    for (size_t p = 0; p < n; ++p)
        if (!c.pattern.is_masked(uint32_t(p)))
            std::fill_n(dpred.data() + p * pd, pd, 0.0);

    std::vector<double> ddec(n * dd, 0.0);
    matmul_nn(dpred.data(), params.at("head.w").v.data(), ddec.data(), n, pd, dd);
    matmul_tn(dpred.data(), c.dec_out.data(), grads.at("head.w").v.data(), pd, n, dd);
    colsum_add(dpred, n, pd, grads.at("head.b").v.data());

    for (int b = cfg.dec_depth - 1; b >= 0; --b) {
        std::vector<double> dxn;
        block_backward(block_refs(params, "dec" + std::to_string(b)),
                       c.dec_blocks[size_t(b)], ddec, dxn,
                       block_grad_refs(grads, "dec" + std::to_string(b)));
        ddec = std::move(dxn);
    }

    // split decoder-input gradient between projected visible tokens and the
    // shared mask token (positional terms are constants)
    std::vector<double> dproj(tv * dd, 0.0);
    Tensor& gmask = grads.at("mask_token");
    size_t vi = 0;
    for (size_t p = 0; p < n; ++p) {
        const double* row = ddec.data() + p * dd;
        if (vi < tv && c.vis[vi] == p) {
            std::copy(row, row + dd, dproj.data() + vi * dd);
            ++vi;
        } else {
            for (size_t j = 0; j < dd; ++j) gmask.v[j] += row[j];
        }
    }

    std::vector<double> denc(tv * de, 0.0);
    matmul_nn(dproj.data(), params.at("proj.w").v.data(), denc.data(), tv, dd, de);
    matmul_tn(dproj.data(), c.enc_out.data(), grads.at("proj.w").v.data(), dd, tv, de);
    colsum_add(dproj, tv, dd, grads.at("proj.b").v.data());

    for (int b = cfg.enc_depth - 1; b >= 0; --b) {
        std::vector<double> dxn;
        block_backward(block_refs(params, "enc" + std::to_string(b)),
                       c.enc_blocks[size_t(b)], denc, dxn,
                       block_grad_refs(grads, "enc" + std::to_string(b)));
        denc = std::move(dxn);
    }

    matmul_tn(denc.data(), c.vis_tokens.data(), grads.at("patch_embed.w").v.data(), de,
              tv, pd);
    colsum_add(denc, tv, de, grads.at("patch_embed.b").v.data());
}

TensorMap zero_like(const TensorMap& params) {
    TensorMap out;
    for (const auto& [name, t] : params.items) out.add(name, t.dims);
    return out;
}

void zero_all(TensorMap& grads) {
    for (auto& [name, t] : grads.items) std::fill(t.v.begin(), t.v.end(), 0.0);
}

double lr_at(const OptimConfig& cfg, double epoch_f) {
    const double total = double(std::max(cfg.total_epochs, 1));
    const double warm = double(cfg.warmup_epochs);
    if (warm > 0.0 && epoch_f < warm) return cfg.base_lr * (epoch_f / warm);
    const double span = std::max(total - warm, 1e-12);
    const double t = std::clamp((epoch_f - warm) / span, 0.0, 1.0);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

void OptimState::init_like(const TensorMap& params) {
    step = 0;
    m.assign(params.items.size(), {});
    v.assign(params.items.size(), {});
    for (size_t i = 0; i < params.items.size(); ++i) {
        m[i].assign(params.items[i].second.v.size(), 0.0);
        v[i].assign(params.items[i].second.v.size(), 0.0);
    }
}

void opt_step(TensorMap& params, const TensorMap& grads, OptimState& st, double lr) {
    if (params.items.size() != grads.items.size() ||
        params.items.size() != st.m.size())
        throw ShapeError("opt_step: parameter/gradient/state layout mismatch");
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.cfg.beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(st.cfg.beta2, double(st.step));
    for (size_t i = 0; i < params.items.size(); ++i) {
        Tensor& p = params.items[i].second;
        const Tensor& g = grads.items[i].second;
        const bool decay = p.dims.size() == 2;
        for (size_t j = 0; j < p.v.size(); ++j) {
            double& m = st.m[i][j];
            double& v = st.v[i][j];
            m = st.cfg.beta1 * m + (1.0 - st.cfg.beta1) * g.v[j];
            v = st.cfg.beta2 * v + (1.0 - st.cfg.beta2) * g.v[j] * g.v[j];
            p.v[j] -= lr * ((m / bc1) / (std::sqrt(v / bc2) + st.cfg.eps));
            if (decay) p.v[j] -= lr * st.cfg.weight_decay * p.v[j];
        }
    }
}

void save_model(const TensorMap& params, const ModelConfig& cfg, uint32_t train_fp,
                const std::string& path) {
    TensorMap out;
    Tensor& meta = out.add("model.meta", {8});
    meta.v = {double(cfg.patch_size), double(cfg.d_enc),     double(cfg.d_dec),
              double(cfg.enc_depth),  double(cfg.dec_depth), double(cfg.channels),
              double(train_fp & 0xFFFFu), double(train_fp >> 16)};
    for (const auto& [name, t] : params.items) {
        Tensor& dst = out.add(name, t.dims);
        dst.v = t.v;
    }
    write_params(out, path);
}

LoadedModel load_model(const std::string& path) {
    TensorMap map = read_params(path);
    if (!map.has("model.meta")) throw FormatError("checkpoint missing model.meta");
    const Tensor& meta = map.at("model.meta");
    if (meta.v.size() != 8) throw FormatError("model.meta must hold 8 values");
    LoadedModel lm;
    lm.cfg.patch_size = int(meta.v[0]);
    lm.cfg.d_enc = int(meta.v[1]);
    lm.cfg.d_dec = int(meta.v[2]);
    lm.cfg.enc_depth = int(meta.v[3]);
    lm.cfg.dec_depth = int(meta.v[4]);
    lm.cfg.channels = int(meta.v[5]);
    lm.train_fp = uint32_t(meta.v[6]) | (uint32_t(meta.v[7]) << 16);
    try {
        lm.cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint architecture invalid: ") + e.what());
    }
    const auto expected = expected_tensors(lm.cfg);
    if (map.items.size() != expected.size() + 1)
        throw FormatError("checkpoint tensor count mismatch");
    for (const auto& [name, dims] : expected) {
        if (!map.has(name)) throw FormatError("checkpoint missing tensor " + name);
        const Tensor& src = map.at(name);
        if (src.dims != dims) throw FormatError("checkpoint tensor " + name +
                                                " has unexpected shape");
        Tensor& dst = lm.params.add(name, dims);
        dst.v = src.v;
    }
    return lm;
}

}  // namespace fm
