#include "facemae/veriface.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace fm {

PairSet gen_pairs(const Dataset& ds, uint32_t n_pos, uint32_t n_neg, uint64_t seed) {
    ds.validate();
    std::vector<Pair> pos, neg;
    for (uint32_t i = 0; i < ds.n; ++i)
        for (uint32_t j = i + 1; j < ds.n; ++j) {
            if (ds.labels[i] == ds.labels[j])
                pos.push_back({i, j, 1});
            else
                neg.push_back({i, j, 0});
        }
    if (n_pos > pos.size())
        throw InvariantError("requested " + std::to_string(n_pos) +
                             " positive pairs, only " + std::to_string(pos.size()) +
                             " exist");
    if (n_neg > neg.size())
        throw InvariantError("requested " + std::to_string(n_neg) +
                             " negative pairs, only " + std::to_string(neg.size()) +
                             " exist");
    Rng rp(mix64(seed, 1));
    shuffle_prefix(pos, n_pos, rp);
    Rng rn(mix64(seed, 2));
    shuffle_prefix(neg, n_neg, rn);
    PairSet out;
    out.n_pos = n_pos;
    out.n_neg = n_neg;
    out.pairs.assign(pos.begin(), pos.begin() + n_pos);
    out.pairs.insert(out.pairs.end(), neg.begin(), neg.begin() + n_neg);
    return out;
}

void RecognizerConfig::validate() const {
    if (pool_grid < 2) throw ConfigError("pool_grid must be >= 2");
    if (hidden < 2) throw ConfigError("hidden must be >= 2");
    if (emb_dim < 2) throw ConfigError("emb_dim must be >= 2");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (optim.total_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (optim.warmup_epochs < 0 || optim.warmup_epochs > optim.total_epochs)
        throw ConfigError("warmup_epochs must be in [0, epochs]");
}

namespace {

TensorMap init_recognizer(const RecognizerConfig& cfg, uint32_t in_dim,
                          uint32_t n_classes) {
    TensorMap params;
    Rng rng(cfg.seed);
    auto layer = [&](const std::string& wname, const std::string& bname, uint32_t out,
                     uint32_t in) {
        Tensor& t = params.add(wname, {out, in});
        const double scale = 1.0 / std::sqrt(double(in));
        for (auto& w : t.v) w = scale * rng.gaussian();
        params.add(bname, {out});
    };
    layer("phi.w1", "phi.b1", uint32_t(cfg.hidden), in_dim);
    layer("phi.w2", "phi.b2", uint32_t(cfg.emb_dim), uint32_t(cfg.hidden));
    layer("cls.w", "cls.b", n_classes, uint32_t(cfg.emb_dim));
    return params;
}

struct RecCache {
    std::vector<double> pooled, h, emb, prob;
};

// returns the softmax probabilities' cross-entropy target row filled in cache
void rec_forward(const TensorMap& params, const RecognizerConfig& cfg, const double* img,
                 int h, int w, int c, RecCache& cache) {
    cache.pooled = avgpool_grid(img, h, w, c, cfg.pool_grid);
    const Tensor& w1 = params.at("phi.w1");
    const Tensor& b1 = params.at("phi.b1");
    const size_t in = cache.pooled.size();
    cache.h.assign(size_t(cfg.hidden), 0.0);
    for (size_t i = 0; i < cache.h.size(); ++i)
        cache.h[i] = std::tanh(dot(w1.v.data() + i * in, cache.pooled.data(), in) +
                               b1.v[i]);
    const Tensor& w2 = params.at("phi.w2");
    const Tensor& b2 = params.at("phi.b2");
    cache.emb.assign(size_t(cfg.emb_dim), 0.0);
    for (size_t i = 0; i < cache.emb.size(); ++i)
        cache.emb[i] = dot(w2.v.data() + i * cache.h.size(), cache.h.data(),
                           cache.h.size()) +
                       b2.v[i];
    const Tensor& wc = params.at("cls.w");
    const Tensor& bc = params.at("cls.b");
    const size_t ncls = bc.v.size();
    cache.prob.assign(ncls, 0.0);
    double mx = -1e300;
    for (size_t i = 0; i < ncls; ++i) {
        cache.prob[i] = dot(wc.v.data() + i * cache.emb.size(), cache.emb.data(),
                            cache.emb.size()) +
                        bc.v[i];
        mx = std::max(mx, cache.prob[i]);
    }
    double den = 0.0;
    for (auto& p : cache.prob) {
        p = std::exp(p - mx);
        den += p;
    }
    for (auto& p : cache.prob) p /= den;
}

// dloss = (1/B) * cross-entropy at target; accumulates parameter grads
void rec_backward(const TensorMap& params, const RecognizerConfig& cfg,
                  const RecCache& cache, size_t target, double inv_batch,
                  TensorMap& grads) {
    const size_t ncls = cache.prob.size();
    const size_t de = cache.emb.size(), dh = cache.h.size(), in = cache.pooled.size();
    std::vector<double> dz(cache.prob);
    dz[target] -= 1.0;
    for (auto& g : dz) g *= inv_batch;

    const Tensor& wc = params.at("cls.w");
    Tensor& gwc = grads.at("cls.w");
    Tensor& gbc = grads.at("cls.b");
    std::vector<double> demb(de, 0.0);
    for (size_t i = 0; i < ncls; ++i) {
        const double* wr = wc.v.data() + i * de;
        double* gr = gwc.v.data() + i * de;
        for (size_t j = 0; j < de; ++j) {
            gr[j] += dz[i] * cache.emb[j];
            demb[j] += dz[i] * wr[j];
        }
        gbc.v[i] += dz[i];
    }

    const Tensor& w2 = params.at("phi.w2");
    Tensor& gw2 = grads.at("phi.w2");
    Tensor& gb2 = grads.at("phi.b2");
    std::vector<double> dhid(dh, 0.0);
    for (size_t i = 0; i < de; ++i) {
        const double* wr = w2.v.data() + i * dh;
        double* gr = gw2.v.data() + i * dh;
        for (size_t j = 0; j < dh; ++j) {
            gr[j] += demb[i] * cache.h[j];
            dhid[j] += demb[i] * wr[j];
        }
        gb2.v[i] += demb[i];
    }

    Tensor& gw1 = grads.at("phi.w1");
    Tensor& gb1 = grads.at("phi.b1");
    for (size_t i = 0; i < dh; ++i) {
        const double da = dhid[i] * (1.0 - cache.h[i] * cache.h[i]);
        double* gr = gw1.v.data() + i * in;
        for (size_t j = 0; j < in; ++j) gr[j] += da * cache.pooled[j];
        gb1.v[i] += da;
    }
}

}  // namespace

RecognizerResult train_recognizer(const Dataset& ds, const RecognizerConfig& cfg) {
    cfg.validate();
    ds.validate();
    if (ds.n == 0) throw InvariantError("cannot train on an empty dataset");

    RecognizerResult res;
    res.cfg = cfg;
    res.classes = ds.labels;
    std::sort(res.classes.begin(), res.classes.end());
    res.classes.erase(std::unique(res.classes.begin(), res.classes.end()),
                      res.classes.end());
    if (res.classes.size() < 2)
        throw InvariantError("recognizer training needs >= 2 identities");
    std::map<uint32_t, size_t> class_of;
    for (size_t i = 0; i < res.classes.size(); ++i) class_of[res.classes[i]] = i;

    const auto in_dim = uint32_t(cfg.pool_grid * cfg.pool_grid * ds.channels);
    res.params = init_recognizer(cfg, in_dim, uint32_t(res.classes.size()));
    TensorMap grads = zero_like(res.params);
    OptimState st;
    st.cfg = cfg.optim;
    st.init_like(res.params);

    const uint64_t order_root = mix64(cfg.seed, 2);
    const size_t n = ds.n;
    const size_t bsz = std::min<size_t>(cfg.batch_size, n);
    const size_t steps_per_epoch = (n + bsz - 1) / bsz;
    std::vector<size_t> order(n);
    RecCache cache;
    uint64_t global_step = 0;

    for (int epoch = 0; epoch < cfg.optim.total_epochs; ++epoch) {
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng order_rng(mix64(order_root, uint64_t(epoch)));
        shuffle_all(order, order_rng);
        for (size_t step = 0; step < steps_per_epoch; ++step) {
            const size_t b0 = step * bsz;
            const size_t b = std::min(bsz, n - b0);
            zero_all(grads);
            double loss = 0.0;
            for (size_t k = 0; k < b; ++k) {
                const size_t idx = order[b0 + k];
                const std::vector<double> img = ds.image_f64(idx);
                rec_forward(res.params, cfg, img.data(), ds.height, ds.width,
                            ds.channels, cache);
                const size_t target = class_of.at(ds.labels[idx]);
                loss -= std::log(std::max(cache.prob[target], 1e-300)) / double(b);
                rec_backward(res.params, cfg, cache, target, 1.0 / double(b), grads);
            }
            if (!std::isfinite(loss))
                throw NumericError("non-finite loss at step " +
                                   std::to_string(global_step));
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

double classifier_accuracy(const RecognizerResult& r, const Dataset& ds) {
    std::map<uint32_t, size_t> class_of;
    for (size_t i = 0; i < r.classes.size(); ++i) class_of[r.classes[i]] = i;
    RecCache cache;
    size_t ok = 0;
    for (size_t i = 0; i < ds.n; ++i) {
        const std::vector<double> img = ds.image_f64(i);
        rec_forward(r.params, r.cfg, img.data(), ds.height, ds.width, ds.channels,
                    cache);
        const size_t pred = size_t(
            std::max_element(cache.prob.begin(), cache.prob.end()) - cache.prob.begin());
        const auto it = class_of.find(ds.labels[i]);
        if (it != class_of.end() && it->second == pred) ++ok;
    }
    return ds.n ? double(ok) / double(ds.n) : 0.0;
}

EmbedderSpec recognizer_to_embedder(const RecognizerResult& r) {
    const Tensor& w1 = r.params.at("phi.w1");
    const Tensor& b1 = r.params.at("phi.b1");
    const Tensor& w2 = r.params.at("phi.w2");
    const Tensor& b2 = r.params.at("phi.b2");
    EmbedderSpec spec;
    spec.pool_grid = r.cfg.pool_grid;
    spec.channels = int(w1.dims[1] / uint32_t(r.cfg.pool_grid * r.cfg.pool_grid));
    spec.d1 = w1.dims[0];
    spec.d_out = w2.dims[0];
    spec.has_second = true;
    spec.w1.resize(w1.v.size());
    for (size_t i = 0; i < w1.v.size(); ++i) spec.w1[i] = float(w1.v[i]);
    spec.b1.resize(b1.v.size());
    for (size_t i = 0; i < b1.v.size(); ++i) spec.b1[i] = float(b1.v[i]);
    spec.w2.resize(w2.v.size());
    for (size_t i = 0; i < w2.v.size(); ++i) spec.w2[i] = float(w2.v[i]);
    spec.b2.resize(b2.v.size());
    for (size_t i = 0; i < b2.v.size(); ++i) spec.b2[i] = float(b2.v[i]);
    return spec;
}

VerifyResult verification_accuracy(const EmbeddingSet& es, const PairSet& pairs,
                                   int folds, uint64_t seed) {
    if (folds < 2) throw ConfigError("folds must be >= 2");
    const size_t np = pairs.pairs.size();
    if (np < size_t(folds))
        throw InvariantError("need at least " + std::to_string(folds) + " pairs");
    for (const Pair& p : pairs.pairs)
        if (p.a >= es.n || p.b >= es.n)
            throw ShapeError("pair index exceeds embedding set");

    // cosine similarity per pair
    std::vector<double> sims(np);
    std::vector<uint8_t> same(np);
    std::vector<double> ra(es.dim), rb(es.dim);
    for (size_t i = 0; i < np; ++i) {
        const Pair& p = pairs.pairs[i];
        for (size_t j = 0; j < es.dim; ++j) {
            ra[j] = double(es.row(p.a)[j]);
            rb[j] = double(es.row(p.b)[j]);
        }
        const double na = std::sqrt(dot(ra.data(), ra.data(), es.dim));
        const double nb = std::sqrt(dot(rb.data(), rb.data(), es.dim));
        sims[i] = (na > 0.0 && nb > 0.0)
                      ? dot(ra.data(), rb.data(), es.dim) / (na * nb)
                      : 0.0;
        same[i] = p.same;
    }

    // seeded shuffle, then contiguous folds
    std::vector<size_t> order(np);
    for (size_t i = 0; i < np; ++i) order[i] = i;
    Rng rng(seed);
    shuffle_all(order, rng);

    VerifyResult out;
    for (int f = 0; f < folds; ++f) {
        const size_t lo = np * size_t(f) / size_t(folds);
        const size_t hi = np * size_t(f + 1) / size_t(folds);

        // sort the selection split (everything outside [lo,hi)) by similarity
        std::vector<std::pair<double, uint8_t>> train;
        train.reserve(np - (hi - lo));
        for (size_t i = 0; i < np; ++i)
            if (i < lo || i >= hi) train.push_back({sims[order[i]], same[order[i]]});
        std::sort(train.begin(), train.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        const size_t nt = train.size();
        // suffix_pos[i] = positives at or after i; prefix_neg via counting
        std::vector<size_t> suffix_pos(nt + 1, 0);
        for (size_t i = nt; i-- > 0;)
            suffix_pos[i] = suffix_pos[i + 1] + (train[i].second ? 1 : 0);
        // split i predicts: [0,i) different, [i,nt) same; valid only between
        // distinct similarity values (or at the ends)
        size_t best_correct = 0, best_i = 0;
        bool have = false;
        size_t neg_seen = 0;
        for (size_t i = 0; i <= nt; ++i) {
            if (i > 0) neg_seen += train[i - 1].second ? 0 : 1;
            const bool valid = i == 0 || i == nt || train[i - 1].first < train[i].first;
            if (valid) {
                const size_t correct = neg_seen + suffix_pos[i];
                if (!have || correct > best_correct) {
                    best_correct = correct;
                    best_i = i;
                    have = true;
                }
            }
        }
        double thr;
        if (nt == 0)
            thr = 0.0;
        else if (best_i == 0)
            thr = train.front().first - 1.0;
        else if (best_i == nt)
            thr = train.back().first + 1.0;
        else
            thr = 0.5 * (train[best_i - 1].first + train[best_i].first);

        size_t correct = 0;
        for (size_t i = lo; i < hi; ++i) {
            const bool pred_same = sims[order[i]] > thr;
            if (pred_same == (same[order[i]] != 0)) ++correct;
        }
        out.fold_threshold.push_back(thr);
        out.fold_accuracy.push_back(hi > lo ? double(correct) / double(hi - lo) : 0.0);
    }
    double acc = 0.0;
    for (double a : out.fold_accuracy) acc += a;
    out.mean_accuracy = acc / double(folds);
    return out;
}

}  // namespace fm
