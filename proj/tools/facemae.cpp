// Pipeline driver: synth -> mask/train -> reconstruct -> embed -> audit/verify,
// plus a mask-ratio sweep that ties the privacy and utility measurements
// together. Every run is deterministic given its flags.
//
// Exit codes: 0 ok, 2 bad config/flags, 3 bad io/format/shape, 4 numeric blowup.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "facemae/autoenc.hpp"
#include "facemae/common.hpp"
#include "facemae/embedder.hpp"
#include "facemae/irmloss.hpp"
#include "facemae/patchmask.hpp"
#include "facemae/privaudit.hpp"
#include "facemae/synthfaces.hpp"
#include "facemae/tensorio.hpp"
#include "facemae/veriface.hpp"

namespace {

std::string g10(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(ch))) {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<double> parse_list_f64(const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : split_commas(s)) {
        if (tok.empty()) throw fm::ConfigError("empty entry in list '" + s + "'");
        char* end = nullptr;
        double v = std::strtod(tok.c_str(), &end);
        if (end != tok.c_str() + tok.size())
            throw fm::ConfigError("bad number '" + tok + "' in list");
        out.push_back(v);
    }
    return out;
}

std::vector<uint32_t> parse_list_u32(const std::string& s) {
    std::vector<uint32_t> out;
    for (const auto& tok : split_commas(s)) {
        if (tok.empty()) throw fm::ConfigError("empty entry in list '" + s + "'");
        char* end = nullptr;
        unsigned long v = std::strtoul(tok.c_str(), &end, 10);
        if (end != tok.c_str() + tok.size() || v == 0 || v > 0xFFFFFFFFul)
            throw fm::ConfigError("bad count '" + tok + "' in list");
        out.push_back(uint32_t(v));
    }
    return out;
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw fm::IoError("cannot open " + path + " for writing");
    f << body;
    f.flush();
    if (!f) throw fm::IoError("write failed: " + path);
}

std::string history_csv(const std::vector<fm::HistoryRow>& hist) {
    std::string s = "step,loss,lr\n";
    for (const auto& r : hist) {
        s += std::to_string(r.step);
        s += ',';
        s += g10(r.loss);
        s += ',';
        s += g10(r.lr);
        s += '\n';
    }
    return s;
}

bool same_file(const std::string& a, const std::string& b) {
    if (a == b) return true;
    std::error_code ec;
    bool eq = std::filesystem::equivalent(a, b, ec);
    return !ec && eq;
}

// ---------------------------------------------------------------------------
// shared flag bundles
// ---------------------------------------------------------------------------

struct PhiFlags {
    std::string path;
    int grid = 4;
    uint32_t dim = 64;
    uint64_t seed = 0;
};

void add_phi_flags(CLI::App* sub, PhiFlags& pf) {
    sub->add_option("--phi", pf.path, "embedder checkpoint; overrides --phi-grid/dim/seed");
    sub->add_option("--phi-grid", pf.grid, "random embedder pool grid")->capture_default_str();
    sub->add_option("--phi-dim", pf.dim, "random embedder output dim")->capture_default_str();
    sub->add_option("--phi-seed", pf.seed, "random embedder weight seed")->capture_default_str();
}

fm::EmbedderSpec resolve_phi(const PhiFlags& pf, int channels) {
    if (!pf.path.empty()) return fm::load_external_embedder(pf.path);
    return fm::make_embedder(pf.grid, pf.dim, pf.seed, channels);
}

struct ModelFlags {
    int patch_size = 8;
    int d_enc = 64;
    int d_dec = 32;
    int enc_depth = 2;
    int dec_depth = 1;
    uint64_t init_seed = 0;
};

void add_model_flags(CLI::App* sub, ModelFlags& mf) {
    sub->add_option("--patch-size", mf.patch_size, "square patch side")->capture_default_str();
    sub->add_option("--d-enc", mf.d_enc, "encoder width")->capture_default_str();
    sub->add_option("--d-dec", mf.d_dec, "decoder width")->capture_default_str();
    sub->add_option("--enc-depth", mf.enc_depth, "encoder blocks")->capture_default_str();
    sub->add_option("--dec-depth", mf.dec_depth, "decoder blocks")->capture_default_str();
    sub->add_option("--init-seed", mf.init_seed, "weight init seed")->capture_default_str();
}

fm::ModelConfig model_cfg(const ModelFlags& mf, int channels) {
    fm::ModelConfig mc;
    mc.patch_size = mf.patch_size;
    mc.d_enc = mf.d_enc;
    mc.d_dec = mf.d_dec;
    mc.enc_depth = mf.enc_depth;
    mc.dec_depth = mf.dec_depth;
    mc.channels = channels;
    mc.seed = mf.init_seed;
    return mc;
}

struct OptimFlags {
    double lr = 1.5e-4;
    double wd = 0.05;
    int epochs = 30;
    int warmup = -1;  // <0: 20% of epochs
};

void add_optim_flags(CLI::App* sub, OptimFlags& of, const char* prefix = "") {
    std::string p(prefix);
    sub->add_option("--" + p + "base-lr", of.lr, "peak learning rate")->capture_default_str();
    sub->add_option("--" + p + "weight-decay", of.wd, "decoupled weight decay")
        ->capture_default_str();
    sub->add_option("--" + p + "epochs", of.epochs, "training epochs")->capture_default_str();
    sub->add_option("--" + p + "warmup-epochs", of.warmup,
                    "linear warmup epochs (default 20% of epochs)");
}

fm::OptimConfig optim_cfg(const OptimFlags& of) {
    fm::OptimConfig oc;
    oc.base_lr = of.lr;
    oc.weight_decay = of.wd;
    oc.total_epochs = of.epochs;
    oc.warmup_epochs = of.warmup >= 0 ? of.warmup : int(std::llround(0.2 * of.epochs));
    return oc;
}

struct RecFlags {
    int pool_grid = 4;
    int hidden = 64;
    int emb_dim = 32;
    uint32_t batch = 64;
    OptimFlags optim{0.01, 0.05, 30, -1};
    uint64_t seed = 0;
};

void add_rec_flags(CLI::App* sub, RecFlags& rf) {
    sub->add_option("--pool-grid", rf.pool_grid, "recognizer pool grid")->capture_default_str();
    sub->add_option("--hidden", rf.hidden, "recognizer hidden width")->capture_default_str();
    sub->add_option("--emb-dim", rf.emb_dim, "recognizer embedding dim")->capture_default_str();
    sub->add_option("--rec-batch-size", rf.batch, "recognizer batch size")->capture_default_str();
    add_optim_flags(sub, rf.optim, "rec-");
    sub->add_option("--rec-seed", rf.seed, "recognizer init/order seed")->capture_default_str();
}

fm::RecognizerConfig rec_cfg(const RecFlags& rf) {
    fm::RecognizerConfig rc;
    rc.pool_grid = rf.pool_grid;
    rc.hidden = rf.hidden;
    rc.emb_dim = rf.emb_dim;
    rc.batch_size = rf.batch;
    rc.optim = optim_cfg(rf.optim);
    rc.seed = rf.seed;
    return rc;
}

// --config is expanded into option tokens before CLI11 parses; this
// registration only makes it show up in --help.
void enable_config(CLI::App* sub) {
    sub->add_option("--config", "key=value file; '#' comments; explicit flags override it");
}

std::string trim_ws(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// key=value lines; '#' starts a comment; surrounding quotes on values dropped
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw fm::IoError("cannot read config file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::string body = trim_ws(line);
        if (body.empty()) continue;
        auto eq = body.find('=');
        if (eq == std::string::npos)
            throw fm::ConfigError("config line " + std::to_string(lineno) +
                                  " is not key=value: '" + body + "'");
        std::string key = trim_ws(body.substr(0, eq));
        std::string val = trim_ws(body.substr(eq + 1));
        if (key.empty())
            throw fm::ConfigError("config line " + std::to_string(lineno) + " has an empty key");
        if (val.size() >= 2 && ((val.front() == '"' && val.back() == '"') ||
                                (val.front() == '\'' && val.back() == '\'')))
            val = val.substr(1, val.size() - 2);
        for (const auto& [k, v] : out)
            if (k == key) throw fm::ConfigError("duplicate config key '" + key + "'");
        out.emplace_back(key, val);
    }
    return out;
}

// Strip --config FILE from args and splice the file's keys in as --key=value
// tokens right after the subcommand, skipping keys the command line already
// sets explicitly. Unknown keys are rejected by name.
void expand_config(const CLI::App& app, std::vector<std::string>& args) {
    const CLI::App* sub = nullptr;
    size_t sub_pos = 0;
    for (size_t i = 0; i < args.size(); ++i) {
        if (const CLI::App* s = app.get_subcommand_no_throw(args[i])) {
            sub = s;
            sub_pos = i;
            break;
        }
    }
    if (!sub) return;

    std::string cfg_path;
    for (size_t i = sub_pos + 1; i < args.size();) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw fm::ConfigError("--config needs a file argument");
            if (!cfg_path.empty()) throw fm::ConfigError("--config given more than once");
            cfg_path = args[i + 1];
            args.erase(args.begin() + i, args.begin() + i + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            if (!cfg_path.empty()) throw fm::ConfigError("--config given more than once");
            cfg_path = args[i].substr(9);
            args.erase(args.begin() + i);
        } else {
            ++i;
        }
    }
    if (cfg_path.empty()) return;

    std::vector<std::string> given;
    for (size_t i = sub_pos + 1; i < args.size(); ++i) {
        if (args[i].rfind("--", 0) != 0) continue;
        auto eq = args[i].find('=');
        given.push_back(eq == std::string::npos ? args[i] : args[i].substr(0, eq));
    }

    std::vector<std::string> inject;
    for (const auto& [key, val] : read_config_file(cfg_path)) {
        const std::string lname = "--" + key;
        if (lname == "--config" || !sub->get_option_no_throw(lname))
            throw fm::ConfigError("unknown config key '" + key + "' for '" + sub->get_name() +
                                  "'");
        if (std::find(given.begin(), given.end(), lname) != given.end()) continue;
        inject.push_back(lname + "=" + val);
    }
    args.insert(args.begin() + sub_pos + 1, inject.begin(), inject.end());
}

fm::MaskStrategy cli_strategy(const std::string& s) {
    fm::MaskStrategy st = fm::mask_strategy_from_string(s);
    if (st == fm::MaskStrategy::explicit_set)
        throw fm::ConfigError("strategy must be random, eye or mouth");
    return st;
}

fm::MaskPattern make_pattern(const fm::PatchGrid& grid, fm::MaskStrategy strat, double ratio,
                             uint64_t seed) {
    if (strat == fm::MaskStrategy::random)
        return fm::sample_random_mask(grid.n_patches(), ratio, seed);
    return fm::region_mask(grid, strat, ratio, seed);
}

float clamp01(double v) { return float(std::min(1.0, std::max(0.0, v))); }

// reconstruct every image of ds through the model; masks[i] drives image i
fm::Dataset reconstruct_dataset(const fm::LoadedModel& lm, const fm::Dataset& ds,
                                const std::vector<fm::MaskPattern>& masks) {
    fm::Dataset out = ds;
    fm::ForwardCache cache;
    for (uint32_t i = 0; i < ds.n; ++i) {
        std::vector<double> img = ds.image_f64(i);
        std::vector<double> rec = fm::forward(lm.params, lm.cfg, img.data(), ds.height,
                                              ds.width, masks[i], cache);
        float* dst = out.image(i);
        for (size_t p = 0; p < rec.size(); ++p) dst[p] = clamp01(rec[p]);
    }
    return out;
}

std::vector<fm::MaskPattern> sample_masks(const fm::PatchGrid& grid, fm::MaskStrategy strat,
                                          double ratio, uint64_t seed, uint32_t n) {
    std::vector<fm::MaskPattern> masks;
    masks.reserve(n);
    for (uint32_t i = 0; i < n; ++i)
        masks.push_back(make_pattern(grid, strat, ratio, fm::mix64(seed, i)));
    return masks;
}

// first per_id images of each identity (dataset order) vs the rest
std::pair<std::vector<uint32_t>, std::vector<uint32_t>> split_per_id(const fm::Dataset& ds,
                                                                     uint32_t per_id) {
    std::map<uint32_t, uint32_t> seen;
    std::vector<uint32_t> a, b;
    for (uint32_t i = 0; i < ds.n; ++i) {
        uint32_t c = seen[ds.labels[i]]++;
        (c < per_id ? a : b).push_back(i);
    }
    return {a, b};
}

fm::Dataset take_rows(const fm::Dataset& ds, const std::vector<uint32_t>& idx) {
    fm::Dataset out;
    out.n = uint32_t(idx.size());
    out.height = ds.height;
    out.width = ds.width;
    out.channels = ds.channels;
    out.labels.reserve(idx.size());
    out.pixels.reserve(idx.size() * ds.image_size());
    for (uint32_t i : idx) {
        out.labels.push_back(ds.labels[i]);
        const float* src = ds.image(i);
        out.pixels.insert(out.pixels.end(), src, src + ds.image_size());
    }
    return out;
}

fm::EmbeddingSet embed_dataset(const fm::EmbedderSpec& phi, const fm::Dataset& ds) {
    return fm::to_embedding_set(fm::embed_batch(phi, ds), ds.labels);
}

uint32_t distinct_label_count(const std::vector<uint32_t>& labels) {
    std::vector<uint32_t> u = labels;
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    return uint32_t(u.size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic-face masked-autoencoder pipeline: data, training, deployment, audit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "facemae 0.1.0");

    // -------------------------------------------------- synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic identity dataset");
    fm::SynthConfig sc;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output dataset")->required();
    synth->add_option("--n-ids", sc.n_ids, "identities")->capture_default_str();
    synth->add_option("--imgs-per-id", sc.imgs_per_id, "images per identity")
        ->capture_default_str();
    synth->add_option("--size", sc.size, "square image side")->capture_default_str();
    synth->add_option("--seed", sc.seed, "generator seed")->capture_default_str();
    synth->add_option("--noise", sc.intra_noise, "per-pixel gaussian sigma")
        ->capture_default_str();
    synth->add_option("--jitter", sc.jitter, "max |integer translation|")->capture_default_str();
    enable_config(synth);
    synth->callback([&] {
        fm::Dataset ds = fm::gen_dataset(sc);
        fm::write_dataset(ds, synth_out);
        std::printf("wrote %s: %u images, %u ids, %ux%u\n", synth_out.c_str(), ds.n, sc.n_ids,
                    ds.height, ds.width);
    });

    // -------------------------------------------------- split
    auto* split = app.add_subcommand("split", "split a dataset per identity: first K | rest");
    std::string split_in, split_a, split_b;
    uint32_t split_k = 10;
    split->add_option("--in", split_in, "input dataset")->required();
    split->add_option("--out-a", split_a, "first K images of each identity")->required();
    split->add_option("--out-b", split_b, "remaining images")->required();
    split->add_option("--per-id", split_k, "images per identity into out-a")
        ->capture_default_str();
    enable_config(split);
    split->callback([&] {
        if (split_k == 0) throw fm::ConfigError("--per-id must be >= 1");
        fm::Dataset ds = fm::read_dataset(split_in);
        auto [ia, ib] = split_per_id(ds, split_k);
        if (ia.empty() || ib.empty())
            throw fm::InvariantError("split leaves an empty side; lower --per-id");
        fm::write_dataset(take_rows(ds, ia), split_a);
        fm::write_dataset(take_rows(ds, ib), split_b);
        std::printf("wrote %s (%zu images) and %s (%zu images)\n", split_a.c_str(), ia.size(),
                    split_b.c_str(), ib.size());
    });

    // -------------------------------------------------- mask
    auto* mask = app.add_subcommand("mask", "sample per-image mask patterns");
    std::string mask_data, mask_out, mask_apply;
    double mask_ratio = 0.75;
    std::string mask_strat = "random";
    uint64_t mask_seed = 0;
    int mask_ps = 8;
    mask->add_option("--data", mask_data, "input dataset")->required();
    mask->add_option("--out", mask_out, "mask file to write");
    mask->add_option("--apply-out", mask_apply, "also write the dataset with masked patches zeroed");
    mask->add_option("--ratio", mask_ratio, "fraction of patches masked")->capture_default_str();
    mask->add_option("--strategy", mask_strat, "random | eye | mouth")->capture_default_str();
    mask->add_option("--seed", mask_seed, "mask seed; image i uses mix64(seed, i)")
        ->capture_default_str();
    mask->add_option("--patch-size", mask_ps, "square patch side")->capture_default_str();
    enable_config(mask);
    mask->callback([&] {
        if (mask_out.empty() && mask_apply.empty())
            throw fm::ConfigError("need --out and/or --apply-out");
        fm::Dataset ds = fm::read_dataset(mask_data);
        fm::PatchGrid grid = fm::PatchGrid::for_image(ds.height, ds.width, mask_ps);
        fm::MaskStrategy strat = cli_strategy(mask_strat);
        auto masks = sample_masks(grid, strat, mask_ratio, mask_seed, ds.n);
        if (!mask_out.empty()) fm::write_masks(masks, mask_out);
        if (!mask_apply.empty()) {
            fm::Dataset out = ds;
            const int pd = mask_ps * mask_ps * ds.channels;
            for (uint32_t i = 0; i < ds.n; ++i) {
                std::vector<double> tokens =
                    fm::patchify(ds.image_f64(i).data(), ds.height, ds.width, ds.channels, mask_ps);
                for (uint32_t p : masks[i].masked)
                    std::fill_n(tokens.begin() + size_t(p) * pd, pd, 0.0);
                std::vector<double> img =
                    fm::unpatchify(tokens, grid.rows, grid.cols, mask_ps, ds.channels);
                float* dst = out.image(i);
                for (size_t p = 0; p < img.size(); ++p) dst[p] = clamp01(img[p]);
            }
            fm::write_dataset(out, mask_apply);
        }
        std::printf("masked %u images: %zu/%d patches per image\n", ds.n, masks[0].masked.size(),
                    grid.n_patches());
    });

    // -------------------------------------------------- pretrain
    auto* pre = app.add_subcommand(
        "pretrain", "train an identity recognizer and save its trunk as an embedder");
    std::string pre_data, pre_out;
    RecFlags pre_rf;
    pre->add_option("--data", pre_data, "training dataset")->required();
    pre->add_option("--out", pre_out, "embedder checkpoint to write")->required();
    add_rec_flags(pre, pre_rf);
    enable_config(pre);
    pre->callback([&] {
        fm::Dataset ds = fm::read_dataset(pre_data);
        fm::RecognizerResult rr = fm::train_recognizer(ds, rec_cfg(pre_rf));
        double acc = fm::classifier_accuracy(rr, ds);
        fm::save_embedder(fm::recognizer_to_embedder(rr), pre_out);
        std::printf("pretrained embedder on %u images (train accuracy %s) -> %s\n", ds.n,
                    g10(acc).c_str(), pre_out.c_str());
    });

    // -------------------------------------------------- train
    auto* train = app.add_subcommand("train", "train the masked autoencoder");
    std::string train_data, train_out, train_hist;
    ModelFlags train_mf;
    OptimFlags train_of;
    PhiFlags train_pf;
    std::string train_loss = "irm";
    double train_beta = 1.0, train_msew = 1.0, train_ratio = 0.75;
    uint32_t train_batch = 64;
    uint64_t train_seed = 0;
    train->add_option("--data", train_data, "training dataset")->required();
    train->add_option("--out", train_out, "model checkpoint to write")->required();
    train->add_option("--history", train_hist, "per-step step,loss,lr csv");
    train->add_option("--loss", train_loss, "mse | im | rm | irm | irm+mse")
        ->capture_default_str();
    train->add_option("--beta", train_beta, "relation term weight")->capture_default_str();
    train->add_option("--mse-weight", train_msew, "pixel term weight in irm+mse")
        ->capture_default_str();
    train->add_option("--ratio", train_ratio, "mask ratio")->capture_default_str();
    train->add_option("--batch-size", train_batch, "batch size")->capture_default_str();
    train->add_option("--seed", train_seed, "mask/order seed")->capture_default_str();
    add_model_flags(train, train_mf);
    add_optim_flags(train, train_of);
    add_phi_flags(train, train_pf);
    enable_config(train);
    train->callback([&] {
        fm::Dataset ds = fm::read_dataset(train_data);
        fm::TrainConfig tc;
        tc.model = model_cfg(train_mf, ds.channels);
        tc.irm.mode = fm::loss_mode_from_string(train_loss);
        tc.irm.beta = train_beta;
        tc.irm.mse_weight = train_msew;
        tc.optim = optim_cfg(train_of);
        tc.mask_ratio = train_ratio;
        tc.batch_size = train_batch;
        tc.seed = train_seed;
        fm::EmbedderSpec phi = resolve_phi(train_pf, ds.channels);
        fm::TrainResult res = fm::train_facemae(ds, phi, tc);
        fm::save_model(res.params, tc.model, fm::dataset_fingerprint(ds), train_out);
        if (!train_hist.empty()) write_text(train_hist, history_csv(res.history));
        std::printf("trained %s on %u images: loss %s -> %s over %zu steps\n", train_loss.c_str(),
                    ds.n, g10(res.history.front().loss).c_str(),
                    g10(res.history.back().loss).c_str(), res.history.size());
    });

    // -------------------------------------------------- reconstruct
    auto* rec = app.add_subcommand("reconstruct", "run a checkpoint over a dataset");
    std::string rec_data, rec_model, rec_out, rec_masks;
    double rec_ratio = 0.75;
    std::string rec_strat = "random";
    uint64_t rec_seed = 0;
    rec->add_option("--data", rec_data, "input dataset")->required();
    rec->add_option("--model", rec_model, "model checkpoint")->required();
    rec->add_option("--out", rec_out, "reconstructed dataset")->required();
    rec->add_option("--masks", rec_masks, "mask file; overrides --ratio/--strategy/--seed");
    rec->add_option("--ratio", rec_ratio, "mask ratio")->capture_default_str();
    rec->add_option("--strategy", rec_strat, "random | eye | mouth")->capture_default_str();
    rec->add_option("--seed", rec_seed, "mask seed; image i uses mix64(seed, i)")
        ->capture_default_str();
    enable_config(rec);
    rec->callback([&] {
        fm::Dataset ds = fm::read_dataset(rec_data);
        fm::LoadedModel lm = fm::load_model(rec_model);
        if (lm.train_fp != 0 && lm.train_fp == fm::dataset_fingerprint(ds))
            std::fprintf(stderr,
                         "warning: dataset fingerprint matches the model's training set; "
                         "this measures training members, not deployment\n");
        fm::PatchGrid grid = fm::PatchGrid::for_image(ds.height, ds.width, lm.cfg.patch_size);
        std::vector<fm::MaskPattern> masks;
        if (!rec_masks.empty()) {
            masks = fm::read_masks(rec_masks);
            if (masks.size() != ds.n)
                throw fm::InvariantError("mask file has " + std::to_string(masks.size()) +
                                         " patterns for " + std::to_string(ds.n) + " images");
        } else {
            masks = sample_masks(grid, cli_strategy(rec_strat), rec_ratio, rec_seed, ds.n);
        }
        fm::Dataset out = reconstruct_dataset(lm, ds, masks);
        fm::write_dataset(out, rec_out);
        std::printf("reconstructed %u images -> %s\n", ds.n, rec_out.c_str());
    });

    // -------------------------------------------------- embed
    auto* emb = app.add_subcommand("embed", "map a dataset through an embedder");
    std::string emb_data, emb_out;
    PhiFlags emb_pf;
    emb->add_option("--data", emb_data, "input dataset")->required();
    emb->add_option("--out", emb_out, "embedding file")->required();
    add_phi_flags(emb, emb_pf);
    enable_config(emb);
    emb->callback([&] {
        fm::Dataset ds = fm::read_dataset(emb_data);
        fm::EmbedderSpec phi = resolve_phi(emb_pf, ds.channels);
        fm::EmbeddingSet es = embed_dataset(phi, ds);
        fm::write_embeddings(es, emb_out);
        std::printf("embedded %u images -> %s (dim %u)\n", ds.n, emb_out.c_str(), es.dim);
    });

    // -------------------------------------------------- audit
    auto* audit = app.add_subcommand("audit", "top-K membership leakage of queries vs gallery");
    std::string audit_q, audit_g, audit_csv, audit_curve;
    uint32_t audit_k = 2;
    uint64_t audit_seed = 0;
    int audit_threads = 1;
    bool audit_self = false;
    audit->add_option("--queries", audit_q, "query embeddings")->required();
    audit->add_option("--gallery", audit_g, "gallery embeddings")->required();
    audit->add_option("--k", audit_k, "retrieval depth")->capture_default_str();
    audit->add_option("--curve", audit_curve, "identity counts, e.g. 10,20,50");
    audit->add_option("--seed", audit_seed, "curve subsampling seed")->capture_default_str();
    audit->add_option("--out-csv", audit_csv, "n_ids,k,risk csv")->required();
    audit->add_option("--threads", audit_threads, "query worker threads")->capture_default_str();
    audit->add_flag("--allow-self", audit_self, "permit queries == gallery (membership ceiling)");
    enable_config(audit);
    audit->callback([&] {
        if (!audit_self && same_file(audit_q, audit_g))
            throw fm::ConfigError(
                "queries and gallery are the same file; pass --allow-self if intended");
        fm::EmbeddingSet a = fm::read_embeddings(audit_q);
        fm::EmbeddingSet s = fm::read_embeddings(audit_g);
        std::string csv = "n_ids,k,risk\n";
        double last = 0.0;
        if (!audit_curve.empty()) {
            auto counts = parse_list_u32(audit_curve);
            auto curve = fm::risk_curve(a, s, audit_k, counts, audit_seed, audit_threads);
            for (const auto& [ids, risk] : curve) {
                csv += std::to_string(ids) + "," + std::to_string(audit_k) + "," + g10(risk) + "\n";
                last = risk;
            }
        } else {
            fm::RetrievalIndex index = fm::build_index(s);
            fm::RiskReport rep = fm::leakage_risk(a, index, audit_k, audit_threads);
            csv += std::to_string(distinct_label_count(s.labels)) + "," +
                   std::to_string(audit_k) + "," + g10(rep.risk) + "\n";
            last = rep.risk;
        }
        write_text(audit_csv, csv);
        std::printf("risk %s (k=%u) -> %s\n", g10(last).c_str(), audit_k, audit_csv.c_str());
    });

    // -------------------------------------------------- verify
    auto* verify = app.add_subcommand("verify", "pair verification accuracy of a recognizer");
    std::string ver_data, ver_train, ver_csv;
    uint32_t ver_pairs = 600;
    int ver_folds = 10;
    uint64_t ver_seed = 0;
    RecFlags ver_rf;
    verify->add_option("--data", ver_data, "evaluation dataset (pairs drawn here)")->required();
    verify->add_option("--train-data", ver_train, "recognizer training dataset")->required();
    verify->add_option("--pairs", ver_pairs, "total pairs, half positive")->capture_default_str();
    verify->add_option("--folds", ver_folds, "cross-validation folds")->capture_default_str();
    verify->add_option("--seed", ver_seed, "pair/fold seed")->capture_default_str();
    verify->add_option("--out-csv", ver_csv, "fold,threshold,accuracy csv")->required();
    add_rec_flags(verify, ver_rf);
    enable_config(verify);
    verify->callback([&] {
        fm::Dataset eval = fm::read_dataset(ver_data);
        fm::Dataset tr = fm::read_dataset(ver_train);
        fm::RecognizerResult rr = fm::train_recognizer(tr, rec_cfg(ver_rf));
        double train_acc = fm::classifier_accuracy(rr, tr);
        fm::EmbeddingSet es = embed_dataset(fm::recognizer_to_embedder(rr), eval);
        fm::PairSet ps = fm::gen_pairs(eval, ver_pairs / 2, ver_pairs - ver_pairs / 2,
                                       fm::mix64(ver_seed, 1));
        fm::VerifyResult vr = fm::verification_accuracy(es, ps, ver_folds, fm::mix64(ver_seed, 2));
        std::string csv = "fold,threshold,accuracy\n";
        double thr_mean = 0.0;
        for (size_t f = 0; f < vr.fold_accuracy.size(); ++f) {
            csv += std::to_string(f) + "," + g10(vr.fold_threshold[f]) + "," +
                   g10(vr.fold_accuracy[f]) + "\n";
            thr_mean += vr.fold_threshold[f];
        }
        thr_mean /= double(vr.fold_accuracy.size());
        csv += "mean," + g10(thr_mean) + "," + g10(vr.mean_accuracy) + "\n";
        write_text(ver_csv, csv);
        std::printf("classifier train accuracy %s; verification accuracy %s -> %s\n",
                    g10(train_acc).c_str(), g10(vr.mean_accuracy).c_str(), ver_csv.c_str());
    });

    // -------------------------------------------------- sweep
    auto* sweep = app.add_subcommand(
        "sweep", "mask-ratio sweep: train, reconstruct, then measure utility and leakage");
    std::string sw_train, sw_deploy, sw_eval, sw_csv;
    std::string sw_ratios = "0.3,0.5,0.75,0.9";
    std::string sw_loss = "irm";
    double sw_beta = 1.0, sw_msew = 1.0;
    uint32_t sw_batch = 64, sw_pairs = 600, sw_qpi = 0, sw_k = 2;
    int sw_folds = 10, sw_threads = 1;
    uint64_t sw_seed = 0;
    ModelFlags sw_mf;
    OptimFlags sw_of;
    PhiFlags sw_pf;
    RecFlags sw_rf;
    sweep->add_option("--train-data", sw_train, "autoencoder training dataset")->required();
    sweep->add_option("--deploy-data", sw_deploy, "dataset reconstructed for release")->required();
    sweep->add_option("--eval-data", sw_eval, "verification pair dataset")->required();
    sweep->add_option("--ratios", sw_ratios, "mask ratios")->capture_default_str();
    sweep->add_option("--out-csv", sw_csv, "ratio,verification_accuracy,leakage_risk csv")
        ->required();
    sweep->add_option("--loss", sw_loss, "mse | im | rm | irm | irm+mse")->capture_default_str();
    sweep->add_option("--beta", sw_beta, "relation term weight")->capture_default_str();
    sweep->add_option("--mse-weight", sw_msew, "pixel term weight in irm+mse")
        ->capture_default_str();
    sweep->add_option("--batch-size", sw_batch, "autoencoder batch size")->capture_default_str();
    sweep->add_option("--pairs", sw_pairs, "verification pairs")->capture_default_str();
    sweep->add_option("--folds", sw_folds, "verification folds")->capture_default_str();
    sweep->add_option("--queries-per-id", sw_qpi,
                      "deploy images per identity used as audit queries (0: half)")
        ->capture_default_str();
    sweep->add_option("--k", sw_k, "audit retrieval depth")->capture_default_str();
    sweep->add_option("--threads", sw_threads, "audit worker threads")->capture_default_str();
    sweep->add_option("--seed", sw_seed, "sweep seed")->capture_default_str();
    add_model_flags(sweep, sw_mf);
    add_optim_flags(sweep, sw_of);
    add_phi_flags(sweep, sw_pf);
    add_rec_flags(sweep, sw_rf);
    enable_config(sweep);
    sweep->callback([&] {
        fm::Dataset tr = fm::read_dataset(sw_train);
        fm::Dataset dep = fm::read_dataset(sw_deploy);
        fm::Dataset ev = fm::read_dataset(sw_eval);
        std::vector<double> ratios = parse_list_f64(sw_ratios);
        if (ratios.empty()) throw fm::ConfigError("--ratios is empty");

        uint32_t qpi = sw_qpi;
        if (qpi == 0) {
            std::map<uint32_t, uint32_t> counts;
            for (uint32_t l : dep.labels) counts[l]++;
            uint32_t min_c = UINT32_MAX;
            for (const auto& [l, c] : counts) min_c = std::min(min_c, c);
            qpi = std::max(1u, min_c / 2);
        }
        auto [qi, gi] = split_per_id(dep, qpi);
        if (qi.empty() || gi.empty())
            throw fm::InvariantError("audit split leaves an empty side; lower --queries-per-id");

        fm::EmbedderSpec phi = resolve_phi(sw_pf, tr.channels);
        fm::PairSet ps = fm::gen_pairs(ev, sw_pairs / 2, sw_pairs - sw_pairs / 2,
                                       fm::mix64(sw_seed, 1));
        fm::EmbeddingSet query_emb = embed_dataset(phi, take_rows(dep, qi));

        std::string csv = "ratio,verification_accuracy,leakage_risk\n";
        for (double ratio : ratios) {
            std::fprintf(stderr, "ratio %s: training...\n", g10(ratio).c_str());
            fm::TrainConfig tc;
            tc.model = model_cfg(sw_mf, tr.channels);
            tc.irm.mode = fm::loss_mode_from_string(sw_loss);
            tc.irm.beta = sw_beta;
            tc.irm.mse_weight = sw_msew;
            tc.optim = optim_cfg(sw_of);
            tc.mask_ratio = ratio;
            tc.batch_size = sw_batch;
            tc.seed = sw_seed;
            fm::TrainResult res = fm::train_facemae(tr, phi, tc);
            fm::LoadedModel lm{std::move(res.params), tc.model, 0};

            fm::PatchGrid grid = fm::PatchGrid::for_image(dep.height, dep.width,
                                                          tc.model.patch_size);
            auto masks = sample_masks(grid, fm::MaskStrategy::random, ratio,
                                      fm::mix64(sw_seed, 101), dep.n);
            fm::Dataset recon = reconstruct_dataset(lm, dep, masks);

            fm::RecognizerResult rr = fm::train_recognizer(recon, rec_cfg(sw_rf));
            fm::EmbeddingSet es = embed_dataset(fm::recognizer_to_embedder(rr), ev);
            fm::VerifyResult vr =
                fm::verification_accuracy(es, ps, sw_folds, fm::mix64(sw_seed, 2));

            fm::EmbeddingSet gal_emb = embed_dataset(phi, take_rows(recon, gi));
            fm::RetrievalIndex index = fm::build_index(gal_emb);
            fm::RiskReport rep = fm::leakage_risk(query_emb, index, sw_k, sw_threads);

            csv += g10(ratio) + "," + g10(vr.mean_accuracy) + "," + g10(rep.risk) + "\n";
            std::fprintf(stderr, "ratio %s: accuracy %s, risk %s\n", g10(ratio).c_str(),
                         g10(vr.mean_accuracy).c_str(), g10(rep.risk).c_str());
        }
        write_text(sw_csv, csv);
        std::printf("sweep of %zu ratios -> %s\n", ratios.size(), sw_csv.c_str());
    });

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        expand_config(app, args);
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const fm::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const fm::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const fm::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
