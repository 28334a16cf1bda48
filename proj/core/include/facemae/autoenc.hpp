#pragma once
// Asymmetric masked autoencoder: visible patches -> linear embed + 2-D
// sinusoidal positions -> encoder blocks -> projection -> mask tokens
// inserted -> decoder blocks -> pixel head -> paste (predicted pixels at
// masked positions, original pixels at visible ones).
//
// Blocks are single-head scaled-dot-product attention and a token-wise tanh
// MLP (hidden = 2*d), each wrapped as x' = (x + f(x))/sqrt(2); no layer
// normalization. All gradients are hand-derived reverse mode in f64.

#include <cstdint>
#include <string>
#include <vector>

#include "facemae/patchmask.hpp"
#include "facemae/tensorio.hpp"

namespace fm {

struct ModelConfig {
    int patch_size = 8;
    int d_enc = 64;
    int d_dec = 32;
    int enc_depth = 2;
    int dec_depth = 1;
    int channels = 1;
    uint64_t seed = 0;

    int patch_dim() const { return patch_size * patch_size * channels; }
    void validate() const;  // throws ConfigError
};

// canonical tensor list (names + shapes) for a config; shared by
// init_params, the optimizer, and checkpoint validation
std::vector<std::pair<std::string, std::vector<uint32_t>>> expected_tensors(
    const ModelConfig& cfg);

// weights ~ seeded gaussian / sqrt(fan_in); biases and mask token zero
TensorMap init_params(const ModelConfig& cfg);

// fixed 2-D sinusoidal positional table, n_patches x d (first half encodes
// the patch row, second half the patch column)
std::vector<double> posenc_2d(int rows, int cols, int d);

// ---------------------------------------------------------------------------
// One transformer block. Exposed so gradient tests can drive it directly.
// ---------------------------------------------------------------------------
struct BlockRefs {
    const Tensor *wq, *wk, *wv, *wo, *w1, *b1, *w2, *b2;
};
struct BlockGradRefs {
    Tensor *wq, *wk, *wv, *wo, *w1, *b1, *w2, *b2;
};
BlockRefs block_refs(const TensorMap& params, const std::string& prefix);
BlockGradRefs block_grad_refs(TensorMap& grads, const std::string& prefix);

struct BlockCache {
    size_t T = 0, d = 0;
    std::vector<double> x_in;        // T x d
    std::vector<double> q, k, v;     // T x d
    std::vector<double> p;           // T x T, softmax rows
    std::vector<double> att;         // T x d, P V
    std::vector<double> x_mid;       // T x d, (x_in + att Wo^T)/sqrt(2)
    std::vector<double> h;           // T x 2d, post-tanh
};

void block_forward(const BlockRefs& w, const std::vector<double>& x, size_t T, size_t d,
                   BlockCache& cache, std::vector<double>& out);
// accumulates parameter grads into g; dx is overwritten with dLoss/dx
void block_backward(const BlockRefs& w, const BlockCache& cache,
                    const std::vector<double>& dout, std::vector<double>& dx,
                    const BlockGradRefs& g);

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------
struct ForwardCache {
    PatchGrid grid;
    MaskPattern pattern;
    std::vector<double> tokens;      // n_patches x patch_dim, original pixels
    std::vector<uint32_t> vis;       // visible indices, ascending
    std::vector<double> vis_tokens;  // Tv x patch_dim
    std::vector<double> pe_enc;      // n_patches x d_enc
    std::vector<double> pe_dec;      // n_patches x d_dec
    std::vector<double> enc_x0;      // Tv x d_enc
    std::vector<BlockCache> enc_blocks;
    std::vector<double> enc_out;     // Tv x d_enc
    std::vector<double> proj_out;    // Tv x d_dec
    std::vector<double> dec_x0;      // n x d_dec
    std::vector<BlockCache> dec_blocks;
    std::vector<double> dec_out;     // n x d_dec
    std::vector<double> pred;        // n x patch_dim
};

// returns the pasted reconstruction (h*w*c doubles, unclamped)
std::vector<double> forward(const TensorMap& params, const ModelConfig& cfg,
                            const double* img, int h, int w,
                            const MaskPattern& pattern, ForwardCache& cache);

// mean squared error over masked-patch pixels only; 0 when nothing is masked
double mse_loss(const std::vector<double>& recon, const double* orig, int h, int w,
                int c, int patch_size, const MaskPattern& pattern);
// dLoss/d(recon image); zero at visible positions
std::vector<double> mse_loss_grad(const std::vector<double>& recon, const double* orig,
                                  int h, int w, int c, int patch_size,
                                  const MaskPattern& pattern);

// accumulates dLoss/dparam into grads given dLoss/d(recon image); gradient at
// visible positions is discarded (the paste rule pins them to input pixels)
void backward(const TensorMap& params, const ModelConfig& cfg, const ForwardCache& cache,
              const std::vector<double>& drecon, TensorMap& grads);

TensorMap zero_like(const TensorMap& params);
void zero_all(TensorMap& grads);

// ---------------------------------------------------------------------------
// AdamW with linear warmup + cosine decay
// ---------------------------------------------------------------------------
struct OptimConfig {
    double base_lr = 1.5e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    int warmup_epochs = 6;  // 20% of total by default
    int total_epochs = 30;
};

// epoch_f is fractional: epoch + (step_in_epoch+1)/steps_per_epoch
double lr_at(const OptimConfig& cfg, double epoch_f);

struct OptimState {
    OptimConfig cfg;
    uint64_t step = 0;
    std::vector<std::vector<double>> m, v;  // aligned with params.items

    void init_like(const TensorMap& params);
};

// bias-corrected Adam; decoupled weight decay on rank-2 tensors only
// (biases and the mask token are rank 1)
void opt_step(TensorMap& params, const TensorMap& grads, OptimState& st, double lr);

// ---------------------------------------------------------------------------
// Checkpoints (FMPR). model.meta stores the architecture plus the FNV-1a
// fingerprint of the training dataset (0 = unknown) so deployment can warn
// when it is fed the data the model was trained on.
// ---------------------------------------------------------------------------
void save_model(const TensorMap& params, const ModelConfig& cfg, uint32_t train_fp,
                const std::string& path);

struct LoadedModel {
    TensorMap params;
    ModelConfig cfg;
    uint32_t train_fp = 0;
};
LoadedModel load_model(const std::string& path);

}  // namespace fm
