#pragma once
// Instance relation matching: Delta (row-wise averaged Euclidean distance),
// the Gram relation graph, the combined loss
//   L_dc = Delta(F, F_hat) + beta * Delta(<F,F^T>, <F_hat,F_hat^T>)
// with its analytic gradient, and the training loop that feeds it.
//
// dc_loss covers the feature-space portion only; the pixel-space MSE term of
// the mse / irm+mse modes is assembled by train_facemae.

#include <cstdint>
#include <string>
#include <vector>

#include "facemae/autoenc.hpp"
#include "facemae/embedder.hpp"

namespace fm {

enum class LossMode : uint8_t { mse = 0, im = 1, rm = 2, irm = 3, irm_mse = 4 };

const char* to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);
inline bool includes_mse(LossMode m) { return m == LossMode::mse || m == LossMode::irm_mse; }
inline bool includes_features(LossMode m) { return m != LossMode::mse; }

struct IrmConfig {
    double beta = 1.0;
    LossMode mode = LossMode::irm;
    double mse_weight = 1.0;  // weight of the pixel term in irm+mse
};

// (1/n) sum_i ||X_i - Y_i||_2 over rows
double delta(const FeatureMatrix& x, const FeatureMatrix& y);

// G[i][j] = F_i . F_j  (n x n, symmetric)
FeatureMatrix gram(const FeatureMatrix& f);

// feature-space loss per mode: im -> Delta(F,F^); rm -> Delta(G,G^);
// irm / irm+mse -> Delta(F,F^) + beta*Delta(G,G^); mse -> 0
double dc_loss(const FeatureMatrix& f, const FeatureMatrix& fhat, const IrmConfig& cfg);

// dL/dF_hat of dc_loss; subgradient 0 wherever a row distance vanishes
FeatureMatrix dc_loss_grad(const FeatureMatrix& f, const FeatureMatrix& fhat,
                           const IrmConfig& cfg);

struct HistoryRow {
    uint64_t step;
    double loss;
    double lr;
};

struct TrainConfig {
    ModelConfig model;
    IrmConfig irm;
    OptimConfig optim;
    double mask_ratio = 0.75;
    uint32_t batch_size = 64;
    uint64_t seed = 0;  // drives per-step masks and batch order

    void validate() const;
};

struct TrainResult {
    TensorMap params;
    std::vector<HistoryRow> history;
};

// Per step: fresh random masks, autoenc forward, F = phi(originals),
// F_hat = phi(reconstructions), loss per IrmConfig (plus the masked-pixel MSE
// term when the mode includes it), backward, AdamW step. Deterministic.
TrainResult train_facemae(const Dataset& ds, const EmbedderSpec& phi,
                          const TrainConfig& cfg);

}  // namespace fm
