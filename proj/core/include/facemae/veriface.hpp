#pragma once
// Downstream utility: train a small identity classifier (pool -> linear ->
// tanh -> linear -> softmax head) on a dataset, then measure LFW-style pair
// verification accuracy with 10-fold best-threshold selection over cosine
// similarities.

#include <cstdint>
#include <vector>

#include "facemae/autoenc.hpp"
#include "facemae/embedder.hpp"
#include "facemae/irmloss.hpp"
#include "facemae/tensorio.hpp"

namespace fm {

struct Pair {
    uint32_t a, b;
    uint8_t same;
};

struct PairSet {
    std::vector<Pair> pairs;
    uint32_t n_pos = 0;
    uint32_t n_neg = 0;
};

// seeded sampling without replacement from all same-label / cross-label pairs
PairSet gen_pairs(const Dataset& ds, uint32_t n_pos, uint32_t n_neg, uint64_t seed);

struct RecognizerConfig {
    int pool_grid = 4;
    int hidden = 64;
    int emb_dim = 32;
    uint32_t batch_size = 64;
    OptimConfig optim;
    uint64_t seed = 0;

    void validate() const;
};

struct RecognizerResult {
    TensorMap params;  // phi.w1, phi.b1, phi.w2, phi.b2, cls.w, cls.b
    RecognizerConfig cfg;
    std::vector<uint32_t> classes;  // distinct labels, sorted; row i of cls.w
    std::vector<HistoryRow> history;
};

// softmax cross-entropy identity classifier, AdamW + warmup/cosine schedule
RecognizerResult train_recognizer(const Dataset& ds, const RecognizerConfig& cfg);

// fraction of ds images whose argmax class equals their label
double classifier_accuracy(const RecognizerResult& r, const Dataset& ds);

// the trained embedding trunk as a frozen embedder (weights rounded to f32,
// exactly what save_embedder would persist)
EmbedderSpec recognizer_to_embedder(const RecognizerResult& r);

struct VerifyResult {
    double mean_accuracy = 0.0;
    std::vector<double> fold_threshold;
    std::vector<double> fold_accuracy;
};

// Pairs are shuffled (seeded) into `folds` contiguous shards; each fold is
// scored with the threshold that maximizes accuracy on the other folds,
// searched over midpoints of the sorted train similarities plus sentinels.
// Predict same <=> cosine > threshold. es rows must align with ds indices.
VerifyResult verification_accuracy(const EmbeddingSet& es, const PairSet& pairs,
                                   int folds, uint64_t seed);

}  // namespace fm
