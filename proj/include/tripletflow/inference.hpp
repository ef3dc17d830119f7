#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tripletflow/contrastive.hpp"
#include "tripletflow/dataset.hpp"
#include "tripletflow/matrix.hpp"
#include "tripletflow/nn.hpp"
#include "tripletflow/rng.hpp"

namespace tripletflow {

/// Cached reference embeddings with labels: the KNN search target. Built
/// from the full unbalanced training subset unless explicitly rebalanced.
struct EmbeddingIndex {
    Matrix embeddings; // N_ref x f_o
    std::vector<int> labels;
    DistanceMetric metric = DistanceMetric::euclidean;
    std::vector<std::string> class_map;

    std::size_t size() const { return embeddings.rows; }
    std::size_t num_classes() const { return class_map.size(); }
};

// embeds ds (already normalised) in eval mode and caches the result
EmbeddingIndex build_index(const EncoderParams& params, const FlowDataset& ds,
                           DistanceMetric metric);

// reference index straight over the (normalised) input features
EmbeddingIndex make_raw_index(const FlowDataset& ds, DistanceMetric metric);

struct NeighborSet {
    std::vector<std::size_t> indices;      // k reference rows, distance ascending
    std::vector<double> distances;         // matching distances
    std::vector<std::size_t> class_counts; // k_c per class, sums to k
};

// exact k smallest by linear scan; distance ties break by lower reference index
NeighborSet knn_neighbors(const EmbeddingIndex& index, const double* z, std::size_t k);

struct VoteRule {
    enum Kind { hard, soft, weighted } kind = hard;
    double temperature = 0.1; // weighted vote only, > 0
};

struct Prediction {
    int label = 0;
    std::vector<double> scores; // per-class: counts, mean distances, or exp sums
};

/// hard: argmax class count; soft: argmin mean distance over classes present
/// in the neighbour set; weighted: argmax sum of exp(-d/tau). Vote ties break
/// by smaller cumulative distance, then lower class id.
Prediction knn_predict(const EmbeddingIndex& index, const double* z, std::size_t k, VoteRule rule);

// one uniformly drawn reference per class; predicts the nearest one's class
int random_prototype_predict(const EmbeddingIndex& index, const double* z, Rng& rng);

// subsamples every class without replacement down to the minority-class count
EmbeddingIndex rebalance_index(const EmbeddingIndex& index, Rng& rng);

struct LinearClassifier {
    Matrix weight; // C x f_o
    std::vector<double> bias;
};

struct ProbeConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    std::size_t batch_size = 64;
    std::size_t epochs = 0;
    bool balanced = true; // balanced batches vs the natural label distribution
    std::uint64_t seed = 0;
};

// single affine + softmax cross-entropy head trained on cached embeddings;
// zero-initialised so a zero-epoch probe emits uniform logits
LinearClassifier train_linear_probe(const Matrix& embeddings, const std::vector<int>& labels,
                                    std::size_t num_classes, const ProbeConfig& cfg);

std::vector<double> probe_logits(const LinearClassifier& clf, const double* z);
int probe_predict(const LinearClassifier& clf, const double* z);

} // namespace tripletflow
