#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tripletflow/dataset.hpp"
#include "tripletflow/matrix.hpp"
#include "tripletflow/rng.hpp"

namespace tripletflow {

enum class DistanceMetric { euclidean, manhattan, cosine };

std::string to_string(DistanceMetric metric);
DistanceMetric distance_metric_from_string(const std::string& name);

double distance(const double* a, const double* b, std::size_t n, DistanceMetric metric);

// symmetric with zero diagonal; euclidean is the true (non-squared) norm,
// cosine distance is 1 - cosine similarity (zero-norm rows are an error)
Matrix pairwise_distances(const Matrix& z, DistanceMetric metric);

// hinge: max{0, d_ap - d_an + m}
double triplet_loss(double d_ap, double d_an, double margin);

/// Result of mining one embedded batch. grad is the exact gradient of the
/// loss with respect to the embeddings.
struct MiningOutcome {
    double loss = 0.0;
    Matrix grad;
    std::size_t n_valid = 0;  // valid triplets (batch-all) or contributing anchors
    std::size_t n_active = 0; // triplets/anchors with positive loss
};

/// Alternate batch-all conventions kept selectable for comparison: the
/// degenerate p == a "positive" term, and averaging over margin-violating
/// triplets only instead of all valid ones.
struct BatchAllOptions {
    bool include_self_positive = false;
    bool average_over_active_only = false;
};

// mean triplet loss over all valid (a,p,n) in the batch; nullopt when the
// batch contains no valid triplet (caller resamples)
std::optional<MiningOutcome> batch_all(const Matrix& z, const std::vector<int>& y, double margin,
                                       DistanceMetric metric, const BatchAllOptions& opts = {});

// per anchor: farthest positive vs closest negative; anchors without both a
// positive and a negative are skipped and excluded from the mean
std::optional<MiningOutcome> batch_hard(const Matrix& z, const std::vector<int>& y, double margin,
                                        DistanceMetric metric);

// per anchor: hardest triplet among those with d_ap < d_an (loss below the
// margin); anchors whose every triplet violates the constraint contribute 0
std::optional<MiningOutcome> batch_semi_hard(const Matrix& z, const std::vector<int>& y,
                                             double margin, DistanceMetric metric);

struct PairLossResult {
    double loss = 0.0;
    std::vector<double> grad_first;
    std::vector<double> grad_second;
};

// y_ij = 1 similar / 0 dissimilar: y*d^2 + (1-y)*max{0, m-d}^2
PairLossResult contrastive_pair_loss(const double* z_i, const double* z_j, std::size_t n,
                                     int y_ij, double margin, DistanceMetric metric);

struct OfflineTriplet {
    std::size_t anchor = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
};

struct OfflinePair {
    std::size_t first = 0;
    std::size_t second = 0;
    int similar = 0; // y_ij
};

// fixed pre-training sets in the style of earlier Siamese work: anchor class
// uniform over classes with >= 2 rows, members uniform; pair sets alternate
// similar/dissimilar exactly 50/50
std::vector<OfflineTriplet> sample_offline_triplets(const FlowDataset& ds, std::size_t count,
                                                    Rng& rng);
std::vector<OfflinePair> sample_offline_pairs(const FlowDataset& ds, std::size_t count, Rng& rng);

// mean triplet loss over a batch embedded as 3T stacked rows (a,p,n per triple)
MiningOutcome offline_triplet_batch(const Matrix& z, double margin, DistanceMetric metric);

// mean contrastive loss over a batch embedded as 2P stacked rows
MiningOutcome offline_pair_batch(const Matrix& z, const std::vector<int>& similar, double margin,
                                 DistanceMetric metric);

} // namespace tripletflow
