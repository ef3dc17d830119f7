#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tripletflow/matrix.hpp"
#include "tripletflow/rng.hpp"

namespace tripletflow {

/// Immutable table of flow-feature vectors with integer class labels.
/// class_map[0] is always the benign class; attack classes follow in
/// first-appearance order of the source data.
struct FlowDataset {
    Matrix features;                      // N x f
    std::vector<int> labels;              // N entries, each < class_map.size()
    std::vector<std::string> class_map;   // index == class id
    std::vector<std::string> feature_names;
    std::vector<std::size_t> class_counts;

    std::size_t size() const { return features.rows; }
    std::size_t feature_count() const { return features.cols; }
    std::size_t num_classes() const { return class_map.size(); }
};

// validates labels/finiteness and fills class_counts
FlowDataset make_dataset(Matrix features, std::vector<int> labels,
                         std::vector<std::string> class_map,
                         std::vector<std::string> feature_names = {});

struct CsvLoadResult {
    FlowDataset dataset;
    std::size_t dropped_rows = 0; // rows discarded for NaN/inf features
};

/// Loads a comma-separated file with one header row. All non-label columns
/// must parse as real numbers; rows with NaN or +-inf features are dropped.
/// benign_class names the label value that is forced to class id 0.
CsvLoadResult load_csv(const std::string& path, const std::string& label_column,
                       const std::string& benign_class);

// writes features plus a named label column holding class names; numbers are
// emitted in shortest round-trip form so rewrites are byte-stable
void write_csv(const FlowDataset& ds, const std::string& path, const std::string& label_column);

// class-map sidecar: {"classes":[...]}
void write_class_map(const FlowDataset& ds, const std::string& path);

FlowDataset take_rows(const FlowDataset& ds, const std::vector<std::size_t>& indices);

// relabels ds so its ids match target_class_map (matching by name)
FlowDataset remap_classes(const FlowDataset& ds, const std::vector<std::string>& target_class_map);

/// Per-class seeded split: floor(fraction*|D_c|) rows of every class go to
/// the first output, the remainder to the second.
std::pair<FlowDataset, FlowDataset> stratified_split(const FlowDataset& ds, double fraction,
                                                     std::uint64_t seed);

struct SubsetSpec {
    std::size_t n_benign = 0;
    std::size_t n_per_attack = 0;
    std::uint64_t seed = 0;
};

/// Uniform sampling without replacement: n_benign benign rows plus
/// n_per_attack rows of every attack class.
FlowDataset sample_subset(const FlowDataset& train, const SubsetSpec& spec);

struct Fold {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

/// K stratified folds: per class a seeded permutation is cut into K
/// near-equal chunks; fold i validates on chunk i of every class.
std::vector<Fold> stratified_kfold(const FlowDataset& ds, std::size_t k, std::uint64_t seed);

struct Normalizer {
    std::vector<double> mean;
    std::vector<double> std;
};

// per-feature population statistics; std entries below 1e-8 are floored to 1
Normalizer fit_normalizer(const FlowDataset& ds);
Matrix apply_normalizer(const Normalizer& nz, const Matrix& features);
FlowDataset apply_normalizer(const Normalizer& nz, const FlowDataset& ds);

struct SampleWeights {
    std::vector<double> w; // sums to 1
};

// w_i = 1 / (|D_{y_i}| * |classes present|)
SampleWeights compute_sample_weights(const FlowDataset& ds);
SampleWeights compute_sample_weights(const std::vector<int>& labels, std::size_t num_classes);

// batch_size independent draws with replacement, P(i) = w_i
std::vector<std::size_t> draw_balanced_batch(const SampleWeights& weights, std::size_t batch_size,
                                             Rng& rng);

// collapses labels to {0 benign, 1 malicious}
FlowDataset binarize_labels(const FlowDataset& ds);

} // namespace tripletflow
