#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tripletflow/contrastive.hpp"
#include "tripletflow/dataset.hpp"
#include "tripletflow/inference.hpp"
#include "tripletflow/metrics.hpp"
#include "tripletflow/nn.hpp"

namespace tripletflow {

enum class ModelFamily { triplet, triplet_offline, siamese, mlp, knn };
enum class Task { multiclass, binary };
enum class TrainLabelMode { multiclass, binary };
enum class MiningStrategy { batch_all, batch_hard, batch_semi_hard };
enum class InferenceRule {
    knn_hard,
    knn_soft,
    knn_weighted,
    knn_balanced,
    random_prototype,
    linear_probe,
    imbalanced_linear,
    argmax // mlp classifier head
};

std::string to_string(ModelFamily v);
std::string to_string(Task v);
std::string to_string(TrainLabelMode v);
std::string to_string(MiningStrategy v);
std::string to_string(InferenceRule v);
ModelFamily model_family_from_string(const std::string& s);
Task task_from_string(const std::string& s);
TrainLabelMode train_label_mode_from_string(const std::string& s);
MiningStrategy mining_strategy_from_string(const std::string& s);
InferenceRule inference_rule_from_string(const std::string& s);

/// Random-search space for model selection. Defaults are the reference
/// configuration; experiment configs may narrow them for desk-scale runs.
struct SearchSpace {
    double learning_rate_lo = 1e-6;
    double learning_rate_hi = 1e-3;
    std::vector<std::size_t> batch_sizes{32, 64, 128, 256, 512, 1024};
    double weight_decay_lo = 1e-6;
    double weight_decay_hi = 0.05;
    std::vector<std::size_t> neurons{32, 64, 128, 256, 512, 1024};
    std::vector<std::size_t> depths{1, 2, 3, 4};
    std::vector<double> dropouts{0.1, 0.2, 0.3};
    std::vector<std::size_t> embedding_dims{8, 16, 32, 64, 128};
    std::vector<double> margins{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<std::size_t> knn_ks{1, 2, 4, 8, 16, 32, 64, 128};
};

struct TrialConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    double weight_decay = 1e-5;
    std::size_t neurons = 64;
    std::size_t depth = 2;
    double dropout = 0.1;
    std::size_t embedding_dim = 16;
    double margin = 0.5;
    std::size_t knn_k = 8;
};

// log-uniform reals, uniform categoricals; the draw order is fixed so configs
// are reproducible across model families
TrialConfig sample_config(const SearchSpace& space, Rng& rng);

/// Base seeds for each pipeline role. The subset-sampling and
/// hyperparameter-search seeds advance by one per repetition; the others
/// stay fixed.
struct SeedSchedule {
    std::uint64_t configuration = 0;
    std::uint64_t subset_sampling = 19048;
    std::uint64_t cv_split = 19324;
    std::uint64_t hyperparameter_search = 4564;
    std::uint64_t dataset_split = 39058032;
};

struct ExperimentConfig {
    std::string name; // row label in reports; defaults to the family name
    std::string train_csv;
    std::string test_csv;
    std::string label_column = "label";
    std::string benign_class = "benign";
    Task task = Task::multiclass;
    ModelFamily family = ModelFamily::triplet;
    MiningStrategy mining = MiningStrategy::batch_all;
    DistanceMetric metric = DistanceMetric::euclidean;
    InferenceRule inference = InferenceRule::knn_hard;
    TrainLabelMode train_label_mode = TrainLabelMode::multiclass;
    std::size_t subsets = 3;       // S
    std::size_t n_benign = 2000;   // N_B
    std::vector<std::size_t> n_per_attack{10}; // N_M values
    std::size_t folds = 5;         // K
    std::size_t budget = 20;       // random-search trials
    std::size_t epochs = 50;
    double temperature = 0.1;      // weighted-vote tau
    std::size_t offline_triplets = 30000;
    std::size_t offline_pairs = 30000;
    std::size_t workers = 1;
    SeedSchedule seeds;
    SearchSpace space;
    BatchAllOptions batch_all_options;
};

void validate(const ExperimentConfig& cfg);

/// Everything needed to serve predictions: normalizer, encoder, reference
/// index and/or classifier head, and the seeds that make inference
/// reproducible.
struct ModelBundle {
    ModelFamily family = ModelFamily::triplet;
    Task task = Task::multiclass;
    TrainLabelMode label_mode = TrainLabelMode::multiclass;
    DistanceMetric metric = DistanceMetric::euclidean;
    InferenceRule inference = InferenceRule::knn_hard;
    double temperature = 0.1;
    TrialConfig trial;
    std::size_t epochs = 0;
    std::vector<std::string> source_class_map; // classes of the raw training data
    std::vector<std::string> model_class_map;  // prediction space (binary when binarised)
    Normalizer normalizer;
    std::optional<EncoderParams> encoder;
    std::optional<EmbeddingIndex> index;          // full reference set
    std::optional<EmbeddingIndex> balanced_index; // only for knn_balanced inference
    std::optional<LinearClassifier> head;
    std::uint64_t train_seed = 0;
    std::uint64_t prototype_seed = 0;
    std::vector<double> epoch_losses;
    std::optional<ScoreReport> train_score;
};

// trains one model of cfg.family with the given hyperparameters on raw
// (unnormalised) training rows; fits its own normalizer
ModelBundle train_model(const ExperimentConfig& cfg, const TrialConfig& trial,
                        const FlowDataset& train_rows, std::uint64_t seed);

// model-space predictions for raw feature rows
std::vector<int> bundle_predict(const ModelBundle& bundle, const Matrix& raw_features);

// scores the bundle on a dataset labelled in its source class space,
// collapsing to benign/malicious when the task is binary
ScoreReport evaluate_bundle(const ModelBundle& bundle, const FlowDataset& raw_ds, Task task);

struct TrialReport {
    std::size_t trial_index = 0;
    TrialConfig config;
    std::vector<double> fold_f1;
    double mean_f1 = 0.0;
    bool failed = false;
    std::string failure;
};

struct SubsetResult {
    std::size_t subset_index = 0;
    std::uint64_t subset_seed = 0;
    std::vector<TrialReport> trials;
    std::size_t best_trial = 0;
    ScoreReport test_score;
    ScoreReport train_score;
    std::optional<double> generalization_gap;
};

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0; // population standard deviation
};

struct SettingAggregate {
    MetricSummary test_macro_f1, test_macro_recall, test_macro_precision, test_fp_rate;
    MetricSummary train_macro_f1, generalization_gap;
};

struct SettingReport {
    std::size_t n_per_attack = 0;
    std::vector<SubsetResult> subsets;
    SettingAggregate aggregate;
};

struct ExperimentReport {
    std::string model;
    Task task = Task::multiclass;
    std::vector<SettingReport> settings; // one per N_M value
};

using FinalModelSink =
    std::function<void(std::size_t n_per_attack, std::size_t subset, const ModelBundle&)>;

/// Runs the full protocol: for every N_M and every subset repetition, sample
/// the subset, run the budgeted search (exhaustive k grid for the raw KNN)
/// scored by mean fold macro-F1, retrain the winner on the whole subset and
/// score it on the held-out test split. on_final_model (optional) receives
/// each retrained winner, e.g. for archiving.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const FlowDataset& train,
                                const FlowDataset& test,
                                const FinalModelSink& on_final_model = nullptr);

// loads the CSVs named by the config, then runs the experiment
ExperimentReport run_experiment(const ExperimentConfig& cfg);

enum class AblationAxis {
    mining,
    distance,
    inference,
    benign_count,
    rebalanced_inference,
    siamese_vs_triplet
};

std::string to_string(AblationAxis axis);
AblationAxis ablation_axis_from_string(const std::string& s);

struct AblationResult {
    std::string label;
    ExperimentReport report;
};

/// One run_experiment per axis value with everything else fixed. The
/// rebalanced_inference axis trains each subset's winner once and scores the
/// shared encoder under every inference variant.
std::vector<AblationResult> run_ablation(AblationAxis axis, const ExperimentConfig& base,
                                         const FlowDataset& train, const FlowDataset& test,
                                         const std::vector<std::size_t>& benign_counts = {
                                             1000, 5000, 10000, 20000});

} // namespace tripletflow
