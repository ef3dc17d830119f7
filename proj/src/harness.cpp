#include "tripletflow/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <thread>

#include "tripletflow/error.hpp"

namespace tripletflow {

namespace {

// seed roles hung off a training seed; keeps every stream independent of
// execution order
constexpr std::uint64_t kRoleInit = 0;
constexpr std::uint64_t kRoleBatch = 1;
constexpr std::uint64_t kRoleDropout = 2;
constexpr std::uint64_t kRoleOffline = 3;
constexpr std::uint64_t kRolePrototype = 4;
constexpr std::uint64_t kRoleProbe = 5;
constexpr std::uint64_t kRoleRebalance = 6;

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), src.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(src.row(idx[i]), src.cols, out.row(i));
    return out;
}

struct StepResult {
    double loss = 0.0;
    Matrix dloss_dz;
};

// shared AdamW training loop; make_batch produces (X, y) and compute_loss may
// reject a batch (no valid triplets), in which case it is redrawn without
// advancing the step counter
void run_training_loop(
    EncoderParams& params, std::size_t epochs, std::size_t steps_per_epoch, OptimConfig opt,
    Rng& batch_rng, Rng& dropout_rng,
    const std::function<std::pair<Matrix, std::vector<int>>(Rng&)>& make_batch,
    const std::function<std::optional<StepResult>(const Matrix& z, const std::vector<int>& y)>&
        compute_loss,
    std::vector<double>& epoch_losses) {
    const std::size_t total_steps = epochs * steps_per_epoch;
    if (total_steps == 0) return;
    opt.total_steps = total_steps;
    AdamW optimizer(block_sizes(params.config), opt);

    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < total_steps; ++step) {
        std::optional<StepResult> result;
        ForwardTrace trace;
        for (std::size_t attempt = 0; !result; ++attempt) {
            if (attempt >= 1000)
                throw NumericError("training: no valid triplets after 1000 batch redraws");
            auto [x, y] = make_batch(batch_rng);
            const Matrix z = forward(params, x, true, &dropout_rng, &trace);
            result = compute_loss(z, y);
        }
        if (!std::isfinite(result->loss)) throw NumericError("training: loss is not finite");
        const Gradients grads = backward(params, trace, result->dloss_dz);
        optimizer.step(param_blocks(params), grad_blocks(grads));
        epoch_loss += result->loss;

        if ((step + 1) % steps_per_epoch == 0) {
            epoch_losses.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
            epoch_loss = 0.0;
        }
    }
    for (const Matrix& w : params.weights)
        if (!w.all_finite()) throw NumericError("training: parameters are not finite");
}

std::optional<MiningOutcome> mine(MiningStrategy strategy, const Matrix& z,
                                  const std::vector<int>& y, double margin, DistanceMetric metric,
                                  const BatchAllOptions& opts) {
    switch (strategy) {
    case MiningStrategy::batch_all: return batch_all(z, y, margin, metric, opts);
    case MiningStrategy::batch_hard: return batch_hard(z, y, margin, metric);
    case MiningStrategy::batch_semi_hard: return batch_semi_hard(z, y, margin, metric);
    }
    return std::nullopt;
}

bool needs_probe(InferenceRule rule) {
    return rule == InferenceRule::linear_probe || rule == InferenceRule::imbalanced_linear;
}

// builds the inference-time extras (probe head, rebalanced reference set)
// that a bundle's rule requires; reused by the rebalanced-inference ablation
void attach_inference_head(ModelBundle& bundle, InferenceRule rule, std::size_t epochs) {
    bundle.inference = rule;
    if (rule == InferenceRule::knn_balanced && bundle.index) {
        Rng rng(derive_seed(bundle.train_seed, kRoleRebalance));
        bundle.balanced_index = rebalance_index(*bundle.index, rng);
    }
    if (needs_probe(rule) && bundle.index) {
        const bool balanced = rule == InferenceRule::linear_probe;
        ProbeConfig probe;
        probe.learning_rate = bundle.trial.learning_rate;
        probe.weight_decay = bundle.trial.weight_decay;
        probe.batch_size = bundle.trial.batch_size;
        probe.epochs = epochs;
        probe.balanced = balanced;
        probe.seed = derive_seed(derive_seed(bundle.train_seed, kRoleProbe), balanced ? 0 : 1);
        bundle.head = train_linear_probe(bundle.index->embeddings, bundle.index->labels,
                                         bundle.model_class_map.size(), probe);
    }
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    if (values.empty()) return s;
    s.mean = mean_of(values);
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return s;
}

SettingAggregate aggregate_setting(const std::vector<SubsetResult>& subsets) {
    std::vector<double> f1, recall, precision, fp, train_f1, gap;
    for (const auto& sub : subsets) {
        f1.push_back(sub.test_score.macro_f1);
        recall.push_back(sub.test_score.macro_recall);
        precision.push_back(sub.test_score.macro_precision);
        fp.push_back(sub.test_score.fp_rate);
        train_f1.push_back(sub.train_score.macro_f1);
        if (sub.generalization_gap) gap.push_back(*sub.generalization_gap);
    }
    SettingAggregate agg;
    agg.test_macro_f1 = summarize(f1);
    agg.test_macro_recall = summarize(recall);
    agg.test_macro_precision = summarize(precision);
    agg.test_fp_rate = summarize(fp);
    agg.train_macro_f1 = summarize(train_f1);
    agg.generalization_gap = summarize(gap);
    return agg;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= n) break;
                    fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
                next.store(n);
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

} // namespace

std::string to_string(ModelFamily v) {
    switch (v) {
    case ModelFamily::triplet: return "triplet";
    case ModelFamily::triplet_offline: return "triplet_offline";
    case ModelFamily::siamese: return "siamese";
    case ModelFamily::mlp: return "mlp";
    case ModelFamily::knn: return "knn";
    }
    return "triplet";
}

std::string to_string(Task v) { return v == Task::multiclass ? "multiclass" : "binary"; }

std::string to_string(TrainLabelMode v) {
    return v == TrainLabelMode::multiclass ? "multiclass" : "binary";
}

std::string to_string(MiningStrategy v) {
    switch (v) {
    case MiningStrategy::batch_all: return "batch_all";
    case MiningStrategy::batch_hard: return "batch_hard";
    case MiningStrategy::batch_semi_hard: return "batch_semi_hard";
    }
    return "batch_all";
}

std::string to_string(InferenceRule v) {
    switch (v) {
    case InferenceRule::knn_hard: return "knn_hard";
    case InferenceRule::knn_soft: return "knn_soft";
    case InferenceRule::knn_weighted: return "knn_weighted";
    case InferenceRule::knn_balanced: return "knn_balanced";
    case InferenceRule::random_prototype: return "random_prototype";
    case InferenceRule::linear_probe: return "linear_probe";
    case InferenceRule::imbalanced_linear: return "imbalanced_linear";
    case InferenceRule::argmax: return "argmax";
    }
    return "knn_hard";
}

ModelFamily model_family_from_string(const std::string& s) {
    if (s == "triplet") return ModelFamily::triplet;
    if (s == "triplet_offline") return ModelFamily::triplet_offline;
    if (s == "siamese") return ModelFamily::siamese;
    if (s == "mlp") return ModelFamily::mlp;
    if (s == "knn") return ModelFamily::knn;
    throw ConfigError("unknown model family: " + s);
}

Task task_from_string(const std::string& s) {
    if (s == "multiclass") return Task::multiclass;
    if (s == "binary") return Task::binary;
    throw ConfigError("unknown task: " + s);
}

TrainLabelMode train_label_mode_from_string(const std::string& s) {
    if (s == "multiclass") return TrainLabelMode::multiclass;
    if (s == "binary") return TrainLabelMode::binary;
    throw ConfigError("unknown train label mode: " + s);
}

MiningStrategy mining_strategy_from_string(const std::string& s) {
    if (s == "batch_all") return MiningStrategy::batch_all;
    if (s == "batch_hard") return MiningStrategy::batch_hard;
    if (s == "batch_semi_hard") return MiningStrategy::batch_semi_hard;
    throw ConfigError("unknown mining strategy: " + s);
}

InferenceRule inference_rule_from_string(const std::string& s) {
    if (s == "knn_hard") return InferenceRule::knn_hard;
    if (s == "knn_soft") return InferenceRule::knn_soft;
    if (s == "knn_weighted") return InferenceRule::knn_weighted;
    if (s == "knn_balanced") return InferenceRule::knn_balanced;
    if (s == "random_prototype") return InferenceRule::random_prototype;
    if (s == "linear_probe") return InferenceRule::linear_probe;
    if (s == "imbalanced_linear") return InferenceRule::imbalanced_linear;
    if (s == "argmax") return InferenceRule::argmax;
    throw ConfigError("unknown inference rule: " + s);
}

std::string to_string(AblationAxis axis) {
    switch (axis) {
    case AblationAxis::mining: return "mining";
    case AblationAxis::distance: return "distance";
    case AblationAxis::inference: return "inference";
    case AblationAxis::benign_count: return "benign_count";
    case AblationAxis::rebalanced_inference: return "rebalanced_inference";
    case AblationAxis::siamese_vs_triplet: return "siamese_vs_triplet";
    }
    return "mining";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
    if (s == "mining") return AblationAxis::mining;
    if (s == "distance") return AblationAxis::distance;
    if (s == "inference") return AblationAxis::inference;
    if (s == "benign_count") return AblationAxis::benign_count;
    if (s == "rebalanced_inference") return AblationAxis::rebalanced_inference;
    if (s == "siamese_vs_triplet") return AblationAxis::siamese_vs_triplet;
    throw ConfigError("unknown ablation axis: " + s);
}

TrialConfig sample_config(const SearchSpace& space, Rng& rng) {
    // fixed draw order so the config stream is identical across families
    TrialConfig trial;
    trial.learning_rate = std::exp(
        rng.uniform(std::log(space.learning_rate_lo), std::log(space.learning_rate_hi)));
    trial.batch_size = space.batch_sizes[rng.uniform_below(space.batch_sizes.size())];
    trial.weight_decay =
        std::exp(rng.uniform(std::log(space.weight_decay_lo), std::log(space.weight_decay_hi)));
    trial.neurons = space.neurons[rng.uniform_below(space.neurons.size())];
    trial.depth = space.depths[rng.uniform_below(space.depths.size())];
    trial.dropout = space.dropouts[rng.uniform_below(space.dropouts.size())];
    trial.embedding_dim = space.embedding_dims[rng.uniform_below(space.embedding_dims.size())];
    trial.margin = space.margins[rng.uniform_below(space.margins.size())];
    trial.knn_k = space.knn_ks[rng.uniform_below(space.knn_ks.size())];
    return trial;
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.subsets < 1) throw ConfigError("subsets must be at least 1");
    if (cfg.folds < 2) throw ConfigError("folds must be at least 2");
    if (cfg.budget < 1) throw ConfigError("search budget must be at least 1");
    if (cfg.n_benign < 1) throw ConfigError("n_benign must be at least 1");
    if (cfg.n_per_attack.empty()) throw ConfigError("n_per_attack must list at least one value");
    for (std::size_t v : cfg.n_per_attack)
        if (v < 1) throw ConfigError("n_per_attack values must be at least 1");
    if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (cfg.train_label_mode == TrainLabelMode::binary && cfg.task != Task::binary)
        throw ConfigError("binary train labels require the binary task");

    const auto& space = cfg.space;
    if (!(space.learning_rate_lo > 0.0 && space.learning_rate_lo <= space.learning_rate_hi))
        throw ConfigError("learning-rate range is empty or non-positive");
    if (!(space.weight_decay_lo > 0.0 && space.weight_decay_lo <= space.weight_decay_hi))
        throw ConfigError("weight-decay range is empty or non-positive");
    if (space.batch_sizes.empty() || space.neurons.empty() || space.depths.empty() ||
        space.dropouts.empty() || space.embedding_dims.empty() || space.margins.empty() ||
        space.knn_ks.empty())
        throw ConfigError("search space has an empty dimension");
    for (double m : space.margins)
        if (!(m > 0.0 && m <= 1.0)) throw ConfigError("margins must lie in (0,1]");

    switch (cfg.family) {
    case ModelFamily::mlp:
        if (cfg.inference != InferenceRule::argmax)
            throw ConfigError("mlp family predicts with inference = argmax");
        break;
    case ModelFamily::knn:
        if (cfg.inference != InferenceRule::knn_hard && cfg.inference != InferenceRule::knn_soft &&
            cfg.inference != InferenceRule::knn_weighted &&
            cfg.inference != InferenceRule::knn_balanced)
            throw ConfigError("knn family requires a knn_* inference rule");
        break;
    default:
        if (cfg.inference == InferenceRule::argmax)
            throw ConfigError("argmax inference is reserved for the mlp family");
        break;
    }
}

ModelBundle train_model(const ExperimentConfig& cfg, const TrialConfig& trial,
                        const FlowDataset& train_rows, std::uint64_t seed) {
    ModelBundle bundle;
    bundle.family = cfg.family;
    bundle.task = cfg.task;
    bundle.label_mode =
        cfg.task == Task::binary ? cfg.train_label_mode : TrainLabelMode::multiclass;
    bundle.metric = cfg.metric;
    bundle.inference = cfg.family == ModelFamily::mlp ? InferenceRule::argmax : cfg.inference;
    bundle.temperature = cfg.temperature;
    bundle.trial = trial;
    bundle.epochs = cfg.epochs;
    bundle.source_class_map = train_rows.class_map;
    bundle.train_seed = seed;
    bundle.prototype_seed = derive_seed(seed, kRolePrototype);

    const FlowDataset train_ds = bundle.label_mode == TrainLabelMode::binary
                                     ? binarize_labels(train_rows)
                                     : train_rows;
    bundle.model_class_map = train_ds.class_map;
    bundle.normalizer = fit_normalizer(train_ds);
    const FlowDataset normed = apply_normalizer(bundle.normalizer, train_ds);
    const std::size_t n = normed.size();

    Rng init_rng(derive_seed(seed, kRoleInit));
    Rng batch_rng(derive_seed(seed, kRoleBatch));
    Rng dropout_rng(derive_seed(seed, kRoleDropout));

    OptimConfig opt;
    opt.learning_rate = trial.learning_rate;
    opt.weight_decay = trial.weight_decay;

    const std::size_t batch = std::max<std::size_t>(2, trial.batch_size);

    switch (cfg.family) {
    case ModelFamily::knn: {
        bundle.index = make_raw_index(normed, cfg.metric);
        attach_inference_head(bundle, bundle.inference, cfg.epochs);
        return bundle;
    }
    case ModelFamily::mlp: {
        EncoderConfig enc{normed.feature_count(), trial.neurons, trial.depth,
                          train_ds.num_classes(), trial.dropout};
        EncoderParams params = init_encoder(enc, init_rng);
        const SampleWeights weights = compute_sample_weights(train_ds);
        const std::size_t steps_per_epoch = (n + batch - 1) / batch;
        run_training_loop(
            params, cfg.epochs, steps_per_epoch, opt, batch_rng, dropout_rng,
            [&](Rng& rng) {
                const auto idx = draw_balanced_batch(weights, batch, rng);
                std::vector<int> y(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) y[i] = train_ds.labels[idx[i]];
                return std::make_pair(gather_rows(normed.features, idx), std::move(y));
            },
            [&](const Matrix& logits, const std::vector<int>& y) -> std::optional<StepResult> {
                XentResult xent = softmax_xent(logits, y);
                return StepResult{xent.loss, std::move(xent.dlogits)};
            },
            bundle.epoch_losses);
        bundle.encoder = std::move(params);
        return bundle;
    }
    case ModelFamily::triplet: {
        EncoderConfig enc{normed.feature_count(), trial.neurons, trial.depth,
                          trial.embedding_dim, trial.dropout};
        EncoderParams params = init_encoder(enc, init_rng);
        const SampleWeights weights = compute_sample_weights(train_ds);
        const std::size_t steps_per_epoch = (n + batch - 1) / batch;
        run_training_loop(
            params, cfg.epochs, steps_per_epoch, opt, batch_rng, dropout_rng,
            [&](Rng& rng) {
                const auto idx = draw_balanced_batch(weights, batch, rng);
                std::vector<int> y(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) y[i] = train_ds.labels[idx[i]];
                return std::make_pair(gather_rows(normed.features, idx), std::move(y));
            },
            [&](const Matrix& z, const std::vector<int>& y) -> std::optional<StepResult> {
                auto outcome =
                    mine(cfg.mining, z, y, trial.margin, cfg.metric, cfg.batch_all_options);
                if (!outcome) return std::nullopt;
                return StepResult{outcome->loss, std::move(outcome->grad)};
            },
            bundle.epoch_losses);
        bundle.encoder = std::move(params);
        break;
    }
    case ModelFamily::triplet_offline: {
        EncoderConfig enc{normed.feature_count(), trial.neurons, trial.depth,
                          trial.embedding_dim, trial.dropout};
        EncoderParams params = init_encoder(enc, init_rng);
        Rng offline_rng(derive_seed(seed, kRoleOffline));
        const auto triplets = sample_offline_triplets(train_ds, cfg.offline_triplets, offline_rng);
        const std::size_t steps_per_epoch = (triplets.size() + batch - 1) / batch;

        std::vector<std::size_t> order(triplets.size());
        std::iota(order.begin(), order.end(), 0);
        std::size_t cursor = triplets.size(); // forces a shuffle on the first step
        run_training_loop(
            params, cfg.epochs, steps_per_epoch, opt, batch_rng, dropout_rng,
            [&](Rng& rng) {
                if (cursor >= triplets.size()) {
                    rng.shuffle(order);
                    cursor = 0;
                }
                const std::size_t take = std::min(batch, triplets.size() - cursor);
                std::vector<std::size_t> rows;
                rows.reserve(3 * take);
                for (std::size_t i = 0; i < take; ++i) {
                    const OfflineTriplet& t = triplets[order[cursor + i]];
                    rows.push_back(t.anchor);
                    rows.push_back(t.positive);
                    rows.push_back(t.negative);
                }
                cursor += take;
                return std::make_pair(gather_rows(normed.features, rows), std::vector<int>{});
            },
            [&](const Matrix& z, const std::vector<int>&) -> std::optional<StepResult> {
                MiningOutcome outcome = offline_triplet_batch(z, trial.margin, cfg.metric);
                return StepResult{outcome.loss, std::move(outcome.grad)};
            },
            bundle.epoch_losses);
        bundle.encoder = std::move(params);
        break;
    }
    case ModelFamily::siamese: {
        EncoderConfig enc{normed.feature_count(), trial.neurons, trial.depth,
                          trial.embedding_dim, trial.dropout};
        EncoderParams params = init_encoder(enc, init_rng);
        Rng offline_rng(derive_seed(seed, kRoleOffline));
        const auto pairs = sample_offline_pairs(train_ds, cfg.offline_pairs, offline_rng);
        const std::size_t steps_per_epoch = (pairs.size() + batch - 1) / batch;

        std::vector<std::size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), 0);
        std::size_t cursor = pairs.size();
        run_training_loop(
            params, cfg.epochs, steps_per_epoch, opt, batch_rng, dropout_rng,
            [&](Rng& rng) {
                if (cursor >= pairs.size()) {
                    rng.shuffle(order);
                    cursor = 0;
                }
                const std::size_t take = std::min(batch, pairs.size() - cursor);
                std::vector<std::size_t> rows;
                std::vector<int> similar(take);
                rows.reserve(2 * take);
                for (std::size_t i = 0; i < take; ++i) {
                    const OfflinePair& p = pairs[order[cursor + i]];
                    rows.push_back(p.first);
                    rows.push_back(p.second);
                    similar[i] = p.similar;
                }
                cursor += take;
                return std::make_pair(gather_rows(normed.features, rows), std::move(similar));
            },
            [&](const Matrix& z, const std::vector<int>& similar) -> std::optional<StepResult> {
                MiningOutcome outcome = offline_pair_batch(z, similar, trial.margin, cfg.metric);
                return StepResult{outcome.loss, std::move(outcome.grad)};
            },
            bundle.epoch_losses);
        bundle.encoder = std::move(params);
        break;
    }
    }

    // embedding families cache the full training subset as the reference set
    bundle.index = build_index(*bundle.encoder, normed, cfg.metric);
    attach_inference_head(bundle, bundle.inference, cfg.epochs);
    return bundle;
}

std::vector<int> bundle_predict(const ModelBundle& bundle, const Matrix& raw_features) {
    const Matrix x = apply_normalizer(bundle.normalizer, raw_features);
    std::vector<int> preds(x.rows, 0);

    if (bundle.family == ModelFamily::mlp) {
        const Matrix logits = forward(*bundle.encoder, x, false, nullptr, nullptr);
        for (std::size_t i = 0; i < logits.rows; ++i) {
            const double* row = logits.row(i);
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols; ++c)
                if (row[c] > row[best]) best = c;
            preds[i] = static_cast<int>(best);
        }
        return preds;
    }

    const Matrix queries = bundle.family == ModelFamily::knn
                               ? x
                               : forward(*bundle.encoder, x, false, nullptr, nullptr);

    switch (bundle.inference) {
    case InferenceRule::knn_hard:
    case InferenceRule::knn_soft:
    case InferenceRule::knn_weighted:
    case InferenceRule::knn_balanced: {
        const EmbeddingIndex& index = bundle.inference == InferenceRule::knn_balanced
                                          ? *bundle.balanced_index
                                          : *bundle.index;
        VoteRule rule;
        rule.kind = bundle.inference == InferenceRule::knn_soft       ? VoteRule::soft
                    : bundle.inference == InferenceRule::knn_weighted ? VoteRule::weighted
                                                                      : VoteRule::hard;
        rule.temperature = bundle.temperature;
        const std::size_t k = std::min<std::size_t>(std::max<std::size_t>(1, bundle.trial.knn_k),
                                                    index.size());
        for (std::size_t i = 0; i < queries.rows; ++i)
            preds[i] = knn_predict(index, queries.row(i), k, rule).label;
        return preds;
    }
    case InferenceRule::random_prototype: {
        Rng rng(bundle.prototype_seed);
        for (std::size_t i = 0; i < queries.rows; ++i)
            preds[i] = random_prototype_predict(*bundle.index, queries.row(i), rng);
        return preds;
    }
    case InferenceRule::linear_probe:
    case InferenceRule::imbalanced_linear: {
        for (std::size_t i = 0; i < queries.rows; ++i)
            preds[i] = probe_predict(*bundle.head, queries.row(i));
        return preds;
    }
    case InferenceRule::argmax:
        throw std::invalid_argument("argmax inference outside the mlp family");
    }
    return preds;
}

ScoreReport evaluate_bundle(const ModelBundle& bundle, const FlowDataset& raw_ds, Task task) {
    if (raw_ds.class_map != bundle.source_class_map)
        throw DataError("evaluate_bundle: dataset classes do not match the model (remap first)");
    std::vector<int> preds = bundle_predict(bundle, raw_ds.features);
    std::vector<int> truth = raw_ds.labels;
    std::size_t classes = raw_ds.num_classes();
    if (task == Task::binary) {
        for (int& t : truth) t = t == 0 ? 0 : 1;
        if (bundle.label_mode != TrainLabelMode::binary)
            for (int& p : preds) p = p == 0 ? 0 : 1;
        classes = 2;
    }
    return score(confusion(truth, preds, classes));
}

namespace {

struct SubsetOutcome {
    SubsetResult result;
    ModelBundle final_model;
};

SubsetOutcome run_subset_protocol(const ExperimentConfig& cfg, const FlowDataset& train,
                                  const FlowDataset& test, std::size_t n_m,
                                  std::size_t subset_idx) {
    SubsetOutcome outcome;
    SubsetResult& result = outcome.result;
    result.subset_index = subset_idx;
    result.subset_seed = cfg.seeds.subset_sampling + subset_idx;
    const std::uint64_t hyper_seed = cfg.seeds.hyperparameter_search + subset_idx;

    const FlowDataset subset =
        sample_subset(train, SubsetSpec{cfg.n_benign, n_m, result.subset_seed});
    const auto folds = stratified_kfold(subset, cfg.folds, cfg.seeds.cv_split);

    std::vector<FlowDataset> fold_train, fold_val;
    fold_train.reserve(folds.size());
    fold_val.reserve(folds.size());
    for (const Fold& fold : folds) {
        fold_train.push_back(take_rows(subset, fold.train_indices));
        fold_val.push_back(take_rows(subset, fold.val_indices));
    }

    const bool exhaustive = cfg.family == ModelFamily::knn;
    const std::size_t n_trials = exhaustive ? cfg.space.knn_ks.size() : cfg.budget;
    result.trials.assign(n_trials, TrialReport{});

    parallel_for(n_trials, cfg.workers, [&](std::size_t t) {
        TrialReport& trial = result.trials[t];
        trial.trial_index = t;
        const std::uint64_t trial_seed = derive_seed(hyper_seed, t);
        if (exhaustive) {
            trial.config = TrialConfig{};
            trial.config.knn_k = cfg.space.knn_ks[t];
        } else {
            Rng config_rng(trial_seed);
            trial.config = sample_config(cfg.space, config_rng);
        }
        try {
            for (std::size_t f = 0; f < folds.size(); ++f) {
                const ModelBundle bundle =
                    train_model(cfg, trial.config, fold_train[f], derive_seed(trial_seed, f));
                trial.fold_f1.push_back(evaluate_bundle(bundle, fold_val[f], cfg.task).macro_f1);
            }
            trial.mean_f1 = mean_of(trial.fold_f1);
        } catch (const NumericError& e) {
            trial.failed = true;
            trial.failure = e.what();
            trial.fold_f1.clear();
            trial.mean_f1 = 0.0;
        }
    });

    std::size_t best = n_trials;
    for (std::size_t t = 0; t < n_trials; ++t) {
        if (result.trials[t].failed) continue;
        if (best == n_trials || result.trials[t].mean_f1 > result.trials[best].mean_f1) best = t;
    }
    if (best == n_trials)
        throw NumericError("hyperparameter search: every trial failed numerically");
    result.best_trial = best;

    const std::uint64_t final_seed =
        derive_seed(derive_seed(hyper_seed, best), folds.size());
    outcome.final_model = train_model(cfg, result.trials[best].config, subset, final_seed);
    result.test_score = evaluate_bundle(outcome.final_model, test, cfg.task);
    result.train_score = evaluate_bundle(outcome.final_model, subset, cfg.task);
    outcome.final_model.train_score = result.train_score;
    if (result.train_score.macro_f1 > 0.0)
        result.generalization_gap =
            generalization_gap(result.train_score.macro_f1, result.test_score.macro_f1);
    return outcome;
}

} // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const FlowDataset& train,
                                const FlowDataset& test, const FinalModelSink& on_final_model) {
    validate(cfg);
    const FlowDataset remapped_test = remap_classes(test, train.class_map);
    ExperimentReport report;
    report.model = cfg.name.empty() ? to_string(cfg.family) : cfg.name;
    report.task = cfg.task;
    for (std::size_t n_m : cfg.n_per_attack) {
        SettingReport setting;
        setting.n_per_attack = n_m;
        for (std::size_t s = 0; s < cfg.subsets; ++s) {
            SubsetOutcome outcome = run_subset_protocol(cfg, train, remapped_test, n_m, s);
            if (on_final_model) on_final_model(n_m, s, outcome.final_model);
            setting.subsets.push_back(std::move(outcome.result));
        }
        setting.aggregate = aggregate_setting(setting.subsets);
        report.settings.push_back(std::move(setting));
    }
    return report;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    auto train = load_csv(cfg.train_csv, cfg.label_column, cfg.benign_class);
    auto test = load_csv(cfg.test_csv, cfg.label_column, cfg.benign_class);
    return run_experiment(cfg, train.dataset, test.dataset);
}

std::vector<AblationResult> run_ablation(AblationAxis axis, const ExperimentConfig& base,
                                         const FlowDataset& train, const FlowDataset& test,
                                         const std::vector<std::size_t>& benign_counts) {
    std::vector<AblationResult> results;
    switch (axis) {
    case AblationAxis::mining: {
        for (MiningStrategy strategy : {MiningStrategy::batch_all, MiningStrategy::batch_hard,
                                        MiningStrategy::batch_semi_hard}) {
            ExperimentConfig cfg = base;
            cfg.mining = strategy;
            cfg.name = to_string(strategy);
            results.push_back({to_string(strategy), run_experiment(cfg, train, test)});
        }
        return results;
    }
    case AblationAxis::distance: {
        for (DistanceMetric metric : {DistanceMetric::euclidean, DistanceMetric::cosine,
                                      DistanceMetric::manhattan}) {
            ExperimentConfig cfg = base;
            cfg.metric = metric;
            cfg.name = to_string(metric);
            results.push_back({to_string(metric), run_experiment(cfg, train, test)});
        }
        return results;
    }
    case AblationAxis::inference: {
        for (InferenceRule rule :
             {InferenceRule::knn_hard, InferenceRule::knn_soft, InferenceRule::knn_weighted,
              InferenceRule::random_prototype, InferenceRule::linear_probe}) {
            ExperimentConfig cfg = base;
            cfg.inference = rule;
            cfg.name = to_string(rule);
            results.push_back({to_string(rule), run_experiment(cfg, train, test)});
        }
        return results;
    }
    case AblationAxis::benign_count: {
        for (std::size_t n_b : benign_counts) {
            ExperimentConfig cfg = base;
            cfg.n_benign = n_b;
            cfg.name = base.name.empty() ? to_string(base.family) : base.name;
            results.push_back({std::to_string(n_b), run_experiment(cfg, train, test)});
        }
        return results;
    }
    case AblationAxis::siamese_vs_triplet: {
        for (ModelFamily family : {ModelFamily::triplet_offline, ModelFamily::siamese}) {
            ExperimentConfig cfg = base;
            cfg.family = family;
            cfg.inference = InferenceRule::random_prototype;
            cfg.name = to_string(family);
            results.push_back({to_string(family), run_experiment(cfg, train, test)});
        }
        return results;
    }
    case AblationAxis::rebalanced_inference: {
        // one search per subset; the trained encoder is reused across the
        // inference variants
        const std::vector<InferenceRule> variants{
            InferenceRule::knn_hard, InferenceRule::knn_balanced, InferenceRule::linear_probe,
            InferenceRule::imbalanced_linear};
        validate(base);
        const FlowDataset remapped_test = remap_classes(test, train.class_map);

        std::vector<ExperimentReport> reports(variants.size());
        for (std::size_t v = 0; v < variants.size(); ++v) {
            reports[v].model = to_string(variants[v]);
            reports[v].task = base.task;
        }
        std::vector<std::vector<SettingReport>> settings(variants.size());

        for (std::size_t n_m_idx = 0; n_m_idx < base.n_per_attack.size(); ++n_m_idx) {
            const std::size_t n_m = base.n_per_attack[n_m_idx];
            std::vector<SettingReport> per_variant(variants.size());
            for (auto& sr : per_variant) sr.n_per_attack = n_m;

            for (std::size_t s = 0; s < base.subsets; ++s) {
                SubsetOutcome outcome = run_subset_protocol(base, train, remapped_test, n_m, s);
                const FlowDataset subset = sample_subset(
                    train, SubsetSpec{base.n_benign, n_m, outcome.result.subset_seed});
                for (std::size_t v = 0; v < variants.size(); ++v) {
                    ModelBundle variant = outcome.final_model;
                    attach_inference_head(variant, variants[v], base.epochs);
                    SubsetResult sub;
                    sub.subset_index = s;
                    sub.subset_seed = outcome.result.subset_seed;
                    sub.best_trial = outcome.result.best_trial;
                    sub.trials = outcome.result.trials;
                    sub.test_score = evaluate_bundle(variant, remapped_test, base.task);
                    sub.train_score = evaluate_bundle(variant, subset, base.task);
                    if (sub.train_score.macro_f1 > 0.0)
                        sub.generalization_gap = generalization_gap(sub.train_score.macro_f1,
                                                                    sub.test_score.macro_f1);
                    per_variant[v].subsets.push_back(std::move(sub));
                }
            }
            for (std::size_t v = 0; v < variants.size(); ++v) {
                per_variant[v].aggregate = aggregate_setting(per_variant[v].subsets);
                settings[v].push_back(std::move(per_variant[v]));
            }
        }
        for (std::size_t v = 0; v < variants.size(); ++v) {
            reports[v].settings = std::move(settings[v]);
            results.push_back({to_string(variants[v]), std::move(reports[v])});
        }
        return results;
    }
    }
    return results;
}

} // namespace tripletflow
