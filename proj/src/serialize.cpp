#include "tripletflow/serialize.hpp"

#include <charconv>
#include <fstream>

#include "tripletflow/error.hpp"

namespace tripletflow {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols) throw DataError("matrix payload size mismatch");
    return m;
}

json trial_to_json(const TrialConfig& t) {
    return json{{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
                {"weight_decay", t.weight_decay},   {"neurons", t.neurons},
                {"depth", t.depth},                 {"dropout", t.dropout},
                {"embedding_dim", t.embedding_dim}, {"margin", t.margin},
                {"knn_k", t.knn_k}};
}

TrialConfig trial_from_json(const json& j) {
    TrialConfig t;
    t.learning_rate = j.at("learning_rate").get<double>();
    t.batch_size = j.at("batch_size").get<std::size_t>();
    t.weight_decay = j.at("weight_decay").get<double>();
    t.neurons = j.at("neurons").get<std::size_t>();
    t.depth = j.at("depth").get<std::size_t>();
    t.dropout = j.at("dropout").get<double>();
    t.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    t.margin = j.at("margin").get<double>();
    t.knn_k = j.at("knn_k").get<std::size_t>();
    return t;
}

json index_to_json(const EmbeddingIndex& index) {
    return json{{"embeddings", matrix_to_json(index.embeddings)},
                {"labels", index.labels},
                {"metric", to_string(index.metric)},
                {"class_map", index.class_map}};
}

EmbeddingIndex index_from_json(const json& j) {
    EmbeddingIndex index;
    index.embeddings = matrix_from_json(j.at("embeddings"));
    index.labels = j.at("labels").get<std::vector<int>>();
    index.metric = distance_metric_from_string(j.at("metric").get<std::string>());
    index.class_map = j.at("class_map").get<std::vector<std::string>>();
    return index;
}

json encoder_to_json(const EncoderParams& params) {
    json weights = json::array();
    for (const Matrix& w : params.weights) weights.push_back(matrix_to_json(w));
    return json{{"config",
                 {{"input_dim", params.config.input_dim},
                  {"hidden_width", params.config.hidden_width},
                  {"depth", params.config.depth},
                  {"output_dim", params.config.output_dim},
                  {"dropout_p", params.config.dropout_p}}},
                {"weights", weights},
                {"biases", params.biases}};
}

EncoderParams encoder_from_json(const json& j) {
    EncoderParams params;
    const json& c = j.at("config");
    params.config.input_dim = c.at("input_dim").get<std::size_t>();
    params.config.hidden_width = c.at("hidden_width").get<std::size_t>();
    params.config.depth = c.at("depth").get<std::size_t>();
    params.config.output_dim = c.at("output_dim").get<std::size_t>();
    params.config.dropout_p = c.at("dropout_p").get<double>();
    for (const json& w : j.at("weights")) params.weights.push_back(matrix_from_json(w));
    params.biases = j.at("biases").get<std::vector<std::vector<double>>>();
    return params;
}

json head_to_json(const LinearClassifier& clf) {
    return json{{"weight", matrix_to_json(clf.weight)}, {"bias", clf.bias}};
}

LinearClassifier head_from_json(const json& j) {
    LinearClassifier clf;
    clf.weight = matrix_from_json(j.at("weight"));
    clf.bias = j.at("bias").get<std::vector<double>>();
    return clf;
}

json summary_to_json(const MetricSummary& s) {
    return json{{"mean", s.mean}, {"std", s.stddev}};
}

} // namespace

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

json score_to_json(const ScoreReport& report) {
    return json{{"macro_f1", report.macro_f1},
                {"macro_recall", report.macro_recall},
                {"macro_precision", report.macro_precision},
                {"fp_rate", report.fp_rate},
                {"per_class_f1", report.per_class_f1},
                {"support", report.support}};
}

ScoreReport score_from_json(const json& j) {
    ScoreReport report;
    report.macro_f1 = j.at("macro_f1").get<double>();
    report.macro_recall = j.at("macro_recall").get<double>();
    report.macro_precision = j.at("macro_precision").get<double>();
    report.fp_rate = j.at("fp_rate").get<double>();
    report.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
    report.support = j.at("support").get<std::vector<std::size_t>>();
    return report;
}

json bundle_to_json(const ModelBundle& bundle) {
    json j{{"format", "tripletflow-bundle"},
           {"version", 1},
           {"family", to_string(bundle.family)},
           {"task", to_string(bundle.task)},
           {"train_label_mode", to_string(bundle.label_mode)},
           {"metric", to_string(bundle.metric)},
           {"inference", to_string(bundle.inference)},
           {"temperature", bundle.temperature},
           {"trial", trial_to_json(bundle.trial)},
           {"epochs", bundle.epochs},
           {"source_class_map", bundle.source_class_map},
           {"model_class_map", bundle.model_class_map},
           {"normalizer", {{"mean", bundle.normalizer.mean}, {"std", bundle.normalizer.std}}},
           {"train_seed", bundle.train_seed},
           {"prototype_seed", bundle.prototype_seed},
           {"epoch_losses", bundle.epoch_losses}};
    if (bundle.encoder) j["encoder"] = encoder_to_json(*bundle.encoder);
    if (bundle.index) j["index"] = index_to_json(*bundle.index);
    if (bundle.balanced_index) j["balanced_index"] = index_to_json(*bundle.balanced_index);
    if (bundle.head) j["head"] = head_to_json(*bundle.head);
    if (bundle.train_score) j["train_score"] = score_to_json(*bundle.train_score);
    return j;
}

ModelBundle bundle_from_json(const json& j) {
    if (j.value("format", "") != "tripletflow-bundle")
        throw DataError("not a model bundle file");
    if (j.value("version", 0) != 1) throw DataError("unsupported bundle version");
    ModelBundle bundle;
    bundle.family = model_family_from_string(j.at("family").get<std::string>());
    bundle.task = task_from_string(j.at("task").get<std::string>());
    bundle.label_mode = train_label_mode_from_string(j.at("train_label_mode").get<std::string>());
    bundle.metric = distance_metric_from_string(j.at("metric").get<std::string>());
    bundle.inference = inference_rule_from_string(j.at("inference").get<std::string>());
    bundle.temperature = j.at("temperature").get<double>();
    bundle.trial = trial_from_json(j.at("trial"));
    bundle.epochs = j.at("epochs").get<std::size_t>();
    bundle.source_class_map = j.at("source_class_map").get<std::vector<std::string>>();
    bundle.model_class_map = j.at("model_class_map").get<std::vector<std::string>>();
    bundle.normalizer.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
    bundle.normalizer.std = j.at("normalizer").at("std").get<std::vector<double>>();
    bundle.train_seed = j.at("train_seed").get<std::uint64_t>();
    bundle.prototype_seed = j.at("prototype_seed").get<std::uint64_t>();
    bundle.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    if (j.contains("encoder")) bundle.encoder = encoder_from_json(j.at("encoder"));
    if (j.contains("index")) bundle.index = index_from_json(j.at("index"));
    if (j.contains("balanced_index"))
        bundle.balanced_index = index_from_json(j.at("balanced_index"));
    if (j.contains("head")) bundle.head = head_from_json(j.at("head"));
    if (j.contains("train_score")) bundle.train_score = score_from_json(j.at("train_score"));
    return bundle;
}

void save_bundle(const ModelBundle& bundle, const std::string& path) {
    save_text(bundle_to_json(bundle).dump(2) + "\n", path);
}

ModelBundle load_bundle(const std::string& path) {
    return bundle_from_json(load_json_file(path));
}

json experiment_to_json(const ExperimentReport& report,
                        const std::map<std::string, std::string>* config_echo) {
    json settings = json::array();
    for (const SettingReport& setting : report.settings) {
        json subsets = json::array();
        for (const SubsetResult& sub : setting.subsets) {
            json trials = json::array();
            for (const TrialReport& trial : sub.trials) {
                json t{{"index", trial.trial_index},
                       {"config", trial_to_json(trial.config)},
                       {"fold_f1", trial.fold_f1},
                       {"mean_f1", trial.mean_f1},
                       {"failed", trial.failed}};
                if (trial.failed) t["failure"] = trial.failure;
                trials.push_back(std::move(t));
            }
            json s{{"subset", sub.subset_index},
                   {"subset_seed", sub.subset_seed},
                   {"best_trial", sub.best_trial},
                   {"trials", std::move(trials)},
                   {"test", score_to_json(sub.test_score)},
                   {"train", score_to_json(sub.train_score)}};
            s["generalization_gap"] =
                sub.generalization_gap ? json(*sub.generalization_gap) : json(nullptr);
            subsets.push_back(std::move(s));
        }
        settings.push_back(json{{"n_per_attack", setting.n_per_attack},
                                {"subsets", std::move(subsets)},
                                {"aggregate",
                                 {{"test_macro_f1", summary_to_json(setting.aggregate.test_macro_f1)},
                                  {"test_macro_recall",
                                   summary_to_json(setting.aggregate.test_macro_recall)},
                                  {"test_macro_precision",
                                   summary_to_json(setting.aggregate.test_macro_precision)},
                                  {"test_fp_rate", summary_to_json(setting.aggregate.test_fp_rate)},
                                  {"train_macro_f1",
                                   summary_to_json(setting.aggregate.train_macro_f1)},
                                  {"generalization_gap",
                                   summary_to_json(setting.aggregate.generalization_gap)}}}});
    }
    json j{{"type", "experiment_report"},
           {"version", 1},
           {"model", report.model},
           {"task", to_string(report.task)},
           {"settings", std::move(settings)}};
    if (config_echo) j["config"] = *config_echo;
    return j;
}

std::string experiment_csv_header() {
    return "model,task,n_per_attack,subset,test_macro_f1,test_macro_recall,"
           "test_macro_precision,test_fp_rate,train_macro_f1,generalization_gap\n";
}

std::string experiment_csv_rows(const ExperimentReport& report) {
    std::string out;
    for (const SettingReport& setting : report.settings) {
        for (const SubsetResult& sub : setting.subsets) {
            out += report.model;
            out += ',';
            out += to_string(report.task);
            out += ',';
            out += std::to_string(setting.n_per_attack);
            out += ',';
            out += std::to_string(sub.subset_index);
            out += ',';
            out += format_double(sub.test_score.macro_f1);
            out += ',';
            out += format_double(sub.test_score.macro_recall);
            out += ',';
            out += format_double(sub.test_score.macro_precision);
            out += ',';
            out += format_double(sub.test_score.fp_rate);
            out += ',';
            out += format_double(sub.train_score.macro_f1);
            out += ',';
            out += sub.generalization_gap ? format_double(*sub.generalization_gap) : "";
            out += '\n';
        }
    }
    return out;
}

void save_text(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << text;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

} // namespace tripletflow
