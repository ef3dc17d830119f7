#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tripletflow/config.hpp"
#include "tripletflow/dataset.hpp"
#include "tripletflow/error.hpp"
#include "tripletflow/harness.hpp"
#include "tripletflow/serialize.hpp"
#include "tripletflow/synthetic.hpp"

namespace fs = std::filesystem;
using namespace tripletflow;
using nlohmann::json;

namespace {

struct SplitArgs {
    std::string input;
    std::string synthetic;
    std::string label_col = "label";
    std::string benign = "benign";
    double fraction = 0.5;
    std::uint64_t seed = 39058032;
    std::string out = ".";
    std::size_t classes = 5;
    std::size_t dim = 20;
    double sep = 6.0;
    std::size_t benign_rows = 5000;
    std::size_t attack_rows = 1250;
};

struct RunArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::size_t workers = 0; // 0: take the config value
    std::string axis;       // ablate only
};

struct EvalArgs {
    std::string model;
    std::string input;
    std::string label_col = "label";
};

struct ReportArgs {
    std::string run;
    std::string format = "table";
};

std::string run_root() {
    const char* env = std::getenv("TRIPLETFLOW_RUN_ROOT");
    return env ? env : "runs";
}

void write_report_files(const ExperimentReport& report, const ConfigMap& echo,
                        const fs::path& dir, const std::string& stem) {
    fs::create_directories(dir);
    save_text(experiment_to_json(report, &echo).dump(2) + "\n", (dir / (stem + ".json")).string());
    save_text(experiment_csv_header() + experiment_csv_rows(report),
              (dir / (stem + ".csv")).string());
}

int cmd_split(const SplitArgs& args) {
    FlowDataset ds;
    if (!args.synthetic.empty()) {
        if (args.synthetic != "blobs")
            throw ConfigError("unknown synthetic generator: " + args.synthetic);
        BlobSpec spec;
        spec.classes = args.classes;
        spec.dim = args.dim;
        spec.separation = args.sep;
        spec.seed = args.seed;
        spec.rows_per_class.assign(args.classes, args.attack_rows);
        spec.rows_per_class[0] = args.benign_rows;
        ds = make_blobs(spec);
    } else {
        if (args.input.empty()) throw ConfigError("split needs --input or --synthetic");
        // flag validation happens before any data work: a label column that
        // is not in the header is a usage error, not a data error
        {
            std::ifstream head(args.input);
            if (head) {
                std::string header;
                std::getline(head, header);
                bool found = false;
                std::size_t start = 0;
                while (start <= header.size()) {
                    std::size_t comma = header.find(',', start);
                    std::string field = header.substr(
                        start, comma == std::string::npos ? std::string::npos : comma - start);
                    while (!field.empty() && (field.back() == '\r' || field.back() == ' '))
                        field.pop_back();
                    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
                    if (field == args.label_col) { found = true; break; }
                    if (comma == std::string::npos) break;
                    start = comma + 1;
                }
                if (!found)
                    throw ConfigError("label column '" + args.label_col + "' not found in " +
                                      args.input);
            }
        }
        CsvLoadResult loaded = load_csv(args.input, args.label_col, args.benign);
        if (loaded.dropped_rows > 0)
            std::cerr << "dropped " << loaded.dropped_rows
                      << " rows with non-finite features\n";
        ds = std::move(loaded.dataset);
    }
    auto [train, test] = stratified_split(ds, args.fraction, args.seed);
    fs::create_directories(args.out);
    write_csv(train, (fs::path(args.out) / "train.csv").string(), args.label_col);
    write_csv(test, (fs::path(args.out) / "test.csv").string(), args.label_col);
    write_class_map(ds, (fs::path(args.out) / "classes.json").string());
    return 0;
}

int cmd_search(const RunArgs& args) {
    ConfigMap map = parse_config_file(args.config);
    apply_overrides(map, args.overrides);
    ExperimentConfig cfg = experiment_config_from_map(map);
    if (args.workers > 0) cfg.workers = args.workers;

    const fs::path dir =
        args.out.empty() ? fs::path(run_root()) / config_hash(map) : fs::path(args.out);
    fs::create_directories(dir);

    auto train = load_csv(cfg.train_csv, cfg.label_column, cfg.benign_class);
    auto test = load_csv(cfg.test_csv, cfg.label_column, cfg.benign_class);

    const ExperimentReport report = run_experiment(
        cfg, train.dataset, test.dataset,
        [&dir](std::size_t n_m, std::size_t subset, const ModelBundle& bundle) {
            const std::string name =
                "model_nm" + std::to_string(n_m) + "_s" + std::to_string(subset) + ".json";
            save_bundle(bundle, (dir / name).string());
        });
    write_report_files(report, map, dir, "experiment");
    std::cout << dir.string() << "\n";
    return 0;
}

int cmd_train(const RunArgs& args, const std::string& out_path) {
    ConfigMap map = parse_config_file(args.config);
    apply_overrides(map, args.overrides);
    ExperimentConfig cfg = experiment_config_from_map(map);
    TrialConfig trial = trial_config_from_map(map);

    std::uint64_t seed = cfg.seeds.configuration;
    if (auto it = map.find("seed_train"); it != map.end())
        seed = std::strtoull(it->second.c_str(), nullptr, 10);

    auto train = load_csv(cfg.train_csv, cfg.label_column, cfg.benign_class);
    ModelBundle bundle = train_model(cfg, trial, train.dataset, seed);
    bundle.train_score = evaluate_bundle(bundle, train.dataset, cfg.task);

    const fs::path out = out_path.empty() ? fs::path("model.json") : fs::path(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_bundle(bundle, out.string());
    std::cout << out.string() << "\n";
    return 0;
}

int cmd_eval(const EvalArgs& args) {
    const ModelBundle bundle = load_bundle(args.model);
    auto loaded = load_csv(args.input, args.label_col, bundle.source_class_map[0]);
    const FlowDataset ds = remap_classes(loaded.dataset, bundle.source_class_map);
    const ScoreReport report = evaluate_bundle(bundle, ds, bundle.task);
    std::cout << score_to_json(report).dump(2) << "\n";
    return 0;
}

int cmd_ablate(const RunArgs& args) {
    ConfigMap map = parse_config_file(args.config);
    apply_overrides(map, args.overrides);
    ExperimentConfig cfg = experiment_config_from_map(map);
    if (args.workers > 0) cfg.workers = args.workers;
    const AblationAxis axis = ablation_axis_from_string(args.axis);

    std::vector<std::size_t> benign_counts{1000, 5000, 10000, 20000};
    if (auto it = map.find("ablate_benign_counts"); it != map.end()) {
        benign_counts.clear();
        const std::string& item = it->second;
        std::size_t start = 0;
        while (start <= item.size()) {
            const std::size_t comma = item.find(',', start);
            const std::string tok = item.substr(
                start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!tok.empty()) benign_counts.push_back(std::strtoull(tok.c_str(), nullptr, 10));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (benign_counts.empty()) throw ConfigError("ablate_benign_counts: empty list");
    }

    const fs::path dir =
        args.out.empty() ? fs::path(run_root()) / config_hash(map) : fs::path(args.out);
    fs::create_directories(dir);

    auto train = load_csv(cfg.train_csv, cfg.label_column, cfg.benign_class);
    auto test = load_csv(cfg.test_csv, cfg.label_column, cfg.benign_class);
    const auto results = run_ablation(axis, cfg, train.dataset, test.dataset, benign_counts);
    for (const AblationResult& result : results) {
        ConfigMap echo = map;
        echo["ablation_axis"] = to_string(axis);
        echo["ablation_value"] = result.label;
        write_report_files(result.report, echo, dir, to_string(axis) + "_" + result.label);
    }
    std::cout << dir.string() << "\n";
    return 0;
}

struct ReportRow {
    std::string model;
    std::string task;
    std::size_t n_per_attack = 0;
    SettingAggregate agg;
};

SettingAggregate aggregate_from_json(const json& j) {
    auto summary = [&j](const char* key) {
        MetricSummary s;
        s.mean = j.at(key).at("mean").get<double>();
        s.stddev = j.at(key).at("std").get<double>();
        return s;
    };
    SettingAggregate agg;
    agg.test_macro_f1 = summary("test_macro_f1");
    agg.test_macro_recall = summary("test_macro_recall");
    agg.test_macro_precision = summary("test_macro_precision");
    agg.test_fp_rate = summary("test_fp_rate");
    agg.train_macro_f1 = summary("train_macro_f1");
    agg.generalization_gap = summary("generalization_gap");
    return agg;
}

int cmd_report(const ReportArgs& args) {
    if (!fs::is_directory(args.run)) throw DataError("not a run directory: " + args.run);
    std::vector<ReportRow> rows;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.run))
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
        json j;
        try {
            j = load_json_file(file.string());
        } catch (const DataError&) {
            continue;
        }
        if (!j.is_object() || j.value("type", "") != "experiment_report") continue;
        for (const json& setting : j.at("settings")) {
            ReportRow row;
            row.model = j.at("model").get<std::string>();
            row.task = j.at("task").get<std::string>();
            row.n_per_attack = setting.at("n_per_attack").get<std::size_t>();
            row.agg = aggregate_from_json(setting.at("aggregate"));
            rows.push_back(std::move(row));
        }
    }
    if (rows.empty()) throw DataError("no experiment reports in " + args.run);

    std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        if (a.n_per_attack != b.n_per_attack) return a.n_per_attack < b.n_per_attack;
        return a.model < b.model;
    });

    if (args.format == "json") {
        json out = json::array();
        for (const ReportRow& row : rows) {
            out.push_back(json{{"model", row.model},
                               {"task", row.task},
                               {"n_per_attack", row.n_per_attack},
                               {"test_macro_f1",
                                {{"mean", row.agg.test_macro_f1.mean},
                                 {"std", row.agg.test_macro_f1.stddev}}},
                               {"test_macro_recall",
                                {{"mean", row.agg.test_macro_recall.mean},
                                 {"std", row.agg.test_macro_recall.stddev}}},
                               {"test_macro_precision",
                                {{"mean", row.agg.test_macro_precision.mean},
                                 {"std", row.agg.test_macro_precision.stddev}}},
                               {"test_fp_rate",
                                {{"mean", row.agg.test_fp_rate.mean},
                                 {"std", row.agg.test_fp_rate.stddev}}},
                               {"generalization_gap",
                                {{"mean", row.agg.generalization_gap.mean},
                                 {"std", row.agg.generalization_gap.stddev}}}});
        }
        std::cout << out.dump(2) << "\n";
    } else if (args.format == "csv") {
        std::string out =
            "model,task,n_per_attack,test_macro_f1_mean,test_macro_f1_std,"
            "test_macro_recall_mean,test_macro_recall_std,test_macro_precision_mean,"
            "test_macro_precision_std,test_fp_rate_mean,test_fp_rate_std,"
            "generalization_gap_mean,generalization_gap_std\n";
        for (const ReportRow& row : rows) {
            out += row.model + ',' + row.task + ',' + std::to_string(row.n_per_attack) + ',';
            out += format_double(row.agg.test_macro_f1.mean) + ',' +
                   format_double(row.agg.test_macro_f1.stddev) + ',';
            out += format_double(row.agg.test_macro_recall.mean) + ',' +
                   format_double(row.agg.test_macro_recall.stddev) + ',';
            out += format_double(row.agg.test_macro_precision.mean) + ',' +
                   format_double(row.agg.test_macro_precision.stddev) + ',';
            out += format_double(row.agg.test_fp_rate.mean) + ',' +
                   format_double(row.agg.test_fp_rate.stddev) + ',';
            out += format_double(row.agg.generalization_gap.mean) + ',' +
                   format_double(row.agg.generalization_gap.stddev) + '\n';
        }
        std::cout << out;
    } else if (args.format == "table") {
        std::printf("%-24s %6s  %-17s %-17s %-17s %-19s %s\n", "model", "N_M", "macro_f1",
                    "recall", "precision", "fp_rate", "gap");
        for (const ReportRow& row : rows) {
            auto cell = [](const MetricSummary& s) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.4f\xC2\xB1%.4f", s.mean, s.stddev);
                return std::string(buf);
            };
            std::printf("%-24s %6zu  %-17s %-17s %-17s %-19s %s\n", row.model.c_str(),
                        row.n_per_attack, cell(row.agg.test_macro_f1).c_str(),
                        cell(row.agg.test_macro_recall).c_str(),
                        cell(row.agg.test_macro_precision).c_str(),
                        cell(row.agg.test_fp_rate).c_str(),
                        cell(row.agg.generalization_gap).c_str());
        }
    } else {
        throw ConfigError("unknown report format: " + args.format);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot network-flow classification with triplet-mined embeddings"};
    app.require_subcommand(1);

    SplitArgs split_args;
    auto* split = app.add_subcommand("split", "split a CSV (or synthetic blobs) into train/test");
    split->add_option("--input", split_args.input, "input CSV file");
    split->add_option("--synthetic", split_args.synthetic, "synthetic generator (blobs)");
    split->add_option("--label-col", split_args.label_col, "label column name");
    split->add_option("--benign", split_args.benign, "benign class name");
    split->add_option("--fraction", split_args.fraction, "train fraction in (0,1)");
    split->add_option("--seed", split_args.seed, "split (and generator) seed");
    split->add_option("--out", split_args.out, "output directory")->required();
    split->add_option("--classes", split_args.classes, "blob classes");
    split->add_option("--dim", split_args.dim, "blob feature count");
    split->add_option("--sep", split_args.sep, "blob centre separation (in sigma)");
    split->add_option("--benign-rows", split_args.benign_rows, "benign rows to generate");
    split->add_option("--attack-rows", split_args.attack_rows, "rows per attack class");

    RunArgs search_args;
    auto* search = app.add_subcommand("search", "hyperparameter search + final evaluation");
    search->add_option("--config", search_args.config, "experiment config file")->required();
    search->add_option("--override", search_args.overrides, "key=value config overrides");
    search->add_option("--out", search_args.out, "run directory (default: run root/config hash)");
    search->add_option("--workers", search_args.workers, "parallel trial workers");

    RunArgs train_args;
    std::string train_out;
    auto* train = app.add_subcommand("train", "train one fixed configuration");
    train->add_option("--config", train_args.config, "config file with fixed hyperparameters")
        ->required();
    train->add_option("--override", train_args.overrides, "key=value config overrides");
    train->add_option("--out", train_out, "output bundle path")->required();

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "score a trained bundle on a CSV");
    eval->add_option("--model", eval_args.model, "model bundle JSON")->required();
    eval->add_option("--input", eval_args.input, "CSV to score")->required();
    eval->add_option("--label-col", eval_args.label_col, "label column name");

    RunArgs ablate_args;
    auto* ablate = app.add_subcommand("ablate", "run one ablation axis");
    ablate->add_option("--config", ablate_args.config, "experiment config file")->required();
    ablate
        ->add_option("--axis", ablate_args.axis,
                     "mining|distance|inference|benign_count|rebalanced_inference|"
                     "siamese_vs_triplet")
        ->required();
    ablate->add_option("--override", ablate_args.overrides, "key=value config overrides");
    ablate->add_option("--out", ablate_args.out, "run directory");
    ablate->add_option("--workers", ablate_args.workers, "parallel trial workers");

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "aggregate run-directory reports");
    report->add_option("--run", report_args.run, "run directory")->required();
    report->add_option("--format", report_args.format, "table|csv|json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (split->parsed()) return cmd_split(split_args);
        if (search->parsed()) return cmd_search(search_args);
        if (train->parsed()) return cmd_train(train_args, train_out);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (ablate->parsed()) return cmd_ablate(ablate_args);
        if (report->parsed()) return cmd_report(report_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
