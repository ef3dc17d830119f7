#include "tripletflow/config.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "tripletflow/error.hpp"

namespace tripletflow {

namespace {

const std::set<std::string> kKnownKeys{
    "name",         "train_csv",      "test_csv",         "label_column",
    "benign_class", "task",           "family",           "mining",
    "metric",       "inference",      "train_label_mode", "subsets",
    "n_benign",     "n_per_attack",   "folds",            "budget",
    "epochs",       "temperature",    "offline_triplets", "offline_pairs",
    "workers",      "seed_configuration", "seed_subset",  "seed_cv",
    "seed_search",  "seed_split",     "include_self_positive",
    "average_over_active_only",
    "space_learning_rate", "space_batch_size", "space_weight_decay", "space_neurons",
    "space_depth",  "space_dropout",  "space_embedding_dim", "space_margin", "space_knn_k",
    "learning_rate", "batch_size",    "weight_decay",     "neurons",
    "depth",        "dropout",        "embedding_dim",    "margin",
    "knn_k",        "seed_train",     "ablate_benign_counts"};

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> items;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = value.find(',', start);
        if (comma == std::string::npos) {
            const std::string item = trim(value.substr(start));
            if (!item.empty()) items.push_back(item);
            break;
        }
        const std::string item = trim(value.substr(start, comma - start));
        if (!item.empty()) items.push_back(item);
        start = comma + 1;
    }
    return items;
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse real '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
        throw ConfigError("config key '" + key + "': cannot parse integer '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("config key '" + key + "': cannot parse boolean '" + value + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    for (const std::string& item : split_list(value))
        out.push_back(static_cast<std::size_t>(parse_u64(key, item)));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

std::vector<double> parse_real_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (const std::string& item : split_list(value)) out.push_back(parse_real(key, item));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

// "lo:hi" for log-uniform ranges
std::pair<double, double> parse_range(const std::string& key, const std::string& value) {
    const std::size_t colon = value.find(':');
    if (colon == std::string::npos)
        throw ConfigError("config key '" + key + "': expected 'lo:hi', got '" + value + "'");
    return {parse_real(key, trim(value.substr(0, colon))),
            parse_real(key, trim(value.substr(colon + 1)))};
}

} // namespace

ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    ConfigMap map;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
        map[key] = value;
    }
    return map;
}

void apply_overrides(ConfigMap& map, const std::vector<std::string>& overrides) {
    for (const std::string& ov : overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + ov + "' is not of the form key=value");
        map[trim(ov.substr(0, eq))] = trim(ov.substr(eq + 1));
    }
}

ExperimentConfig experiment_config_from_map(const ConfigMap& map) {
    for (const auto& [key, value] : map)
        if (!kKnownKeys.count(key)) throw ConfigError("unknown config key: " + key);

    ExperimentConfig cfg;
    auto get = [&map](const char* key) -> const std::string* {
        auto it = map.find(key);
        return it == map.end() ? nullptr : &it->second;
    };

    if (auto* v = get("name")) cfg.name = *v;
    if (auto* v = get("train_csv")) cfg.train_csv = *v;
    if (auto* v = get("test_csv")) cfg.test_csv = *v;
    if (auto* v = get("label_column")) cfg.label_column = *v;
    if (auto* v = get("benign_class")) cfg.benign_class = *v;
    if (auto* v = get("task")) cfg.task = task_from_string(*v);
    if (auto* v = get("family")) cfg.family = model_family_from_string(*v);
    if (auto* v = get("mining")) cfg.mining = mining_strategy_from_string(*v);
    if (auto* v = get("metric")) cfg.metric = distance_metric_from_string(*v);
    if (auto* v = get("inference")) cfg.inference = inference_rule_from_string(*v);
    if (auto* v = get("train_label_mode")) cfg.train_label_mode = train_label_mode_from_string(*v);
    if (auto* v = get("subsets")) cfg.subsets = parse_u64("subsets", *v);
    if (auto* v = get("n_benign")) cfg.n_benign = parse_u64("n_benign", *v);
    if (auto* v = get("n_per_attack")) cfg.n_per_attack = parse_size_list("n_per_attack", *v);
    if (auto* v = get("folds")) cfg.folds = parse_u64("folds", *v);
    if (auto* v = get("budget")) cfg.budget = parse_u64("budget", *v);
    if (auto* v = get("epochs")) cfg.epochs = parse_u64("epochs", *v);
    if (auto* v = get("temperature")) cfg.temperature = parse_real("temperature", *v);
    if (auto* v = get("offline_triplets"))
        cfg.offline_triplets = parse_u64("offline_triplets", *v);
    if (auto* v = get("offline_pairs")) cfg.offline_pairs = parse_u64("offline_pairs", *v);
    if (auto* v = get("workers")) cfg.workers = parse_u64("workers", *v);
    if (auto* v = get("seed_configuration"))
        cfg.seeds.configuration = parse_u64("seed_configuration", *v);
    if (auto* v = get("seed_subset")) cfg.seeds.subset_sampling = parse_u64("seed_subset", *v);
    if (auto* v = get("seed_cv")) cfg.seeds.cv_split = parse_u64("seed_cv", *v);
    if (auto* v = get("seed_search"))
        cfg.seeds.hyperparameter_search = parse_u64("seed_search", *v);
    if (auto* v = get("seed_split")) cfg.seeds.dataset_split = parse_u64("seed_split", *v);
    if (auto* v = get("include_self_positive"))
        cfg.batch_all_options.include_self_positive = parse_bool("include_self_positive", *v);
    if (auto* v = get("average_over_active_only"))
        cfg.batch_all_options.average_over_active_only =
            parse_bool("average_over_active_only", *v);

    if (auto* v = get("space_learning_rate")) {
        auto [lo, hi] = parse_range("space_learning_rate", *v);
        cfg.space.learning_rate_lo = lo;
        cfg.space.learning_rate_hi = hi;
    }
    if (auto* v = get("space_weight_decay")) {
        auto [lo, hi] = parse_range("space_weight_decay", *v);
        cfg.space.weight_decay_lo = lo;
        cfg.space.weight_decay_hi = hi;
    }
    if (auto* v = get("space_batch_size"))
        cfg.space.batch_sizes = parse_size_list("space_batch_size", *v);
    if (auto* v = get("space_neurons")) cfg.space.neurons = parse_size_list("space_neurons", *v);
    if (auto* v = get("space_depth")) cfg.space.depths = parse_size_list("space_depth", *v);
    if (auto* v = get("space_dropout")) cfg.space.dropouts = parse_real_list("space_dropout", *v);
    if (auto* v = get("space_embedding_dim"))
        cfg.space.embedding_dims = parse_size_list("space_embedding_dim", *v);
    if (auto* v = get("space_margin")) cfg.space.margins = parse_real_list("space_margin", *v);
    if (auto* v = get("space_knn_k")) cfg.space.knn_ks = parse_size_list("space_knn_k", *v);

    validate(cfg);
    return cfg;
}

TrialConfig trial_config_from_map(const ConfigMap& map) {
    TrialConfig trial;
    auto get = [&map](const char* key) -> const std::string* {
        auto it = map.find(key);
        return it == map.end() ? nullptr : &it->second;
    };
    if (auto* v = get("learning_rate")) trial.learning_rate = parse_real("learning_rate", *v);
    if (auto* v = get("batch_size"))
        trial.batch_size = static_cast<std::size_t>(parse_u64("batch_size", *v));
    if (auto* v = get("weight_decay")) trial.weight_decay = parse_real("weight_decay", *v);
    if (auto* v = get("neurons")) trial.neurons = static_cast<std::size_t>(parse_u64("neurons", *v));
    if (auto* v = get("depth")) trial.depth = static_cast<std::size_t>(parse_u64("depth", *v));
    if (auto* v = get("dropout")) trial.dropout = parse_real("dropout", *v);
    if (auto* v = get("embedding_dim"))
        trial.embedding_dim = static_cast<std::size_t>(parse_u64("embedding_dim", *v));
    if (auto* v = get("margin")) trial.margin = parse_real("margin", *v);
    if (auto* v = get("knn_k")) trial.knn_k = static_cast<std::size_t>(parse_u64("knn_k", *v));
    return trial;
}

std::string config_hash(const ConfigMap& map) {
    std::uint64_t hash = 0xcbf29ce484222325ULL; // FNV offset basis
    auto mix = [&hash](const std::string& s) {
        for (unsigned char c : s) {
            hash ^= c;
            hash *= 0x100000001b3ULL;
        }
    };
    for (const auto& [key, value] : map) { // std::map iterates in key order
        mix(key);
        mix("=");
        mix(value);
        mix("\n");
    }
    char buf[17];
    static const char* digits = "0123456789abcdef";
    for (int i = 0; i < 16; ++i) buf[15 - i] = digits[(hash >> (4 * i)) & 0xF];
    buf[16] = 0;
    return std::string(buf);
}

} // namespace tripletflow
