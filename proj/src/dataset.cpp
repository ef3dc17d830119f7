#include "tripletflow/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "tripletflow/error.hpp"

namespace tripletflow {

namespace {

std::vector<std::size_t> count_classes(const std::vector<int>& labels, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

bool parse_double(const std::string& field, double& out) {
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (first != last && *first == '+') ++first; // from_chars rejects a leading plus
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last && first != last;
}

void format_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

// per-class row index lists, in dataset order
std::vector<std::vector<std::size_t>> rows_by_class(const FlowDataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    return by_class;
}

} // namespace

FlowDataset make_dataset(Matrix features, std::vector<int> labels,
                         std::vector<std::string> class_map,
                         std::vector<std::string> feature_names) {
    if (features.rows != labels.size())
        throw std::invalid_argument("make_dataset: features and labels disagree on row count");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= class_map.size())
            throw std::invalid_argument("make_dataset: label outside class map");
    if (!features.all_finite())
        throw std::invalid_argument("make_dataset: non-finite feature value");
    if (feature_names.empty()) {
        feature_names.reserve(features.cols);
        for (std::size_t j = 0; j < features.cols; ++j)
            feature_names.push_back("f" + std::to_string(j));
    }
    FlowDataset ds;
    ds.class_counts = count_classes(labels, class_map.size());
    ds.features = std::move(features);
    ds.labels = std::move(labels);
    ds.class_map = std::move(class_map);
    ds.feature_names = std::move(feature_names);
    return ds;
}

CsvLoadResult load_csv(const std::string& path, const std::string& label_column,
                       const std::string& benign_class) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV file: " + path);
    const auto header = split_fields(line);

    std::size_t label_idx = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == label_column) { label_idx = j; break; }
    if (label_idx == header.size())
        throw DataError("label column '" + label_column + "' not found in " + path);

    std::vector<std::string> feature_names;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != label_idx) feature_names.push_back(header[j]);

    std::vector<std::string> class_map{benign_class};
    std::unordered_map<std::string, int> class_ids{{benign_class, 0}};
    bool benign_seen = false;

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t dropped = 0;
    std::size_t line_no = 1;
    const std::size_t f = feature_names.size();
    std::vector<double> row(f);

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size())
            throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        bool finite = true;
        std::size_t col = 0;
        for (std::size_t j = 0; j < fields.size(); ++j) {
            if (j == label_idx) continue;
            double v;
            if (!parse_double(fields[j], v))
                throw DataError(path + ":" + std::to_string(line_no) + ": cannot parse '" +
                                fields[j] + "' in column " + header[j]);
            if (!std::isfinite(v)) finite = false;
            row[col++] = v;
        }
        if (!finite) { ++dropped; continue; }

        const std::string& name = fields[label_idx];
        auto it = class_ids.find(name);
        int id;
        if (it == class_ids.end()) {
            id = static_cast<int>(class_map.size());
            class_ids.emplace(name, id);
            class_map.push_back(name);
        } else {
            id = it->second;
        }
        if (id == 0) benign_seen = true;
        labels.push_back(id);
        values.insert(values.end(), row.begin(), row.end());
    }

    if (labels.empty()) throw DataError("no usable rows in " + path);
    if (!benign_seen)
        throw DataError("benign class '" + benign_class + "' absent from " + path);

    Matrix features(labels.size(), f);
    features.data = std::move(values);
    CsvLoadResult result;
    result.dataset = make_dataset(std::move(features), std::move(labels), std::move(class_map),
                                  std::move(feature_names));
    result.dropped_rows = dropped;
    return result;
}

void write_csv(const FlowDataset& ds, const std::string& path, const std::string& label_column) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write CSV file: " + path);
    std::string buf;
    for (std::size_t j = 0; j < ds.feature_names.size(); ++j) {
        if (j) buf += ',';
        buf += ds.feature_names[j];
    }
    buf += ',';
    buf += label_column;
    buf += '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.feature_count(); ++j) {
            format_double(buf, ds.features(i, j));
            buf += ',';
        }
        buf += ds.class_map[static_cast<std::size_t>(ds.labels[i])];
        buf += '\n';
        if (buf.size() > 1 << 20) { out << buf; buf.clear(); }
    }
    out << buf;
}

void write_class_map(const FlowDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write class map: " + path);
    out << "{\"classes\":[";
    for (std::size_t c = 0; c < ds.class_map.size(); ++c) {
        if (c) out << ',';
        out << '"' << ds.class_map[c] << '"';
    }
    out << "]}\n";
}

FlowDataset take_rows(const FlowDataset& ds, const std::vector<std::size_t>& indices) {
    Matrix features(indices.size(), ds.feature_count());
    std::vector<int> labels(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        std::copy_n(ds.features.row(src), ds.feature_count(), features.row(i));
        labels[i] = ds.labels[src];
    }
    return make_dataset(std::move(features), std::move(labels), ds.class_map, ds.feature_names);
}

FlowDataset remap_classes(const FlowDataset& ds, const std::vector<std::string>& target_class_map) {
    std::unordered_map<std::string, int> target_ids;
    for (std::size_t c = 0; c < target_class_map.size(); ++c)
        target_ids.emplace(target_class_map[c], static_cast<int>(c));
    std::vector<int> mapping(ds.num_classes());
    for (std::size_t c = 0; c < ds.num_classes(); ++c) {
        auto it = target_ids.find(ds.class_map[c]);
        if (it == target_ids.end()) {
            if (ds.class_counts[c] == 0) { mapping[c] = -1; continue; }
            throw DataError("class '" + ds.class_map[c] + "' not present in target class map");
        }
        mapping[c] = it->second;
    }
    std::vector<int> labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        labels[i] = mapping[static_cast<std::size_t>(ds.labels[i])];
    return make_dataset(ds.features, std::move(labels), target_class_map, ds.feature_names);
}

std::pair<FlowDataset, FlowDataset> stratified_split(const FlowDataset& ds, double fraction,
                                                     std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("stratified_split: fraction must lie in (0,1)");
    auto by_class = rows_by_class(ds);
    for (std::size_t c = 0; c < by_class.size(); ++c)
        if (by_class[c].size() < 2)
            throw DataError("stratified_split: class '" + ds.class_map[c] +
                            "' has fewer than 2 samples");
    Rng rng(seed);
    std::vector<std::size_t> first, second;
    for (auto& rows : by_class) {
        rng.shuffle(rows);
        const auto n_first =
            static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows.size())));
        first.insert(first.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_first));
        second.insert(second.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_first), rows.end());
    }
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    return {take_rows(ds, first), take_rows(ds, second)};
}

FlowDataset sample_subset(const FlowDataset& train, const SubsetSpec& spec) {
    if (spec.n_benign < 1 || spec.n_per_attack < 1)
        throw std::invalid_argument("sample_subset: counts must be at least 1");
    auto by_class = rows_by_class(train);
    Rng rng(spec.seed);
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const std::size_t need = c == 0 ? spec.n_benign : spec.n_per_attack;
        if (by_class[c].size() < need)
            throw DataError("sample_subset: class '" + train.class_map[c] + "' has " +
                            std::to_string(by_class[c].size()) + " rows, need " +
                            std::to_string(need));
        rng.shuffle(by_class[c]);
        chosen.insert(chosen.end(), by_class[c].begin(),
                      by_class[c].begin() + static_cast<std::ptrdiff_t>(need));
    }
    std::sort(chosen.begin(), chosen.end());
    return take_rows(train, chosen);
}

std::vector<Fold> stratified_kfold(const FlowDataset& ds, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_kfold: k must be at least 2");
    auto by_class = rows_by_class(ds);
    for (std::size_t c = 0; c < by_class.size(); ++c)
        if (by_class[c].size() < k)
            throw DataError("stratified_kfold: class '" + ds.class_map[c] +
                            "' has fewer than k samples");
    Rng rng(seed);
    std::vector<Fold> folds(k);
    for (auto& rows : by_class) {
        rng.shuffle(rows);
        const std::size_t base = rows.size() / k;
        const std::size_t rem = rows.size() % k;
        std::size_t pos = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t chunk = base + (i < rem ? 1 : 0);
            folds[i].val_indices.insert(folds[i].val_indices.end(), rows.begin() + pos,
                                        rows.begin() + pos + chunk);
            pos += chunk;
        }
    }
    std::vector<char> in_val(ds.size());
    for (auto& fold : folds) {
        std::sort(fold.val_indices.begin(), fold.val_indices.end());
        std::fill(in_val.begin(), in_val.end(), 0);
        for (std::size_t i : fold.val_indices) in_val[i] = 1;
        fold.train_indices.reserve(ds.size() - fold.val_indices.size());
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (!in_val[i]) fold.train_indices.push_back(i);
    }
    return folds;
}

Normalizer fit_normalizer(const FlowDataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("fit_normalizer: empty dataset");
    const std::size_t n = ds.size();
    const std::size_t f = ds.feature_count();
    Normalizer nz;
    nz.mean.assign(f, 0.0);
    nz.std.assign(f, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = ds.features.row(i);
        for (std::size_t j = 0; j < f; ++j) nz.mean[j] += row[j];
    }
    for (std::size_t j = 0; j < f; ++j) nz.mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = ds.features.row(i);
        for (std::size_t j = 0; j < f; ++j) {
            const double d = row[j] - nz.mean[j];
            nz.std[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < f; ++j) {
        nz.std[j] = std::sqrt(nz.std[j] / static_cast<double>(n));
        if (nz.std[j] < 1e-8) nz.std[j] = 1.0; // constant column carries no signal
    }
    return nz;
}

Matrix apply_normalizer(const Normalizer& nz, const Matrix& features) {
    if (features.cols != nz.mean.size())
        throw std::invalid_argument("apply_normalizer: feature width mismatch");
    Matrix out(features.rows, features.cols);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const double* src = features.row(i);
        double* dst = out.row(i);
        for (std::size_t j = 0; j < features.cols; ++j)
            dst[j] = (src[j] - nz.mean[j]) / nz.std[j];
    }
    return out;
}

FlowDataset apply_normalizer(const Normalizer& nz, const FlowDataset& ds) {
    return make_dataset(apply_normalizer(nz, ds.features), ds.labels, ds.class_map,
                        ds.feature_names);
}

SampleWeights compute_sample_weights(const std::vector<int>& labels, std::size_t num_classes) {
    const auto counts = count_classes(labels, num_classes);
    std::size_t present = 0;
    for (std::size_t c : counts) present += c > 0 ? 1 : 0;
    if (present == 0) throw std::invalid_argument("compute_sample_weights: empty dataset");
    SampleWeights weights;
    weights.w.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto cls = static_cast<std::size_t>(labels[i]);
        weights.w[i] = 1.0 / (static_cast<double>(counts[cls]) * static_cast<double>(present));
    }
    return weights;
}

SampleWeights compute_sample_weights(const FlowDataset& ds) {
    return compute_sample_weights(ds.labels, ds.num_classes());
}

std::vector<std::size_t> draw_balanced_batch(const SampleWeights& weights, std::size_t batch_size,
                                             Rng& rng) {
    if (batch_size < 2) throw std::invalid_argument("draw_balanced_batch: batch size must be >= 2");
    if (weights.w.empty()) throw std::invalid_argument("draw_balanced_batch: empty weights");
    std::vector<double> cumulative(weights.w.size());
    std::partial_sum(weights.w.begin(), weights.w.end(), cumulative.begin());
    const double total = cumulative.back();
    std::vector<std::size_t> batch(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        batch[b] = std::min<std::size_t>(
            static_cast<std::size_t>(it - cumulative.begin()), weights.w.size() - 1);
    }
    return batch;
}

FlowDataset binarize_labels(const FlowDataset& ds) {
    std::vector<int> labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = ds.labels[i] == 0 ? 0 : 1;
    return make_dataset(ds.features, std::move(labels), {"benign", "malicious"},
                        ds.feature_names);
}

} // namespace tripletflow
