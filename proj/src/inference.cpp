#include "tripletflow/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tripletflow/error.hpp"

namespace tripletflow {

namespace {

// query-side distance: cosine norms are floored so a degenerate (all-zero)
// embedding scores as maximally dissimilar instead of aborting evaluation;
// training-side kernels stay strict
double query_distance(const double* a, const double* b, std::size_t n, DistanceMetric metric) {
    if (metric != DistanceMetric::cosine) return distance(a, b, n, metric);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    const double denom = std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
    return 1.0 - dot / denom;
}

} // namespace

EmbeddingIndex build_index(const EncoderParams& params, const FlowDataset& ds,
                           DistanceMetric metric) {
    EmbeddingIndex index;
    index.embeddings = forward(params, ds.features, false, nullptr, nullptr);
    if (!index.embeddings.all_finite()) throw NumericError("build_index: non-finite embedding");
    index.labels = ds.labels;
    index.metric = metric;
    index.class_map = ds.class_map;
    return index;
}

EmbeddingIndex make_raw_index(const FlowDataset& ds, DistanceMetric metric) {
    EmbeddingIndex index;
    index.embeddings = ds.features;
    index.labels = ds.labels;
    index.metric = metric;
    index.class_map = ds.class_map;
    return index;
}

NeighborSet knn_neighbors(const EmbeddingIndex& index, const double* z, std::size_t k) {
    if (index.size() == 0) throw DataError("knn_neighbors: empty index");
    if (k < 1 || k > index.size())
        throw std::invalid_argument("knn_neighbors: k must lie in [1, index size]");

    std::vector<double> dist(index.size());
    for (std::size_t i = 0; i < index.size(); ++i)
        dist[i] = query_distance(index.embeddings.row(i), z, index.embeddings.cols,
                                 index.metric);

    std::vector<std::size_t> order(index.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&dist](std::size_t a, std::size_t b) {
                          return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
                      });

    NeighborSet neighbors;
    neighbors.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    neighbors.distances.resize(k);
    neighbors.class_counts.assign(index.num_classes(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        neighbors.distances[i] = dist[neighbors.indices[i]];
        ++neighbors.class_counts[static_cast<std::size_t>(index.labels[neighbors.indices[i]])];
    }
    return neighbors;
}

Prediction knn_predict(const EmbeddingIndex& index, const double* z, std::size_t k,
                       VoteRule rule) {
    if (rule.kind == VoteRule::weighted && !(rule.temperature > 0.0))
        throw std::invalid_argument("knn_predict: weighted vote needs temperature > 0");
    const NeighborSet neighbors = knn_neighbors(index, z, k);
    const std::size_t classes = index.num_classes();

    std::vector<double> cumulative(classes, 0.0);
    std::vector<double> expsum(classes, 0.0);
    // weights are shifted by the nearest distance before exponentiating; the
    // argmax is unchanged and small temperatures stay clear of underflow
    const double nearest = neighbors.distances.front();
    for (std::size_t i = 0; i < k; ++i) {
        const auto cls = static_cast<std::size_t>(index.labels[neighbors.indices[i]]);
        cumulative[cls] += neighbors.distances[i];
        if (rule.kind == VoteRule::weighted)
            expsum[cls] += std::exp(-(neighbors.distances[i] - nearest) / rule.temperature);
    }

    Prediction pred;
    pred.scores.assign(classes, 0.0);
    // primary score per rule; lower is better so votes compare uniformly
    std::vector<double> primary(classes, std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < classes; ++c) {
        const double count = static_cast<double>(neighbors.class_counts[c]);
        switch (rule.kind) {
        case VoteRule::hard:
            pred.scores[c] = count;
            primary[c] = -count;
            break;
        case VoteRule::soft:
            // classes absent from the neighbour set are excluded
            pred.scores[c] = count > 0.0 ? cumulative[c] / count
                                         : std::numeric_limits<double>::infinity();
            primary[c] = pred.scores[c];
            break;
        case VoteRule::weighted:
            pred.scores[c] = expsum[c];
            primary[c] = -expsum[c];
            break;
        }
    }

    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
        if (primary[c] < primary[best] ||
            (primary[c] == primary[best] && cumulative[c] < cumulative[best]))
            best = c;
    }
    pred.label = static_cast<int>(best);
    return pred;
}

int random_prototype_predict(const EmbeddingIndex& index, const double* z, Rng& rng) {
    const std::size_t classes = index.num_classes();
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < index.size(); ++i)
        by_class[static_cast<std::size_t>(index.labels[i])].push_back(i);

    int best = -1;
    double best_dist = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (by_class[c].empty())
            throw DataError("random_prototype_predict: class '" + index.class_map[c] +
                            "' missing from index");
        const std::size_t pick = by_class[c][rng.uniform_below(by_class[c].size())];
        const double d = query_distance(index.embeddings.row(pick), z, index.embeddings.cols,
                                        index.metric);
        if (best < 0 || d < best_dist) {
            best = static_cast<int>(c);
            best_dist = d;
        }
    }
    return best;
}

EmbeddingIndex rebalance_index(const EmbeddingIndex& index, Rng& rng) {
    std::vector<std::vector<std::size_t>> by_class(index.num_classes());
    for (std::size_t i = 0; i < index.size(); ++i)
        by_class[static_cast<std::size_t>(index.labels[i])].push_back(i);

    std::size_t minority = index.size();
    for (const auto& rows : by_class)
        if (!rows.empty()) minority = std::min(minority, rows.size());
    if (minority == index.size()) return index; // nothing present

    std::vector<std::size_t> chosen;
    for (auto& rows : by_class) {
        if (rows.empty()) continue;
        rng.shuffle(rows);
        chosen.insert(chosen.end(), rows.begin(),
                      rows.begin() + static_cast<std::ptrdiff_t>(minority));
    }
    std::sort(chosen.begin(), chosen.end());

    EmbeddingIndex out;
    out.embeddings = Matrix(chosen.size(), index.embeddings.cols);
    out.labels.resize(chosen.size());
    out.metric = index.metric;
    out.class_map = index.class_map;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        std::copy_n(index.embeddings.row(chosen[i]), index.embeddings.cols,
                    out.embeddings.row(i));
        out.labels[i] = index.labels[chosen[i]];
    }
    return out;
}

LinearClassifier train_linear_probe(const Matrix& embeddings, const std::vector<int>& labels,
                                    std::size_t num_classes, const ProbeConfig& cfg) {
    if (embeddings.rows != labels.size())
        throw std::invalid_argument("train_linear_probe: label count mismatch");
    if (num_classes < 2) throw std::invalid_argument("train_linear_probe: need >= 2 classes");

    LinearClassifier clf;
    clf.weight = Matrix(num_classes, embeddings.cols);
    clf.bias.assign(num_classes, 0.0);
    if (cfg.epochs == 0 || embeddings.rows == 0) return clf;

    const std::size_t batch = std::max<std::size_t>(2, std::min(cfg.batch_size, embeddings.rows));
    const std::size_t steps_per_epoch = (embeddings.rows + batch - 1) / batch;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    OptimConfig opt;
    opt.learning_rate = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;
    opt.total_steps = total_steps;
    AdamW optimizer({num_classes * embeddings.cols, num_classes}, opt);

    const SampleWeights weights = compute_sample_weights(labels, num_classes);
    Rng rng(cfg.seed);

    Matrix x(batch, embeddings.cols);
    std::vector<int> y(batch);
    Matrix dw(num_classes, embeddings.cols);
    std::vector<double> db(num_classes);

    for (std::size_t step = 0; step < total_steps; ++step) {
        std::vector<std::size_t> idx;
        if (cfg.balanced) {
            idx = draw_balanced_batch(weights, batch, rng);
        } else { // natural label distribution
            idx.resize(batch);
            for (auto& v : idx) v = rng.uniform_below(embeddings.rows);
        }
        for (std::size_t b = 0; b < batch; ++b) {
            std::copy_n(embeddings.row(idx[b]), embeddings.cols, x.row(b));
            y[b] = labels[idx[b]];
        }

        Matrix logits(batch, num_classes);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* src = x.row(b);
            double* dst = logits.row(b);
            for (std::size_t c = 0; c < num_classes; ++c) {
                const double* wr = clf.weight.row(c);
                double acc = clf.bias[c];
                for (std::size_t k = 0; k < embeddings.cols; ++k) acc += src[k] * wr[k];
                dst[c] = acc;
            }
        }
        const XentResult xent = softmax_xent(logits, y);
        if (!std::isfinite(xent.loss)) throw NumericError("train_linear_probe: non-finite loss");

        std::fill(dw.data.begin(), dw.data.end(), 0.0);
        std::fill(db.begin(), db.end(), 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* drow = xent.dlogits.row(b);
            const double* src = x.row(b);
            for (std::size_t c = 0; c < num_classes; ++c) {
                const double d = drow[c];
                if (d == 0.0) continue;
                db[c] += d;
                double* dwrow = dw.row(c);
                for (std::size_t k = 0; k < embeddings.cols; ++k) dwrow[k] += d * src[k];
            }
        }
        optimizer.step({clf.weight.data.data(), clf.bias.data()}, {dw.data.data(), db.data()});
    }
    if (!clf.weight.all_finite()) throw NumericError("train_linear_probe: non-finite parameters");
    return clf;
}

std::vector<double> probe_logits(const LinearClassifier& clf, const double* z) {
    std::vector<double> logits(clf.weight.rows);
    for (std::size_t c = 0; c < clf.weight.rows; ++c) {
        const double* wr = clf.weight.row(c);
        double acc = clf.bias[c];
        for (std::size_t k = 0; k < clf.weight.cols; ++k) acc += z[k] * wr[k];
        logits[c] = acc;
    }
    return logits;
}

int probe_predict(const LinearClassifier& clf, const double* z) {
    const auto logits = probe_logits(clf, z);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
        if (logits[c] > logits[best]) best = c;
    return static_cast<int>(best);
}

} // namespace tripletflow
