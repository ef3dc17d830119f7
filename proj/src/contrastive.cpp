#include "tripletflow/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tripletflow/error.hpp"

namespace tripletflow {

namespace {

void check_margin(double margin) {
    if (!(margin > 0.0 && margin <= 1.0))
        throw std::invalid_argument("margin must lie in (0,1]");
}

double euclidean_distance(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = a[k] - b[k];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double manhattan_distance(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += std::fabs(a[k] - b[k]);
    return acc;
}

double norm2(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += a[k] * a[k];
    return std::sqrt(acc);
}

double cosine_distance(const double* a, const double* b, std::size_t n) {
    const double na = norm2(a, n);
    const double nb = norm2(b, n);
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine distance: zero-norm embedding");
    double dot = 0.0;
    for (std::size_t k = 0; k < n; ++k) dot += a[k] * b[k];
    return 1.0 - dot / (na * nb);
}

// adds coeff * dd(a,b)/da to grad_a and coeff * dd(a,b)/db to grad_b;
// subgradient at the euclidean/manhattan kinks is 0
void add_distance_grad(const double* a, const double* b, std::size_t n, DistanceMetric metric,
                       double coeff, double* grad_a, double* grad_b) {
    switch (metric) {
    case DistanceMetric::euclidean: {
        const double d = euclidean_distance(a, b, n);
        if (d == 0.0) return;
        const double scale = coeff / d;
        for (std::size_t k = 0; k < n; ++k) {
            const double g = scale * (a[k] - b[k]);
            grad_a[k] += g;
            grad_b[k] -= g;
        }
        return;
    }
    case DistanceMetric::manhattan: {
        for (std::size_t k = 0; k < n; ++k) {
            const double diff = a[k] - b[k];
            if (diff == 0.0) continue;
            const double g = coeff * (diff > 0.0 ? 1.0 : -1.0);
            grad_a[k] += g;
            grad_b[k] -= g;
        }
        return;
    }
    case DistanceMetric::cosine: {
        const double na = norm2(a, n);
        const double nb = norm2(b, n);
        if (na == 0.0 || nb == 0.0) throw NumericError("cosine distance: zero-norm embedding");
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += a[k] * b[k];
        const double cs = dot / (na * nb);
        const double inv = 1.0 / (na * nb);
        for (std::size_t k = 0; k < n; ++k) {
            grad_a[k] += coeff * (cs * a[k] / (na * na) - b[k] * inv);
            grad_b[k] += coeff * (cs * b[k] / (nb * nb) - a[k] * inv);
        }
        return;
    }
    }
}

// converts a pairwise coefficient matrix (loss = sum_ij c_ij * d(z_i, z_j))
// into the gradient with respect to z
Matrix coefficients_to_grad(const Matrix& z, const Matrix& coeff, DistanceMetric metric) {
    Matrix grad(z.rows, z.cols);
    for (std::size_t i = 0; i < z.rows; ++i) {
        for (std::size_t j = i + 1; j < z.rows; ++j) {
            const double c = coeff(i, j) + coeff(j, i);
            if (c == 0.0) continue;
            add_distance_grad(z.row(i), z.row(j), z.cols, metric, c, grad.row(i), grad.row(j));
        }
    }
    return grad;
}

std::vector<std::vector<std::size_t>> rows_by_label(const std::vector<int>& y) {
    int max_label = -1;
    for (int v : y) max_label = std::max(max_label, v);
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < y.size(); ++i)
        groups[static_cast<std::size_t>(y[i])].push_back(i);
    return groups;
}

} // namespace

std::string to_string(DistanceMetric metric) {
    switch (metric) {
    case DistanceMetric::euclidean: return "euclidean";
    case DistanceMetric::manhattan: return "manhattan";
    case DistanceMetric::cosine: return "cosine";
    }
    return "euclidean";
}

DistanceMetric distance_metric_from_string(const std::string& name) {
    if (name == "euclidean") return DistanceMetric::euclidean;
    if (name == "manhattan") return DistanceMetric::manhattan;
    if (name == "cosine") return DistanceMetric::cosine;
    throw ConfigError("unknown distance metric: " + name);
}

double distance(const double* a, const double* b, std::size_t n, DistanceMetric metric) {
    switch (metric) {
    case DistanceMetric::euclidean: return euclidean_distance(a, b, n);
    case DistanceMetric::manhattan: return manhattan_distance(a, b, n);
    case DistanceMetric::cosine: return cosine_distance(a, b, n);
    }
    return 0.0;
}

Matrix pairwise_distances(const Matrix& z, DistanceMetric metric) {
    if (!z.all_finite()) throw NumericError("pairwise_distances: non-finite embedding");
    Matrix d(z.rows, z.rows);
    for (std::size_t i = 0; i < z.rows; ++i) {
        for (std::size_t j = i + 1; j < z.rows; ++j) {
            const double v = distance(z.row(i), z.row(j), z.cols, metric);
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

double triplet_loss(double d_ap, double d_an, double margin) {
    const double raw = d_ap - d_an + margin;
    return raw > 0.0 ? raw : 0.0;
}

std::optional<MiningOutcome> batch_all(const Matrix& z, const std::vector<int>& y, double margin,
                                       DistanceMetric metric, const BatchAllOptions& opts) {
    check_margin(margin);
    if (z.rows != y.size()) throw std::invalid_argument("batch_all: label count mismatch");
    const std::size_t batch = z.rows;
    const Matrix dist = pairwise_distances(z, metric);
    const auto groups = rows_by_label(y);

    MiningOutcome outcome;
    outcome.grad = Matrix(batch, z.cols);
    Matrix coeff(batch, batch);
    double loss_sum = 0.0;

    for (std::size_t a = 0; a < batch; ++a) {
        const auto& positives = groups[static_cast<std::size_t>(y[a])];
        for (std::size_t p : positives) {
            if (p == a && !opts.include_self_positive) continue;
            const double d_ap = dist(a, p);
            for (std::size_t neg = 0; neg < batch; ++neg) {
                if (y[neg] == y[a]) continue;
                ++outcome.n_valid;
                const double raw = d_ap - dist(a, neg) + margin;
                if (raw > 0.0) {
                    ++outcome.n_active;
                    loss_sum += raw;
                    coeff(a, p) += 1.0;
                    coeff(a, neg) -= 1.0;
                }
            }
        }
    }
    if (outcome.n_valid == 0) return std::nullopt;

    const std::size_t denom_count =
        opts.average_over_active_only ? outcome.n_active : outcome.n_valid;
    if (denom_count == 0) { // every hinge inactive: loss and gradient are zero
        outcome.loss = 0.0;
        return outcome;
    }
    const double inv = 1.0 / static_cast<double>(denom_count);
    outcome.loss = loss_sum * inv;
    for (double& c : coeff.data) c *= inv;
    outcome.grad = coefficients_to_grad(z, coeff, metric);
    return outcome;
}

std::optional<MiningOutcome> batch_hard(const Matrix& z, const std::vector<int>& y, double margin,
                                        DistanceMetric metric) {
    check_margin(margin);
    if (z.rows != y.size()) throw std::invalid_argument("batch_hard: label count mismatch");
    const std::size_t batch = z.rows;
    const Matrix dist = pairwise_distances(z, metric);

    MiningOutcome outcome;
    outcome.grad = Matrix(batch, z.cols);
    Matrix coeff(batch, batch);
    double loss_sum = 0.0;

    for (std::size_t a = 0; a < batch; ++a) {
        // farthest positive / closest negative; ties resolve to the lowest index
        std::size_t hardest_pos = batch, hardest_neg = batch;
        double max_pos = -1.0, min_neg = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
            if (i == a) continue;
            if (y[i] == y[a]) {
                if (dist(a, i) > max_pos) { max_pos = dist(a, i); hardest_pos = i; }
            } else if (hardest_neg == batch || dist(a, i) < min_neg) {
                min_neg = dist(a, i);
                hardest_neg = i;
            }
        }
        if (hardest_pos == batch || hardest_neg == batch) continue; // skipped anchor
        ++outcome.n_valid;
        const double raw = max_pos - min_neg + margin;
        if (raw > 0.0) {
            ++outcome.n_active;
            loss_sum += raw;
            coeff(a, hardest_pos) += 1.0;
            coeff(a, hardest_neg) -= 1.0;
        }
    }
    if (outcome.n_valid == 0) return std::nullopt;

    const double inv = 1.0 / static_cast<double>(outcome.n_valid);
    outcome.loss = loss_sum * inv;
    for (double& c : coeff.data) c *= inv;
    outcome.grad = coefficients_to_grad(z, coeff, metric);
    return outcome;
}

std::optional<MiningOutcome> batch_semi_hard(const Matrix& z, const std::vector<int>& y,
                                             double margin, DistanceMetric metric) {
    check_margin(margin);
    if (z.rows != y.size()) throw std::invalid_argument("batch_semi_hard: label count mismatch");
    const std::size_t batch = z.rows;
    const Matrix dist = pairwise_distances(z, metric);
    const auto groups = rows_by_label(y);

    MiningOutcome outcome;
    outcome.grad = Matrix(batch, z.cols);
    Matrix coeff(batch, batch);
    double loss_sum = 0.0;

    for (std::size_t a = 0; a < batch; ++a) {
        const auto& positives = groups[static_cast<std::size_t>(y[a])];
        bool has_positive = positives.size() > 1;
        bool has_negative = positives.size() < batch;
        if (!has_positive || !has_negative) continue;
        ++outcome.n_valid;

        // hardest triplet subject to d_ap < d_an; ties resolve to the
        // lexicographically lowest (p, n)
        double best_raw = 0.0;
        std::size_t best_pos = batch, best_neg = batch;
        for (std::size_t p : positives) {
            if (p == a) continue;
            const double d_ap = dist(a, p);
            for (std::size_t neg = 0; neg < batch; ++neg) {
                if (y[neg] == y[a]) continue;
                const double d_an = dist(a, neg);
                if (!(d_ap < d_an)) continue;
                const double raw = d_ap - d_an + margin;
                if (raw > best_raw) {
                    best_raw = raw;
                    best_pos = p;
                    best_neg = neg;
                }
            }
        }
        if (best_pos != batch && best_raw > 0.0) {
            ++outcome.n_active;
            loss_sum += best_raw;
            coeff(a, best_pos) += 1.0;
            coeff(a, best_neg) -= 1.0;
        }
    }
    if (outcome.n_valid == 0) return std::nullopt;

    const double inv = 1.0 / static_cast<double>(outcome.n_valid);
    outcome.loss = loss_sum * inv;
    for (double& c : coeff.data) c *= inv;
    outcome.grad = coefficients_to_grad(z, coeff, metric);
    return outcome;
}

PairLossResult contrastive_pair_loss(const double* z_i, const double* z_j, std::size_t n,
                                     int y_ij, double margin, DistanceMetric metric) {
    check_margin(margin);
    if (y_ij != 0 && y_ij != 1)
        throw std::invalid_argument("contrastive_pair_loss: similarity label must be 0 or 1");
    PairLossResult result;
    result.grad_first.assign(n, 0.0);
    result.grad_second.assign(n, 0.0);
    const double d = distance(z_i, z_j, n, metric);
    double dloss_dd = 0.0;
    if (y_ij == 1) {
        result.loss = d * d;
        dloss_dd = 2.0 * d;
    } else {
        const double gap = margin - d;
        if (gap > 0.0) {
            result.loss = gap * gap;
            dloss_dd = -2.0 * gap;
        }
    }
    if (dloss_dd != 0.0)
        add_distance_grad(z_i, z_j, n, metric, dloss_dd, result.grad_first.data(),
                          result.grad_second.data());
    return result;
}

std::vector<OfflineTriplet> sample_offline_triplets(const FlowDataset& ds, std::size_t count,
                                                    Rng& rng) {
    const auto groups = rows_by_label(ds.labels);
    std::vector<std::size_t> anchor_classes; // classes able to supply (a,p)
    std::vector<std::size_t> nonempty;
    for (std::size_t c = 0; c < groups.size(); ++c) {
        if (!groups[c].empty()) nonempty.push_back(c);
        if (groups[c].size() >= 2) anchor_classes.push_back(c);
    }
    if (anchor_classes.empty() || nonempty.size() < 2)
        throw DataError("sample_offline_triplets: need two classes and one class with >= 2 rows");

    std::vector<OfflineTriplet> triplets(count);
    for (auto& t : triplets) {
        const std::size_t cls = anchor_classes[rng.uniform_below(anchor_classes.size())];
        const auto& members = groups[cls];
        const std::size_t a = rng.uniform_below(members.size());
        std::size_t p = rng.uniform_below(members.size() - 1);
        if (p >= a) ++p;

        // negative class uniform over the remaining nonempty classes
        std::size_t cls_pos = 0;
        while (nonempty[cls_pos] != cls) ++cls_pos;
        std::size_t neg_pos = rng.uniform_below(nonempty.size() - 1);
        if (neg_pos >= cls_pos) ++neg_pos;
        const auto& negatives = groups[nonempty[neg_pos]];

        t.anchor = members[a];
        t.positive = members[p];
        t.negative = negatives[rng.uniform_below(negatives.size())];
    }
    return triplets;
}

std::vector<OfflinePair> sample_offline_pairs(const FlowDataset& ds, std::size_t count, Rng& rng) {
    const auto groups = rows_by_label(ds.labels);
    std::vector<std::size_t> pair_classes;
    std::vector<std::size_t> nonempty;
    for (std::size_t c = 0; c < groups.size(); ++c) {
        if (!groups[c].empty()) nonempty.push_back(c);
        if (groups[c].size() >= 2) pair_classes.push_back(c);
    }
    if (pair_classes.empty() || nonempty.size() < 2)
        throw DataError("sample_offline_pairs: need two classes and one class with >= 2 rows");

    std::vector<OfflinePair> pairs(count);
    for (std::size_t i = 0; i < count; ++i) {
        OfflinePair& pair = pairs[i];
        if (i % 2 == 0) { // similar
            const auto& members = groups[pair_classes[rng.uniform_below(pair_classes.size())]];
            const std::size_t a = rng.uniform_below(members.size());
            std::size_t b = rng.uniform_below(members.size() - 1);
            if (b >= a) ++b;
            pair = {members[a], members[b], 1};
        } else { // dissimilar
            const std::size_t c1 = rng.uniform_below(nonempty.size());
            std::size_t c2 = rng.uniform_below(nonempty.size() - 1);
            if (c2 >= c1) ++c2;
            const auto& first = groups[nonempty[c1]];
            const auto& second = groups[nonempty[c2]];
            pair = {first[rng.uniform_below(first.size())],
                    second[rng.uniform_below(second.size())], 0};
        }
    }
    return pairs;
}

MiningOutcome offline_triplet_batch(const Matrix& z, double margin, DistanceMetric metric) {
    check_margin(margin);
    if (z.rows % 3 != 0)
        throw std::invalid_argument("offline_triplet_batch: rows must stack (a,p,n) triples");
    const std::size_t triples = z.rows / 3;
    if (triples == 0) throw std::invalid_argument("offline_triplet_batch: empty batch");

    MiningOutcome outcome;
    outcome.grad = Matrix(z.rows, z.cols);
    outcome.n_valid = triples;
    const double inv = 1.0 / static_cast<double>(triples);
    for (std::size_t t = 0; t < triples; ++t) {
        const std::size_t a = 3 * t, p = 3 * t + 1, neg = 3 * t + 2;
        const double d_ap = distance(z.row(a), z.row(p), z.cols, metric);
        const double d_an = distance(z.row(a), z.row(neg), z.cols, metric);
        const double raw = d_ap - d_an + margin;
        if (raw > 0.0) {
            ++outcome.n_active;
            outcome.loss += raw * inv;
            add_distance_grad(z.row(a), z.row(p), z.cols, metric, inv, outcome.grad.row(a),
                              outcome.grad.row(p));
            add_distance_grad(z.row(a), z.row(neg), z.cols, metric, -inv, outcome.grad.row(a),
                              outcome.grad.row(neg));
        }
    }
    return outcome;
}

MiningOutcome offline_pair_batch(const Matrix& z, const std::vector<int>& similar, double margin,
                                 DistanceMetric metric) {
    check_margin(margin);
    if (z.rows != 2 * similar.size())
        throw std::invalid_argument("offline_pair_batch: rows must stack pairs");
    const std::size_t pairs = similar.size();
    if (pairs == 0) throw std::invalid_argument("offline_pair_batch: empty batch");

    MiningOutcome outcome;
    outcome.grad = Matrix(z.rows, z.cols);
    outcome.n_valid = pairs;
    const double inv = 1.0 / static_cast<double>(pairs);
    std::vector<double> gi(z.cols), gj(z.cols);
    for (std::size_t k = 0; k < pairs; ++k) {
        const std::size_t i = 2 * k, j = 2 * k + 1;
        const PairLossResult r =
            contrastive_pair_loss(z.row(i), z.row(j), z.cols, similar[k], margin, metric);
        if (r.loss > 0.0) ++outcome.n_active;
        outcome.loss += r.loss * inv;
        for (std::size_t c = 0; c < z.cols; ++c) {
            outcome.grad(i, c) += r.grad_first[c] * inv;
            outcome.grad(j, c) += r.grad_second[c] * inv;
        }
    }
    return outcome;
}

} // namespace tripletflow
