#include "tripletflow/metrics.hpp"

#include <numeric>
#include <stdexcept>

namespace tripletflow {

std::size_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          std::size_t num_classes) {
    if (y_true.size() != y_pred.size())
        throw std::invalid_argument("confusion: label vectors differ in length");
    ConfusionMatrix cm;
    cm.num_classes = num_classes;
    cm.counts.assign(num_classes * num_classes, 0);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i];
        const int p = y_pred[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes ||
            static_cast<std::size_t>(p) >= num_classes)
            throw std::invalid_argument("confusion: label outside class range");
        ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return cm;
}

ScoreReport score(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::invalid_argument("score: empty confusion matrix");
    const std::size_t classes = cm.num_classes;

    ScoreReport report;
    report.per_class_f1.assign(classes, 0.0);
    report.support.assign(classes, 0);

    double f1_sum = 0.0, recall_sum = 0.0, precision_sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t row_total = 0, col_total = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            row_total += cm.at(c, j);
            col_total += cm.at(j, c);
        }
        report.support[c] = row_total;
        if (row_total == 0 && col_total == 0) continue; // never true, never predicted

        const auto tp = static_cast<double>(cm.at(c, c));
        const double recall = row_total > 0 ? tp / static_cast<double>(row_total) : 0.0;
        const double precision = col_total > 0 ? tp / static_cast<double>(col_total) : 0.0;
        const double f1 =
            precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        report.per_class_f1[c] = f1;
        f1_sum += f1;
        recall_sum += recall;
        precision_sum += precision;
        ++scored;
    }
    if (scored > 0) {
        report.macro_f1 = f1_sum / static_cast<double>(scored);
        report.macro_recall = recall_sum / static_cast<double>(scored);
        report.macro_precision = precision_sum / static_cast<double>(scored);
    }

    std::size_t benign_total = 0;
    for (std::size_t j = 0; j < classes; ++j) benign_total += cm.at(0, j);
    report.fp_rate = benign_total > 0
                         ? static_cast<double>(benign_total - cm.at(0, 0)) /
                               static_cast<double>(benign_total)
                         : 0.0;
    return report;
}

double generalization_gap(double f1_train, double f1_test) {
    if (!(f1_train > 0.0))
        throw std::invalid_argument("generalization_gap: train F1 must be positive");
    return (f1_train - f1_test) / f1_train;
}

} // namespace tripletflow
