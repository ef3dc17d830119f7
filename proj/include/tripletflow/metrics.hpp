#pragma once

#include <cstddef>
#include <vector>

namespace tripletflow {

/// C x C count matrix; rows are true classes, columns predicted classes.
/// Class 0 is benign.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::size_t> counts; // row-major

    std::size_t& at(std::size_t t, std::size_t p) { return counts[t * num_classes + p]; }
    std::size_t at(std::size_t t, std::size_t p) const { return counts[t * num_classes + p]; }
    std::size_t total() const;
};

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          std::size_t num_classes);

struct ScoreReport {
    double macro_f1 = 0.0;
    double macro_recall = 0.0;
    double macro_precision = 0.0;
    double fp_rate = 0.0; // benign rows predicted non-benign / benign rows
    std::vector<double> per_class_f1;
    std::vector<std::size_t> support;
};

/// Macro scores are unweighted means over classes; 0/0 precision or recall
/// counts as 0; classes that are never true and never predicted are excluded
/// from the macro means.
ScoreReport score(const ConfusionMatrix& cm);

// relative macro-F1 drop from train to test: (train - test) / train
double generalization_gap(double f1_train, double f1_test);

} // namespace tripletflow
