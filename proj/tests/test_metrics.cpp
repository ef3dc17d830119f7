#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "tripletflow/metrics.hpp"
#include "tripletflow/rng.hpp"

using namespace tripletflow;

TEST_CASE("confusion counts true/predicted pairs") {
    const ConfusionMatrix cm = confusion({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 0);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.total() == 4);

    CHECK_THROWS_AS(confusion({0}, {0, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(confusion({2}, {0}, 2), std::invalid_argument);
}

TEST_CASE("perfect predictions give a diagonal matrix") {
    const std::vector<int> y{0, 2, 1, 1, 0};
    const ConfusionMatrix cm = confusion(y, y, 3);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p)
            if (t != p) CHECK(cm.at(t, p) == 0);
}

TEST_CASE("worked scoring example") {
    const ConfusionMatrix cm = confusion({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
    const ScoreReport report = score(cm);
    CHECK(report.per_class_f1[0] == doctest::Approx(2.0 / 3.0));
    CHECK(report.per_class_f1[1] == doctest::Approx(0.8));
    CHECK(report.macro_f1 == doctest::Approx(11.0 / 15.0));
    CHECK(report.fp_rate == doctest::Approx(0.5));
    CHECK(report.support == std::vector<std::size_t>{2, 2});
}

TEST_CASE("diagonal matrices score perfectly for any label mix") {
    Rng rng(55);
    for (int t = 0; t < 20; ++t) {
        const std::size_t classes = 2 + rng.uniform_below(4);
        std::vector<int> y;
        for (int i = 0; i < 50; ++i) y.push_back(static_cast<int>(rng.uniform_below(classes)));
        const ScoreReport report = score(confusion(y, y, classes));
        CHECK(report.macro_f1 == doctest::Approx(1.0));
        CHECK(report.macro_recall == doctest::Approx(1.0));
        CHECK(report.macro_precision == doctest::Approx(1.0));
        CHECK(report.fp_rate == 0.0);
    }
}

TEST_CASE("classes neither true nor predicted are excluded from macro means") {
    // class 2 never appears at all; class 1 predictions exist
    const ScoreReport report = score(confusion({0, 0, 1, 1}, {0, 1, 1, 1}, 3));
    CHECK(report.macro_f1 == doctest::Approx(11.0 / 15.0));
    CHECK(report.support[2] == 0);

    // a class that is predicted but never true stays in the mean with zeros
    const ScoreReport with_ghost = score(confusion({0, 0, 1, 1}, {0, 2, 1, 1}, 3));
    // class0: p=1, r=1/2, f1=2/3; class1: perfect; class2: 0 -> macro (2/3 + 1 + 0)/3
    CHECK(with_ghost.macro_f1 == doctest::Approx((2.0 / 3.0 + 1.0) / 3.0));
}

TEST_CASE("scores are invariant under joint permutation") {
    Rng rng(66);
    std::vector<int> y_true, y_pred;
    for (int i = 0; i < 60; ++i) {
        y_true.push_back(static_cast<int>(rng.uniform_below(3)));
        y_pred.push_back(static_cast<int>(rng.uniform_below(3)));
    }
    const ScoreReport base = score(confusion(y_true, y_pred, 3));

    std::vector<std::size_t> perm(y_true.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<int> pt(y_true.size()), pp(y_true.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        pt[i] = y_true[perm[i]];
        pp[i] = y_pred[perm[i]];
    }
    const ScoreReport permuted = score(confusion(pt, pp, 3));
    CHECK(permuted.macro_f1 == doctest::Approx(base.macro_f1).epsilon(1e-12));
    CHECK(permuted.fp_rate == doctest::Approx(base.fp_rate).epsilon(1e-12));
}

TEST_CASE("macro scores equal the unweighted mean of per-class scores") {
    const ConfusionMatrix cm = confusion({0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 0, 2}, 3);
    const ScoreReport report = score(cm);
    double f1_sum = 0.0;
    for (double f1 : report.per_class_f1) f1_sum += f1;
    CHECK(report.macro_f1 == doctest::Approx(f1_sum / 3.0));
}

TEST_CASE("fp_rate ignores confusion among malicious classes") {
    // both predictions confuse attacks with each other; benign rows are clean
    const ScoreReport a = score(confusion({0, 1, 2}, {0, 2, 1}, 3));
    CHECK(a.fp_rate == 0.0);
    const ScoreReport b = score(confusion({0, 1, 2}, {0, 1, 2}, 3));
    CHECK(b.fp_rate == 0.0);
    // only benign rows predicted as attack move the rate
    const ScoreReport c = score(confusion({0, 0, 1, 2}, {2, 0, 2, 1}, 3));
    CHECK(c.fp_rate == doctest::Approx(0.5));
}

TEST_CASE("score rejects an empty matrix") {
    ConfusionMatrix cm;
    cm.num_classes = 2;
    cm.counts.assign(4, 0);
    CHECK_THROWS_AS(score(cm), std::invalid_argument);
}

TEST_CASE("generalization gap") {
    CHECK(generalization_gap(0.8, 0.8) == doctest::Approx(0.0));
    CHECK(generalization_gap(0.9, 0.81) == doctest::Approx(0.1));
    CHECK(generalization_gap(0.5, 0.6) < 0.0); // negative gap is permitted
    CHECK_THROWS_AS(generalization_gap(0.0, 0.5), std::invalid_argument);
}
