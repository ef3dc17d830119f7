#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "tripletflow/dataset.hpp"
#include "tripletflow/error.hpp"
#include "tripletflow/synthetic.hpp"

using namespace tripletflow;
namespace fs = std::filesystem;

namespace {

fs::path write_temp_csv(const std::string& name, const std::string& content) {
    const fs::path path = fs::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path;
}

FlowDataset toy_dataset(const std::vector<int>& labels, std::size_t num_classes) {
    Matrix features(labels.size(), 2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        features(i, 0) = static_cast<double>(i); // unique per row, used as a row id
        features(i, 1) = static_cast<double>(labels[i]);
    }
    std::vector<std::string> names;
    names.emplace_back("benign");
    for (std::size_t c = 1; c < num_classes; ++c) names.push_back("attack" + std::to_string(c));
    return make_dataset(std::move(features), labels, std::move(names));
}

} // namespace

TEST_CASE("load_csv drops non-finite rows and reports the count") {
    const auto path = write_temp_csv("tf_drop.csv", "a,b,label\n"
                                                    "1,2,benign\n"
                                                    "inf,3,benign\n"
                                                    "4,5,attack\n");
    const CsvLoadResult result = load_csv(path.string(), "label", "benign");
    CHECK(result.dataset.size() == 2);
    CHECK(result.dropped_rows == 1);
    fs::remove(path);
}

TEST_CASE("load_csv assigns benign id 0 and others by first appearance") {
    const auto path = write_temp_csv("tf_ids.csv", "x,label\n"
                                                   "1,benign\n"
                                                   "2,a\n"
                                                   "3,a\n"
                                                   "4,b\n");
    const auto ds = load_csv(path.string(), "label", "benign").dataset;
    CHECK(ds.labels == std::vector<int>{0, 1, 1, 2});
    CHECK(ds.class_counts == std::vector<std::size_t>{1, 2, 1});
    CHECK(ds.class_map == std::vector<std::string>{"benign", "a", "b"});
    fs::remove(path);
}

TEST_CASE("load_csv benign forced to id 0 even when it appears late") {
    const auto path = write_temp_csv("tf_late.csv", "x,label\n"
                                                    "1,a\n"
                                                    "2,benign\n");
    const auto ds = load_csv(path.string(), "label", "benign").dataset;
    CHECK(ds.class_map[0] == "benign");
    CHECK(ds.labels == std::vector<int>{1, 0});
    fs::remove(path);
}

TEST_CASE("load_csv error paths") {
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", "label", "benign"), DataError);

    const auto missing_col = write_temp_csv("tf_col.csv", "a,b\n1,2\n");
    CHECK_THROWS_AS(load_csv(missing_col.string(), "label", "benign"), DataError);
    fs::remove(missing_col);

    const auto all_dropped = write_temp_csv("tf_empty.csv", "a,label\ninf,benign\n");
    CHECK_THROWS_AS(load_csv(all_dropped.string(), "label", "benign"), DataError);
    fs::remove(all_dropped);

    const auto no_benign = write_temp_csv("tf_nob.csv", "a,label\n1,attack\n");
    CHECK_THROWS_AS(load_csv(no_benign.string(), "label", "benign"), DataError);
    fs::remove(no_benign);

    const auto garbage = write_temp_csv("tf_bad.csv", "a,label\nnotanumber,benign\n");
    CHECK_THROWS_AS(load_csv(garbage.string(), "label", "benign"), DataError);
    fs::remove(garbage);
}

TEST_CASE("csv round trip preserves values exactly") {
    BlobSpec spec;
    spec.classes = 2;
    spec.dim = 3;
    spec.rows_per_class = {5, 4};
    spec.seed = 3;
    const FlowDataset ds = make_blobs(spec);
    const auto path = fs::temp_directory_path() / "tf_roundtrip.csv";
    write_csv(ds, path.string(), "label");
    const auto back = load_csv(path.string(), "label", "benign").dataset;
    CHECK(back.features == ds.features);
    CHECK(back.labels == ds.labels);
    CHECK(back.class_map == ds.class_map);
    fs::remove(path);
}

TEST_CASE("stratified_split uses the floor rule per class") {
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) labels.push_back(0);
    for (int i = 0; i < 11; ++i) labels.push_back(1);
    const auto ds = toy_dataset(labels, 2);
    auto [first, second] = stratified_split(ds, 0.5, 42);
    CHECK(first.class_counts == std::vector<std::size_t>{5, 5});
    CHECK(second.class_counts == std::vector<std::size_t>{5, 6});
}

TEST_CASE("stratified_split is deterministic and disjoint") {
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(i % 3);
    const auto ds = toy_dataset(labels, 3);
    auto [a1, b1] = stratified_split(ds, 0.5, 7);
    auto [a2, b2] = stratified_split(ds, 0.5, 7);
    CHECK(a1.features == a2.features);
    CHECK(b1.features == b2.features);

    // row ids (feature 0) must partition the source
    std::set<double> ids;
    for (std::size_t i = 0; i < a1.size(); ++i) ids.insert(a1.features(i, 0));
    for (std::size_t i = 0; i < b1.size(); ++i) ids.insert(b1.features(i, 0));
    CHECK(ids.size() == ds.size());
}

TEST_CASE("stratified_split rejects classes below two samples") {
    const auto ds = toy_dataset({0, 0, 1}, 2);
    CHECK_THROWS_AS(stratified_split(ds, 0.5, 0), DataError);
}

TEST_CASE("sample_subset draws the requested counts without replacement") {
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(0);
    for (int i = 0; i < 30; ++i) labels.push_back(1);
    for (int i = 0; i < 30; ++i) labels.push_back(2);
    const auto ds = toy_dataset(labels, 3);

    const auto subset = sample_subset(ds, {20, 10, 5});
    CHECK(subset.size() == 20 + 10 + 10);
    CHECK(subset.class_counts == std::vector<std::size_t>{20, 10, 10});

    std::set<double> ids;
    for (std::size_t i = 0; i < subset.size(); ++i) ids.insert(subset.features(i, 0));
    CHECK(ids.size() == subset.size()); // no duplicates

    // drawing a class's entire pool copies it as a set
    const auto full = sample_subset(ds, {100, 30, 9});
    CHECK(full.class_counts == std::vector<std::size_t>{100, 30, 30});

    // different seeds give different row sets on a large pool
    const auto other = sample_subset(ds, {20, 10, 99});
    CHECK(other.features != subset.features);

    CHECK_THROWS_AS(sample_subset(ds, {101, 10, 5}), DataError);
}

TEST_CASE("subset size is n_benign plus n_per_attack per attack class") {
    std::vector<int> labels;
    for (int i = 0; i < 10500; ++i) labels.push_back(0);
    for (int c = 1; c <= 4; ++c)
        for (int i = 0; i < 50; ++i) labels.push_back(c);
    const auto ds = toy_dataset(labels, 5);
    const auto subset = sample_subset(ds, {10000, 10, 19048});
    CHECK(subset.size() == 10040);
}

TEST_CASE("two-class balanced draws split evenly within one percent") {
    std::vector<int> labels;
    for (int i = 0; i < 900; ++i) labels.push_back(0);
    for (int i = 0; i < 30; ++i) labels.push_back(1);
    const auto ds = toy_dataset(labels, 2);
    const auto weights = compute_sample_weights(ds);
    Rng rng(7);
    const std::size_t draws = 100000;
    const auto batch = draw_balanced_batch(weights, draws, rng);
    std::size_t benign = 0;
    for (std::size_t idx : batch) benign += ds.labels[idx] == 0 ? 1 : 0;
    const double fraction = static_cast<double>(benign) / static_cast<double>(draws);
    CHECK(std::abs(fraction - 0.5) < 0.01);
}

TEST_CASE("stratified_kfold partitions each class into near-equal chunks") {
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) labels.push_back(0);
    for (int i = 0; i < 11; ++i) labels.push_back(1);
    const auto ds = toy_dataset(labels, 2);
    const auto folds = stratified_kfold(ds, 5, 3);
    REQUIRE(folds.size() == 5);

    std::multiset<std::size_t> fold_sizes;
    std::set<std::size_t> seen;
    for (const auto& fold : folds) {
        fold_sizes.insert(fold.val_indices.size());
        for (std::size_t idx : fold.val_indices) {
            CHECK(seen.insert(idx).second); // pairwise disjoint
        }
        // train and val cover everything
        CHECK(fold.train_indices.size() + fold.val_indices.size() == ds.size());
    }
    CHECK(seen.size() == ds.size());
    // class 0 contributes 2 per fold; class 1 contributes 3,2,2,2,2
    CHECK(fold_sizes == std::multiset<std::size_t>{5, 4, 4, 4, 4});

    CHECK_THROWS_AS(stratified_kfold(toy_dataset({0, 0, 0, 1, 1, 1}, 2), 5, 0), DataError);
}

TEST_CASE("normalizer matches hand statistics and floors constant columns") {
    Matrix features(2, 2);
    features(0, 0) = 0.0;
    features(1, 0) = 2.0;
    features(0, 1) = 5.0;
    features(1, 1) = 5.0; // constant column
    const auto ds = make_dataset(std::move(features), {0, 1}, {"benign", "a"});
    const Normalizer nz = fit_normalizer(ds);
    CHECK(nz.mean[0] == doctest::Approx(1.0));
    CHECK(nz.std[0] == doctest::Approx(1.0));
    CHECK(nz.std[1] == 1.0); // floored

    const auto normed = apply_normalizer(nz, ds);
    CHECK(normed.features(0, 0) == doctest::Approx(-1.0));
    CHECK(normed.features(1, 0) == doctest::Approx(1.0));
    CHECK(normed.features(0, 1) == 0.0);
    CHECK(normed.features(1, 1) == 0.0);
}

TEST_CASE("normalizing a set by its own statistics centres it") {
    BlobSpec spec;
    spec.classes = 3;
    spec.dim = 4;
    spec.rows_per_class = {50, 30, 20};
    spec.seed = 9;
    const auto ds = make_blobs(spec);
    const auto nz = fit_normalizer(ds);
    const auto normed = apply_normalizer(nz, ds);
    for (std::size_t j = 0; j < normed.feature_count(); ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < normed.size(); ++i) sum += normed.features(i, j);
        CHECK(std::abs(sum / static_cast<double>(normed.size())) < 1e-9);
    }

    // normalisation inverts exactly for non-floored columns
    for (std::size_t i = 0; i < normed.size(); ++i)
        for (std::size_t j = 0; j < normed.feature_count(); ++j) {
            const double reconstructed = normed.features(i, j) * nz.std[j] + nz.mean[j];
            CHECK(std::abs(reconstructed - ds.features(i, j)) < 1e-9);
        }
}

TEST_CASE("sample weights follow the inverse class-size law") {
    const auto ds = toy_dataset({0, 0, 0, 1}, 2);
    const SampleWeights weights = compute_sample_weights(ds);
    CHECK(weights.w[0] == doctest::Approx(1.0 / 6.0));
    CHECK(weights.w[1] == doctest::Approx(1.0 / 6.0));
    CHECK(weights.w[2] == doctest::Approx(1.0 / 6.0));
    CHECK(weights.w[3] == doctest::Approx(1.0 / 2.0));

    double total = 0.0;
    for (double w : weights.w) total += w;
    CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("weights are uniform when classes are balanced or single") {
    const auto balanced = toy_dataset({0, 0, 1, 1}, 2);
    for (double w : compute_sample_weights(balanced).w) CHECK(w == doctest::Approx(0.25));

    const auto single = toy_dataset({0, 0, 0, 0}, 1);
    for (double w : compute_sample_weights(single).w) CHECK(w == doctest::Approx(0.25));
}

TEST_CASE("weight sum is 1 for random class structures") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t classes = 2 + rng.uniform_below(4);
        std::vector<int> labels;
        for (std::size_t c = 0; c < classes; ++c) {
            const std::size_t n = 1 + rng.uniform_below(50);
            for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(c));
        }
        const auto weights = compute_sample_weights(labels, classes);
        double total = 0.0;
        for (double w : weights.w) total += w;
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("balanced batches converge to the uniform class law") {
    // chi-squared against uniform over 4 classes; 0.999 quantile at 3 dof
    const double chi2_999 = 16.266;
    std::vector<int> labels;
    for (int i = 0; i < 200; ++i) labels.push_back(0);
    for (int i = 0; i < 40; ++i) labels.push_back(1);
    for (int i = 0; i < 10; ++i) labels.push_back(2);
    for (int i = 0; i < 5; ++i) labels.push_back(3);
    const auto ds = toy_dataset(labels, 4);
    const auto weights = compute_sample_weights(ds);

    Rng rng(123);
    const std::size_t draws = 100000;
    std::array<double, 4> counts{};
    const auto batch = draw_balanced_batch(weights, draws, rng);
    for (std::size_t idx : batch) counts[static_cast<std::size_t>(ds.labels[idx])] += 1.0;

    const double expected = static_cast<double>(draws) / 4.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < chi2_999);
}

TEST_CASE("balanced batch determinism and degenerate cases") {
    const auto ds = toy_dataset({0, 0, 1, 1, 1}, 2);
    const auto weights = compute_sample_weights(ds);
    Rng r1(5), r2(5);
    CHECK(draw_balanced_batch(weights, 32, r1) == draw_balanced_batch(weights, 32, r2));

    const auto single = toy_dataset({0, 0, 0}, 1);
    const auto sw = compute_sample_weights(single);
    Rng rng(1);
    for (std::size_t idx : draw_balanced_batch(sw, 16, rng)) CHECK(idx < 3);

    CHECK_THROWS_AS(draw_balanced_batch(weights, 1, r1), std::invalid_argument);
}

TEST_CASE("binarize_labels collapses attacks and preserves counts") {
    const auto ds = toy_dataset({0, 3, 2, 0}, 4);
    const auto bin = binarize_labels(ds);
    CHECK(bin.labels == std::vector<int>{0, 1, 1, 0});
    CHECK(bin.class_map == std::vector<std::string>{"benign", "malicious"});
    CHECK(bin.class_counts == std::vector<std::size_t>{2, 2});

    const auto all_benign = binarize_labels(toy_dataset({0, 0}, 1));
    CHECK(all_benign.labels == std::vector<int>{0, 0});
    CHECK(all_benign.class_counts == std::vector<std::size_t>{2, 0});
}

TEST_CASE("remap_classes matches ids by name") {
    const auto ds = toy_dataset({0, 1, 2}, 3);
    std::vector<std::string> target{"benign", "attack2", "attack1"};
    const auto remapped = remap_classes(ds, target);
    CHECK(remapped.labels == std::vector<int>{0, 2, 1});
    CHECK_THROWS_AS(remap_classes(ds, {"benign", "attack1"}), DataError);
}
