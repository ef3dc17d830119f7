#include "tripletflow/synthetic.hpp"

#include <stdexcept>
#include <string>

#include "tripletflow/rng.hpp"

namespace tripletflow {

FlowDataset make_blobs(const BlobSpec& spec) {
    if (spec.classes < 2) throw std::invalid_argument("make_blobs: need at least 2 classes");
    if (spec.classes > spec.dim)
        throw std::invalid_argument("make_blobs: need dim >= classes for simplex centres");
    if (spec.rows_per_class.size() != spec.classes)
        throw std::invalid_argument("make_blobs: rows_per_class must list every class");

    std::size_t total = 0;
    for (std::size_t n : spec.rows_per_class) total += n;

    Matrix features(total, spec.dim);
    std::vector<int> labels(total);
    std::vector<std::string> class_map;
    class_map.reserve(spec.classes);
    class_map.emplace_back("benign");
    for (std::size_t c = 1; c < spec.classes; ++c)
        class_map.push_back("attack" + std::to_string(c));

    Rng rng(spec.seed);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t i = 0; i < spec.rows_per_class[c]; ++i, ++row) {
            double* dst = features.row(row);
            for (std::size_t j = 0; j < spec.dim; ++j)
                dst[j] = rng.normal() + (j == c ? spec.separation : 0.0);
            labels[row] = static_cast<int>(c);
        }
    }
    return make_dataset(std::move(features), std::move(labels), std::move(class_map));
}

} // namespace tripletflow
