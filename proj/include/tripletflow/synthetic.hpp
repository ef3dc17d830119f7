#pragma once

#include <cstdint>
#include <vector>

#include "tripletflow/dataset.hpp"

namespace tripletflow {

/// Gaussian blob generator used by the acceptance workflow so experiments can
/// run with no external datasets. Class c is centred `separation` along axis
/// c with unit-variance features (pairwise centre distance separation*sqrt2).
/// Class 0 is named "benign".
struct BlobSpec {
    std::size_t classes = 2;
    std::size_t dim = 2;
    double separation = 6.0;
    std::vector<std::size_t> rows_per_class; // one entry per class
    std::uint64_t seed = 0;
};

FlowDataset make_blobs(const BlobSpec& spec);

} // namespace tripletflow
