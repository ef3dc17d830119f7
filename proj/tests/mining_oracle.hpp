#pragma once

// Brute-force mining oracles, written straight from the formulas with their
// own distance code. They share nothing with the library's mining path
// beyond the Matrix type, so agreement is meaningful.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "tripletflow/contrastive.hpp"
#include "tripletflow/matrix.hpp"

namespace mining_oracle {

inline double oracle_distance(const tripletflow::Matrix& z, std::size_t i, std::size_t j,
                              tripletflow::DistanceMetric metric) {
    using tripletflow::DistanceMetric;
    double acc = 0.0;
    switch (metric) {
    case DistanceMetric::euclidean:
        for (std::size_t k = 0; k < z.cols; ++k) {
            const double d = z(i, k) - z(j, k);
            acc += d * d;
        }
        return std::sqrt(acc);
    case DistanceMetric::manhattan:
        for (std::size_t k = 0; k < z.cols; ++k) acc += std::fabs(z(i, k) - z(j, k));
        return acc;
    case DistanceMetric::cosine: {
        double dot = 0.0, ni = 0.0, nj = 0.0;
        for (std::size_t k = 0; k < z.cols; ++k) {
            dot += z(i, k) * z(j, k);
            ni += z(i, k) * z(i, k);
            nj += z(j, k) * z(j, k);
        }
        return 1.0 - dot / (std::sqrt(ni) * std::sqrt(nj));
    }
    }
    return 0.0;
}

inline double hinge(double d_ap, double d_an, double m) {
    const double raw = d_ap - d_an + m;
    return raw > 0.0 ? raw : 0.0;
}

// mean over every valid (a,p,n); nullopt when none exist
inline std::optional<double> brute_batch_all(const tripletflow::Matrix& z,
                                             const std::vector<int>& y, double m,
                                             tripletflow::DistanceMetric metric) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < z.rows; ++a)
        for (std::size_t p = 0; p < z.rows; ++p) {
            if (p == a || y[p] != y[a]) continue;
            for (std::size_t n = 0; n < z.rows; ++n) {
                if (y[n] == y[a]) continue;
                sum += hinge(oracle_distance(z, a, p, metric), oracle_distance(z, a, n, metric), m);
                ++count;
            }
        }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

// per-anchor max-positive / min-negative scan
inline std::optional<double> brute_batch_hard(const tripletflow::Matrix& z,
                                              const std::vector<int>& y, double m,
                                              tripletflow::DistanceMetric metric) {
    double sum = 0.0;
    std::size_t anchors = 0;
    for (std::size_t a = 0; a < z.rows; ++a) {
        double max_pos = -1.0;
        double min_neg = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < z.rows; ++i) {
            if (i == a) continue;
            const double d = oracle_distance(z, a, i, metric);
            if (y[i] == y[a]) max_pos = std::max(max_pos, d);
            else min_neg = std::min(min_neg, d);
        }
        if (max_pos < 0.0 || !std::isfinite(min_neg)) continue;
        sum += hinge(max_pos, min_neg, m);
        ++anchors;
    }
    if (anchors == 0) return std::nullopt;
    return sum / static_cast<double>(anchors);
}

// per-anchor constrained scan: hardest triplet with d_ap < d_an
inline std::optional<double> brute_batch_semi_hard(const tripletflow::Matrix& z,
                                                   const std::vector<int>& y, double m,
                                                   tripletflow::DistanceMetric metric) {
    double sum = 0.0;
    std::size_t anchors = 0;
    for (std::size_t a = 0; a < z.rows; ++a) {
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < z.rows; ++i) {
            if (i == a) continue;
            (y[i] == y[a] ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        double best = 0.0;
        for (std::size_t p = 0; p < z.rows; ++p) {
            if (p == a || y[p] != y[a]) continue;
            for (std::size_t n = 0; n < z.rows; ++n) {
                if (y[n] == y[a]) continue;
                const double d_ap = oracle_distance(z, a, p, metric);
                const double d_an = oracle_distance(z, a, n, metric);
                if (d_ap < d_an) best = std::max(best, hinge(d_ap, d_an, m));
            }
        }
        sum += best;
        ++anchors;
    }
    if (anchors == 0) return std::nullopt;
    return sum / static_cast<double>(anchors);
}

// clearance of every valid triplet from the hinge kink and the semi-hard
// selection boundary; batches this close to a kink are resampled before
// finite-difference checks
inline double min_kink_clearance(const tripletflow::Matrix& z, const std::vector<int>& y,
                                 double m, tripletflow::DistanceMetric metric) {
    double clearance = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < z.rows; ++a)
        for (std::size_t p = 0; p < z.rows; ++p) {
            if (p == a || y[p] != y[a]) continue;
            for (std::size_t n = 0; n < z.rows; ++n) {
                if (y[n] == y[a]) continue;
                const double gap =
                    oracle_distance(z, a, p, metric) - oracle_distance(z, a, n, metric);
                clearance = std::min(clearance, std::abs(gap + m)); // hinge kink
                clearance = std::min(clearance, std::abs(gap));     // d_ap == d_an boundary
            }
        }
    return clearance;
}

} // namespace mining_oracle
