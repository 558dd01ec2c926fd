#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace fiberpiano {

/// Pairwise (cascade) summation. Result depends only on the order of the input, not on how
/// it was produced, so ensemble aggregates are reproducible.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;  ///< population standard deviation
};

inline MeanStd mean_std(std::span<const double> xs) {
    MeanStd out;
    if (xs.empty()) return out;
    const double n = static_cast<double>(xs.size());
    out.mean = pairwise_sum(xs) / n;
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - out.mean) * (xs[i] - out.mean);
    const double acc = pairwise_sum(sq);
    out.stddev = std::sqrt(acc / n);
    return out;
}

}  // namespace fiberpiano
