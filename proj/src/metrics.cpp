#include "fiberpiano/metrics.hpp"

#include <cmath>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/parallel.hpp"
#include "fiberpiano/random.hpp"
#include "fiberpiano/stats.hpp"

namespace fiberpiano {

double DisorderStats::standard_error() const {
    return samples > 0 ? stddev / std::sqrt(static_cast<double>(samples)) : 0.0;
}

std::vector<double> disorder_samples(const CostFunction& cost, int dimension, int n_samples, std::uint64_t seed,
                                     int workers) {
    if (n_samples < 1) throw DomainError("disorder ensemble needs at least one sample");
    std::vector<double> out(static_cast<std::size_t>(n_samples));
    parallel_for(out.size(), workers, [&](std::size_t s) {
        const auto v = random_displacements(dimension, derive_seed(seed, s));
        out[s] = cost(v.values(), derive_seed(seed, s, 1));
    });
    return out;
}

DisorderStats disorder_average(const CostFunction& cost, int dimension, int n_samples, std::uint64_t seed,
                               int workers) {
    if (n_samples < 2) throw DomainError("disorder average needs at least two samples");
    const auto samples = disorder_samples(cost, dimension, n_samples, seed, workers);
    const MeanStd ms = mean_std(samples);
    DisorderStats stats;
    stats.mean = ms.mean;
    stats.stddev = ms.stddev;
    stats.samples = n_samples;
    stats.seed = seed;
    return stats;
}

Enhancement enhancement(double peak, const DisorderStats& baseline) {
    if (!(baseline.mean > 0.0)) throw DegenerateError("enhancement undefined for a non-positive baseline");
    Enhancement e;
    e.value = peak / baseline.mean;
    e.uncertainty = e.value * baseline.standard_error() / baseline.mean;
    return e;
}

EnhancementReport enhancement_report(const DetectionMap& before, const DetectionMap& after, const DetectorSpec& target,
                                     const DisorderStats& baseline, const ReportExtras& extras) {
    if (!(before.scan == after.scan) || before.values.size() != after.values.size())
        throw GeometryError("before and after maps use different scan grids");
    const ScanGrid& scan = after.scan;
    const int index = scan.nearest(target.x_um, target.y_um);
    if (std::abs(scan.x(index) - target.x_um) > 0.5 * scan.step_um ||
        std::abs(scan.y(index) - target.y_um) > 0.5 * scan.step_um)
        throw GeometryError("target lies outside the scan grid");

    EnhancementReport r;
    r.peak = after.values[static_cast<std::size_t>(index)];
    const Enhancement e = enhancement(r.peak, baseline);
    r.enhancement = e.value;
    r.enhancement_uncertainty = e.uncertainty;

    const double total_before = extras.total_before.value_or(pairwise_sum(before.values));
    const double total_after = extras.total_after.value_or(pairwise_sum(after.values));
    if (!(total_before > 0.0)) throw DegenerateError("total counts before optimization are zero");
    r.total_ratio = total_after / total_before;
    if (!(r.total_ratio > 0.0)) throw DegenerateError("total counts after optimization are zero");
    r.normalized_enhancement = r.enhancement / r.total_ratio;

    if (extras.singles_after && extras.singles_baseline) {
        if (!(extras.singles_after->scan == scan)) throw GeometryError("singles map uses a different scan grid");
        r.singles_enhancement =
            enhancement(extras.singles_after->values[static_cast<std::size_t>(index)], *extras.singles_baseline).value;
    }
    return r;
}

double full_aperture_total_heralded(const TwoPhotonState& state, const HeraldedState& h, const Eigen::MatrixXcd& tm,
                                    const ModeBasis& basis) {
    const Eigen::VectorXcd out = tm * heralded_input(state, h, basis.size());
    return h.herald_probability * render_field(out, basis).power();
}

double full_aperture_total_pairs(const TwoPhotonState& state, const Eigen::MatrixXcd& tm, const ModeBasis& basis) {
    if (tm.rows() != basis.size() || tm.cols() != basis.size())
        throw DimensionError("full_aperture_total_pairs: transmission matrix does not match the basis");
    std::vector<int> active;
    for (int a = 0; a < state.size(); ++a)
        if (state.schmidt_coeffs[static_cast<std::size_t>(a)] > 0.0) active.push_back(a);

    Eigen::MatrixXcd columns(tm.rows(), static_cast<Eigen::Index>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j)
        columns.col(static_cast<Eigen::Index>(j)) = tm.col(state.schmidt_modes[static_cast<std::size_t>(active[j])]);
    const Eigen::MatrixXcd fields = basis.profiles() * columns;
    const Eigen::MatrixXcd gram = (fields.adjoint() * fields) * basis.grid().pixel_area_um2();

    // sum_ab s_a s_b <f_b|f_a>^2
    double total = 0.0;
    for (std::size_t a = 0; a < active.size(); ++a)
        for (std::size_t b = 0; b < active.size(); ++b) {
            const double sa = std::sqrt(state.schmidt_coeffs[static_cast<std::size_t>(active[a])]);
            const double sb = std::sqrt(state.schmidt_coeffs[static_cast<std::size_t>(active[b])]);
            const cd g = gram(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a));
            total += sa * sb * (g * g).real();
        }
    return total;
}

}  // namespace fiberpiano
