#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "fiberpiano/modes.hpp"
#include "fiberpiano/optimize.hpp"
#include "fiberpiano/quantum.hpp"

namespace fiberpiano {

struct DisorderStats {
    double mean = 0.0;
    double stddev = 0.0;
    int samples = 0;
    std::uint64_t seed = 0;
    std::vector<DetectorSpec> targets;

    /// Uncertainty of the mean, stddev / sqrt(samples).
    double standard_error() const;
};

/// Cost values at `n_samples` uniformly random actuator configurations. Sample s uses
/// strokes from derive_seed(seed, s), so results do not depend on `workers`.
std::vector<double> disorder_samples(const CostFunction& cost, int dimension, int n_samples, std::uint64_t seed,
                                     int workers = 1);

/// Mean and spread of the cost over random configurations. Throws DomainError if n_samples < 2.
DisorderStats disorder_average(const CostFunction& cost, int dimension, int n_samples, std::uint64_t seed,
                               int workers = 1);

struct Enhancement {
    double value = 0.0;
    double uncertainty = 0.0;
};

/// peak / baseline mean, with uncertainty value * stderr / mean. Throws DegenerateError for a
/// non-positive baseline.
Enhancement enhancement(double peak, const DisorderStats& baseline);

struct EnhancementReport {
    double peak = 0.0;
    double enhancement = 0.0;
    double enhancement_uncertainty = 0.0;
    double normalized_enhancement = 0.0;
    double total_ratio = 0.0;  ///< total counts after / before
    std::optional<double> singles_enhancement;
};

/// Optional inputs for enhancement_report.
struct ReportExtras {
    /// Singles maps before/after and their disorder baseline at the target.
    std::optional<DetectionMap> singles_after;
    std::optional<DisorderStats> singles_baseline;
    /// Replace the scan-grid totals (e.g. with full-aperture totals).
    std::optional<double> total_before;
    std::optional<double> total_after;
};

/// Enhancement at `target` plus its decomposition into throughput change and refocusing:
/// enhancement = normalized_enhancement * total_ratio.
/// Throws GeometryError when the maps use different scan grids or the target is off-grid.
EnhancementReport enhancement_report(const DetectionMap& before, const DetectionMap& after, const DetectorSpec& target,
                                     const DisorderStats& baseline, const ReportExtras& extras = {});

/// Total heralded-photon detection over the whole rendered output plane:
/// P_herald * integral |T psi_h|^2 dA.
double full_aperture_total_heralded(const TwoPhotonState& state, const HeraldedState& h, const Eigen::MatrixXcd& tm,
                                    const ModeBasis& basis);

/// Total pair detection with both photons integrated over the output plane:
/// integral integral |sum_a sqrt(lambda_a) f_a(x1) f_a(x2)|^2, f_a = rendered T phi_a.
double full_aperture_total_pairs(const TwoPhotonState& state, const Eigen::MatrixXcd& tm, const ModeBasis& basis);

}  // namespace fiberpiano
