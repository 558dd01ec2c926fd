#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fiberpiano/modes.hpp"
#include "fiberpiano/random.hpp"

namespace fiberpiano {

enum class SpectrumKind { Geometric, EqualWeight };

/// SPDC pair state sum_a sqrt(lambda_a) |a>|a>, with Schmidt mode a mapped onto fiber mode
/// schmidt_modes[a].
struct TwoPhotonState {
    std::vector<double> schmidt_coeffs;
    std::vector<int> schmidt_modes;

    int size() const { return static_cast<int>(schmidt_coeffs.size()); }
    /// K = 1 / sum lambda_a^2.
    double schmidt_number() const;
};

/// Schmidt spectrum over `n_modes` modes with Schmidt number `k_target`.
///
/// Geometric: lambda_a proportional to q^a with q solved so 1/sum(lambda^2) = k_target.
/// EqualWeight: lambda_a = 1/K for a < K (K must be an integer).
/// Throws InfeasibleSpectrumError when k_target > n_modes, DomainError when k_target < 1.
TwoPhotonState spdc_state(double k_target, int n_modes, SpectrumKind kind = SpectrumKind::Geometric);

/// Twin photon conditioned on detecting its partner in `herald_mode`.
struct HeraldedState {
    Eigen::VectorXcd coeffs;  ///< over Schmidt modes, unit norm
    double herald_probability = 0.0;
};

/// herald_mode is a unit vector over fiber modes (e.g. a normalized detector_vector).
/// c_a is proportional to sqrt(lambda_a) <herald | phi_a>.
HeraldedState herald(const TwoPhotonState& state, const Eigen::VectorXcd& herald_mode);

/// Heralded photon expressed over all `n_fiber_modes` fiber modes: psi = sum_a c_a phi_{m(a)}.
Eigen::VectorXcd heralded_input(const TwoPhotonState& state, const HeraldedState& h, int n_fiber_modes);

/// Rectangular raster of detector positions in facet micrometres, row-major (y outer).
struct ScanGrid {
    double center_x_um = 0.0;
    double center_y_um = 0.0;
    double step_um = 2.0;
    int nx = 21;
    int ny = 21;

    int size() const { return nx * ny; }
    double x(int index) const { return center_x_um + (index % nx - 0.5 * (nx - 1)) * step_um; }
    double y(int index) const { return center_y_um + (index / nx - 0.5 * (ny - 1)) * step_um; }
    /// Index of the scan point nearest (x, y).
    int nearest(double x_um, double y_um) const;

    bool operator==(const ScanGrid&) const = default;
};

/// Rates on a scan raster (singles or coincidences). Values are non-negative.
struct DetectionMap {
    ScanGrid scan;
    double collection_radius_um = 0.0;
    std::vector<double> values;
    std::optional<DetectorSpec> fixed;
};
using CoincidenceMap = DetectionMap;

/// Collected amplitudes A(p, a) = <g_p | T phi_{m(a)}> for each scan point p and Schmidt mode a.
/// Shared helper; all map operations reduce to it.
Eigen::MatrixXcd collected_amplitudes(const TwoPhotonState& state, const Eigen::MatrixXcd& tm,
                                      const Eigen::MatrixXcd& detector_vectors);

/// Detector vectors (columns) for every scan point at the given collection radius.
Eigen::MatrixXcd scan_detector_vectors(const ModeBasis& basis, const ScanGrid& scan, double collection_radius_um);

/// S(x) = sum_a lambda_a |A_a(x)|^2.
DetectionMap singles_map(const TwoPhotonState& state, const Eigen::MatrixXcd& tm, const ModeBasis& basis,
                         const ScanGrid& scan, double collection_radius_um);

/// C(x1, x2) = |sum_a sqrt(lambda_a) A_a(x1) A_a(x2)|^2 for a fixed detector at x2.
CoincidenceMap coincidence_map(const TwoPhotonState& state, const Eigen::MatrixXcd& tm, const ModeBasis& basis,
                               const DetectorSpec& fixed, const ScanGrid& scan, double collection_radius_um);

/// C(x) = P_herald |<g_x | T psi_h>|^2.
CoincidenceMap heralded_coincidence_map(const TwoPhotonState& state, const HeraldedState& h,
                                        const Eigen::MatrixXcd& tm, const ModeBasis& basis, const ScanGrid& scan,
                                        double collection_radius_um);

/// Pointwise rates from precomputed amplitudes. `a`, `b` are rows of collected_amplitudes.
double singles_rate(const TwoPhotonState& state, const Eigen::VectorXcd& amplitudes);
double coincidence_rate(const TwoPhotonState& state, const Eigen::VectorXcd& a1, const Eigen::VectorXcd& a2);

/// std / mean of the samples (population standard deviation). Throws DegenerateError for a
/// non-positive mean and DomainError for fewer than two samples.
double contrast(std::span<const double> samples);

/// Schmidt number from the ratio of mode counts, (1/Cs^2) / (1/Cc^2).
double schmidt_estimate(double singles_contrast, double coincidence_contrast);

/// Finite-N singles contrast for a Haar-random N-mode fiber, sqrt((N - K) / (K (N + 1))).
/// Tends to 1/sqrt(K) as N grows.
double haar_singles_contrast(double schmidt_number, int fiber_modes);

/// Poisson count with mean rate * integration_time.
long long poisson_counts(double rate, double integration_time, Rng& rng);

}  // namespace fiberpiano
