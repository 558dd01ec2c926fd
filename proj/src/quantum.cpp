#include "fiberpiano/quantum.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/stats.hpp"

namespace fiberpiano {

namespace {

std::vector<double> geometric_weights(double q, int n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    double term = 1.0;
    for (double& x : w) {
        x = term;
        term *= q;
    }
    const double total = pairwise_sum(w);
    for (double& x : w) x /= total;
    return w;
}

double inverse_participation(const std::vector<double>& w) {
    double s = 0.0;
    for (double x : w) s += x * x;
    return 1.0 / s;
}

}  // namespace

double TwoPhotonState::schmidt_number() const { return inverse_participation(schmidt_coeffs); }

TwoPhotonState spdc_state(double k_target, int n_modes, SpectrumKind kind) {
    if (n_modes < 1) throw DomainError("spdc_state: n_modes must be at least 1");
    if (!(k_target >= 1.0)) throw DomainError("spdc_state: Schmidt number must be at least 1");
    if (k_target > n_modes + 1e-12)
        throw InfeasibleSpectrumError("Schmidt number " + std::to_string(k_target) + " needs more than " +
                                      std::to_string(n_modes) + " modes");

    TwoPhotonState state;
    state.schmidt_modes.resize(static_cast<std::size_t>(n_modes));
    for (int a = 0; a < n_modes; ++a) state.schmidt_modes[static_cast<std::size_t>(a)] = a;

    if (kind == SpectrumKind::EqualWeight) {
        const double k = std::round(k_target);
        if (std::abs(k - k_target) > 1e-9)
            throw DomainError("equal-weight spectrum needs an integer Schmidt number");
        state.schmidt_coeffs.assign(static_cast<std::size_t>(n_modes), 0.0);
        for (int a = 0; a < static_cast<int>(k); ++a) state.schmidt_coeffs[static_cast<std::size_t>(a)] = 1.0 / k;
        return state;
    }

    // K(q) increases monotonically from 1 at q = 0 to n_modes at q = 1.
    double lo = 0.0, hi = 1.0;
    if (k_target >= n_modes - 1e-12) {
        lo = hi;
    } else {
        for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
            const double mid = 0.5 * (lo + hi);
            (inverse_participation(geometric_weights(mid, n_modes)) < k_target ? lo : hi) = mid;
        }
    }
    state.schmidt_coeffs = geometric_weights(0.5 * (lo + hi), n_modes);
    if (std::abs(state.schmidt_number() - k_target) > 1e-6)
        throw InfeasibleSpectrumError("geometric spectrum could not reach Schmidt number " + std::to_string(k_target));
    return state;
}

HeraldedState herald(const TwoPhotonState& state, const Eigen::VectorXcd& herald_mode) {
    if (std::abs(herald_mode.norm() - 1.0) > 1e-9) throw DomainError("herald mode must have unit norm");
    HeraldedState h;
    h.coeffs.resize(state.size());
    for (int a = 0; a < state.size(); ++a) {
        const int m = state.schmidt_modes[static_cast<std::size_t>(a)];
        if (m < 0 || m >= herald_mode.size()) throw DimensionError("herald mode does not cover all Schmidt modes");
        h.coeffs(a) = std::sqrt(state.schmidt_coeffs[static_cast<std::size_t>(a)]) * std::conj(herald_mode(m));
    }
    h.herald_probability = h.coeffs.squaredNorm();
    if (!(h.herald_probability > 1e-14))
        throw ZeroProbabilityHeraldError("herald mode has no overlap with the populated Schmidt modes");
    h.coeffs /= std::sqrt(h.herald_probability);
    return h;
}

Eigen::VectorXcd heralded_input(const TwoPhotonState& state, const HeraldedState& h, int n_fiber_modes) {
    if (h.coeffs.size() != state.size()) throw DimensionError("heralded state does not match the pair state");
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(n_fiber_modes);
    for (int a = 0; a < state.size(); ++a) {
        const int m = state.schmidt_modes[static_cast<std::size_t>(a)];
        if (m < 0 || m >= n_fiber_modes) throw DimensionError("Schmidt mode index outside the fiber basis");
        psi(m) += h.coeffs(a);
    }
    return psi;
}

int ScanGrid::nearest(double x_um, double y_um) const {
    const int ix = std::clamp(static_cast<int>(std::lround((x_um - center_x_um) / step_um + 0.5 * (nx - 1))), 0, nx - 1);
    const int iy = std::clamp(static_cast<int>(std::lround((y_um - center_y_um) / step_um + 0.5 * (ny - 1))), 0, ny - 1);
    return iy * nx + ix;
}

Eigen::MatrixXcd scan_detector_vectors(const ModeBasis& basis, const ScanGrid& scan, double collection_radius_um) {
    Eigen::MatrixXcd d(basis.size(), scan.size());
    for (int p = 0; p < scan.size(); ++p)
        d.col(p) = detector_vector(basis, {scan.x(p), scan.y(p), collection_radius_um, DetectorRole::Scanning});
    return d;
}

Eigen::MatrixXcd collected_amplitudes(const TwoPhotonState& state, const Eigen::MatrixXcd& tm,
                                      const Eigen::MatrixXcd& detector_vectors) {
    if (tm.rows() != tm.cols() || detector_vectors.rows() != tm.rows())
        throw DimensionError("collected_amplitudes: transmission matrix and detector vectors disagree");
    Eigen::MatrixXcd columns(tm.rows(), state.size());
    for (int a = 0; a < state.size(); ++a) {
        const int m = state.schmidt_modes[static_cast<std::size_t>(a)];
        if (m < 0 || m >= tm.cols()) throw DimensionError("Schmidt mode index outside the transmission matrix");
        columns.col(a) = tm.col(m);
    }
    return detector_vectors.adjoint() * columns;
}

double singles_rate(const TwoPhotonState& state, const Eigen::VectorXcd& amplitudes) {
    double s = 0.0;
    for (int a = 0; a < state.size(); ++a) s += state.schmidt_coeffs[static_cast<std::size_t>(a)] * std::norm(amplitudes(a));
    return s;
}

double coincidence_rate(const TwoPhotonState& state, const Eigen::VectorXcd& a1, const Eigen::VectorXcd& a2) {
    cd amp{0.0, 0.0};
    for (int a = 0; a < state.size(); ++a)
        amp += std::sqrt(state.schmidt_coeffs[static_cast<std::size_t>(a)]) * a1(a) * a2(a);
    return std::norm(amp);
}

DetectionMap singles_map(const TwoPhotonState& state, const Eigen::MatrixXcd& tm, const ModeBasis& basis,
                         const ScanGrid& scan, double collection_radius_um) {
    if (tm.rows() != basis.size()) throw DimensionError("singles_map: transmission matrix does not match the basis");
    const Eigen::MatrixXcd amps = collected_amplitudes(state, tm, scan_detector_vectors(basis, scan, collection_radius_um));
    DetectionMap map{scan, collection_radius_um, std::vector<double>(static_cast<std::size_t>(scan.size())), std::nullopt};
    for (int p = 0; p < scan.size(); ++p)
        map.values[static_cast<std::size_t>(p)] = singles_rate(state, amps.row(p).transpose());
    return map;
}

CoincidenceMap coincidence_map(const TwoPhotonState& state, const Eigen::MatrixXcd& tm, const ModeBasis& basis,
                               const DetectorSpec& fixed, const ScanGrid& scan, double collection_radius_um) {
    if (tm.rows() != basis.size()) throw DimensionError("coincidence_map: transmission matrix does not match the basis");
    const Eigen::MatrixXcd amps = collected_amplitudes(state, tm, scan_detector_vectors(basis, scan, collection_radius_um));
    const Eigen::VectorXcd fixed_amps = collected_amplitudes(state, tm, detector_vector(basis, fixed)).row(0).transpose();
    CoincidenceMap map{scan, collection_radius_um, std::vector<double>(static_cast<std::size_t>(scan.size())), fixed};
    for (int p = 0; p < scan.size(); ++p)
        map.values[static_cast<std::size_t>(p)] = coincidence_rate(state, amps.row(p).transpose(), fixed_amps);
    return map;
}

CoincidenceMap heralded_coincidence_map(const TwoPhotonState& state, const HeraldedState& h,
                                        const Eigen::MatrixXcd& tm, const ModeBasis& basis, const ScanGrid& scan,
                                        double collection_radius_um) {
    if (tm.rows() != basis.size() || tm.cols() != basis.size())
        throw DimensionError("heralded_coincidence_map: transmission matrix does not match the basis");
    const Eigen::VectorXcd out = tm * heralded_input(state, h, basis.size());
    const Eigen::MatrixXcd d = scan_detector_vectors(basis, scan, collection_radius_um);
    CoincidenceMap map{scan, collection_radius_um, std::vector<double>(static_cast<std::size_t>(scan.size())), std::nullopt};
    for (int p = 0; p < scan.size(); ++p)
        map.values[static_cast<std::size_t>(p)] = h.herald_probability * std::norm(d.col(p).dot(out));
    return map;
}

double contrast(std::span<const double> samples) {
    if (samples.size() < 2) throw DomainError("contrast needs at least two samples");
    const MeanStd ms = mean_std(samples);
    if (!(ms.mean > 0.0)) throw DegenerateError("contrast undefined for non-positive mean");
    return ms.stddev / ms.mean;
}

double schmidt_estimate(double singles_contrast, double coincidence_contrast) {
    if (!(singles_contrast > 0.0) || !(coincidence_contrast > 0.0) || !std::isfinite(singles_contrast) ||
        !std::isfinite(coincidence_contrast))
        throw DomainError("schmidt_estimate needs positive, finite contrasts");
    const double singles_modes = 1.0 / (singles_contrast * singles_contrast);
    const double coincidence_modes = 1.0 / (coincidence_contrast * coincidence_contrast);
    return singles_modes / coincidence_modes;
}

double haar_singles_contrast(double schmidt_number, int fiber_modes) {
    const double n = fiber_modes;
    return std::sqrt((n - schmidt_number) / (schmidt_number * (n + 1.0)));
}

long long poisson_counts(double rate, double integration_time, Rng& rng) {
    if (!(rate >= 0.0)) throw DomainError("poisson_counts: rate must be non-negative");
    if (!(integration_time > 0.0)) throw DomainError("poisson_counts: integration time must be positive");
    const double mean = rate * integration_time;
    if (mean == 0.0) return 0;
    return std::poisson_distribution<long long>(mean)(rng);
}

}  // namespace fiberpiano
