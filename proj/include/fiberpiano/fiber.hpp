#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fiberpiano/modes.hpp"

namespace fiberpiano {

/// Haar-random n x n unitary, deterministic in `seed`. Throws DimensionError if n < 1.
Eigen::MatrixXcd random_segment_unitary(int n, std::uint64_t seed);

enum class LossModel {
    Uniform,        ///< scalar amplitude factor exp(-beta v^2 / 2) per actuator
    ModeDependent,  ///< per-mode rates in a random rotated basis, mean rate beta
};

/// One piezo actuator: a Hermitian generator H with its eigendecomposition, so that
/// U(v) = exp(i v H) = V diag(exp(i v lambda)) V^H.
struct Actuator {
    Eigen::MatrixXcd generator;
    Eigen::MatrixXcd eigenvectors;
    Eigen::VectorXd eigenvalues;
    // Only populated for LossModel::ModeDependent.
    Eigen::MatrixXcd loss_basis;
    Eigen::VectorXd loss_rates;
};

struct ActuatorBank {
    int modes = 0;
    double coupling_strength = 1.0;
    double loss_coefficient = 0.0;
    LossModel loss_model = LossModel::Uniform;
    std::uint64_t seed = 0;
    std::vector<Actuator> actuators;

    int count() const { return static_cast<int>(actuators.size()); }
};

/// Draws `count` Gaussian-Hermitian generators on n modes, each rescaled so its operator norm
/// equals `coupling_strength` exactly.
ActuatorBank build_actuator_bank(int n, int count, double coupling_strength, double loss_coefficient,
                                 std::uint64_t seed, LossModel loss_model = LossModel::Uniform);

/// Normalized actuator strokes, each in [-1, 1].
class Displacements {
public:
    Displacements() = default;
    explicit Displacements(std::vector<double> values);
    static Displacements zeros(int count) { return Displacements(std::vector<double>(static_cast<std::size_t>(count), 0.0)); }

    std::span<const double> values() const { return values_; }
    int size() const { return static_cast<int>(values_.size()); }
    double operator[](std::size_t i) const { return values_[i]; }

    bool operator==(const Displacements&) const = default;

private:
    std::vector<double> values_;
};

/// Displacements with uniform random strokes in [-1, 1].
Displacements random_displacements(int count, std::uint64_t seed);

struct TransmissionMatrix {
    Eigen::MatrixXcd matrix;
    std::uint64_t bank_seed = 0;
    std::uint64_t segment_seed = 0;
    std::vector<double> displacements;

    int size() const { return static_cast<int>(matrix.rows()); }
};

/// The fiber piano: static Haar segments S_0..S_count interleaved with actuator perturbations,
///
///   T(v) = S_count L_count(v) U_count(v) ... S_1 L_1(v) U_1(v) S_0.
///
/// Construction draws the segments; every evaluation afterwards is a pure function of v.
class FiberModel {
public:
    FiberModel(ActuatorBank bank, std::uint64_t segment_seed);

    const ActuatorBank& bank() const { return bank_; }
    std::uint64_t segment_seed() const { return segment_seed_; }
    int modes() const { return bank_.modes; }
    int actuator_count() const { return bank_.count(); }
    const Eigen::MatrixXcd& segment(int j) const { return segments_.at(static_cast<std::size_t>(j)); }

    /// Returns T(v) X for a block of input columns X.
    Eigen::MatrixXcd propagate(std::span<const double> v, const Eigen::MatrixXcd& inputs) const;

    /// Returns T(v)^H Y. Used to get all collected amplitudes d^H T phi_a from a single pass.
    Eigen::MatrixXcd propagate_adjoint(std::span<const double> v, const Eigen::MatrixXcd& outputs) const;

    TransmissionMatrix assemble(const Displacements& v) const;

    /// Amplitude attenuation matrix of actuator k at stroke v (identity when beta = 0).
    Eigen::MatrixXcd loss_operator(int k, double v) const;
    /// exp(i v H_k).
    Eigen::MatrixXcd perturbation(int k, double v) const;

private:
    void check(std::span<const double> v, Eigen::Index rows) const;
    void apply_actuator(int k, double v, Eigen::MatrixXcd& x, bool adjoint) const;

    ActuatorBank bank_;
    std::uint64_t segment_seed_;
    std::vector<Eigen::MatrixXcd> segments_;
    std::vector<Eigen::MatrixXcd> segments_adjoint_;
};

/// Convenience: builds the segments from `segment_seed` and assembles T(v).
TransmissionMatrix assemble_tm(const ActuatorBank& bank, const Displacements& v, std::uint64_t segment_seed);

struct SpeckleCorrelation {
    double value = 0.0;   ///< clipped to [0, 1]
    double signed_value = 0.0;
};

/// Pearson correlation of the two output intensity patterns produced by `input` through T1 and
/// T2, with each pattern's mean-intensity envelope (1/N) sum_n |phi_n|^2 removed so that only
/// speckle fluctuations are compared. Pixels where the envelope is below 1e-3 of its peak are
/// excluded. Throws DegenerateError when a pattern has no fluctuation.
SpeckleCorrelation speckle_correlation(const Eigen::MatrixXcd& t1, const Eigen::MatrixXcd& t2,
                                       const Eigen::VectorXcd& input, const ModeBasis& basis);

struct CalibrationTargets {
    double full_vector_correlation = 0.3;  ///< v = 0 vs. uniform random v
    double single_stroke_correlation = 0.5;  ///< one actuator at -1 vs. +1
    int trials = 37;
    double tolerance = 1e-2;
};

struct CalibrationResult {
    double coupling_strength = 0.0;
    double full_vector_correlation = 0.0;
    double single_stroke_correlation = 0.0;
};

/// Mean decorrelation statistics for a bank at a given coupling strength.
CalibrationResult decorrelation_at(double coupling_strength, int count, double loss_coefficient,
                                   std::uint64_t seed, const ModeBasis& basis, const CalibrationTargets& targets);

/// Binary search for the smallest coupling strength whose mean decorrelation meets both targets.
CalibrationResult calibrate_coupling_strength(int count, double loss_coefficient, std::uint64_t seed,
                                              const ModeBasis& basis, const CalibrationTargets& targets = {});

}  // namespace fiberpiano
