#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fiberpiano/fiber.hpp"
#include "fiberpiano/modes.hpp"
#include "fiberpiano/quantum.hpp"

namespace fiberpiano {

/// Objective over actuator strokes. The second argument seeds any shot noise; deterministic
/// costs ignore it. Must be safe to call concurrently.
using CostFunction = std::function<double(std::span<const double>, std::uint64_t)>;

struct PsoConfig {
    int swarm_size = 30;
    int max_iterations = 500;
    double inertia = 0.7;
    double cognitive = 1.5;
    double social = 1.5;
    double lower_bound = -1.0;
    double upper_bound = 1.0;
    /// Velocity limit as a fraction of (upper - lower).
    double velocity_clamp = 0.3;
    std::uint64_t seed = 1;
    int evaluations_per_cost = 1;
    int workers = 1;

    /// Throws DomainError naming the offending field.
    void validate() const;

    bool operator==(const PsoConfig&) const = default;
};

struct TracePoint {
    int iteration = 0;
    double best = 0.0;  ///< best-so-far
    double mean = 0.0;  ///< swarm mean of this iteration's evaluations
};

struct OptimizationRun {
    std::vector<double> best_displacements;
    double best_cost = 0.0;
    std::vector<TracePoint> trace;  ///< iteration 0 is the random initial swarm
    double wall_seconds = 0.0;
    long long evaluations = 0;
    std::uint64_t seed = 0;

    /// First iteration whose best-so-far reaches `level`, if any.
    std::optional<int> first_iteration_reaching(double level) const;
};

/// Global-best particle swarm maximizer with inertia, velocity clamping and reflecting
/// boundaries. Deterministic per config.seed regardless of config.workers.
/// A throwing cost surfaces as CostEvaluationError with iteration and particle index.
OptimizationRun pso_run(const CostFunction& cost, int dimension, const PsoConfig& config);

/// Convenience overload for noiseless objectives.
OptimizationRun pso_run(const std::function<double(std::span<const double>)>& cost, int dimension,
                        const PsoConfig& config);

enum class Configuration { Heralded, TwoPhoton };
enum class CostVariant { SingleSpot, TwoSpot, SmfCoupling, SinglesFeedback };

struct CostSpec {
    CostVariant variant = CostVariant::SingleSpot;
    std::vector<DetectorSpec> targets;
    double alpha = 0.04;
    Configuration configuration = Configuration::Heralded;

    void validate() const;
};

/// Shot-noise settings for costs. Off by default so regression runs stay exact.
struct NoiseModel {
    bool poisson = false;
};

/// Detector readout of one actuator configuration, in expected counts per acquisition.
struct Readout {
    std::vector<double> coincidences;  ///< per target
    std::vector<double> singles;       ///< per target
    double smf_coupling = 0.0;         ///< fraction of the heralded photon in the SMF mode (heralded only)
};

/// Immutable evaluation context shared by every cost: fiber, state, detectors, count scale.
///
/// Each evaluation back-propagates the detector modes through T(v)^H once, so a cost is a single
/// pass through the actuator chain regardless of the number of Schmidt modes.
class CostContext {
public:
    /// `fixed` is required for the two-photon configuration, `herald_mode` for the heralded one.
    /// `counts_scale` converts probabilities to counts per acquisition.
    CostContext(std::shared_ptr<const FiberModel> fiber, const ModeBasis& basis, TwoPhotonState state,
                Configuration configuration, std::vector<DetectorSpec> targets,
                std::optional<DetectorSpec> fixed, std::optional<Eigen::VectorXcd> herald_mode,
                double counts_scale = 1.0, NoiseModel noise = {});

    const FiberModel& fiber() const { return *fiber_; }
    const TwoPhotonState& state() const { return state_; }
    Configuration configuration() const { return configuration_; }
    const std::vector<DetectorSpec>& targets() const { return targets_; }
    const std::optional<DetectorSpec>& fixed() const { return fixed_; }
    const std::optional<HeraldedState>& heralded() const { return heralded_; }
    double counts_scale() const { return counts_scale_; }
    const NoiseModel& noise() const { return noise_; }
    int dimension() const { return fiber_->actuator_count(); }

    /// Expected (noiseless) counts at every target.
    Readout readout(std::span<const double> v) const;

    /// Draws Poisson counts around `expected` when noise is enabled; identity otherwise.
    double sample_counts(double expected, std::uint64_t noise_seed) const;

private:
    std::shared_ptr<const FiberModel> fiber_;
    TwoPhotonState state_;
    Configuration configuration_;
    std::vector<DetectorSpec> targets_;
    std::optional<DetectorSpec> fixed_;
    std::optional<HeraldedState> heralded_;
    Eigen::VectorXcd heralded_input_;
    Eigen::MatrixXcd probes_;  // targets..., fixed, smf
    double counts_scale_;
    NoiseModel noise_;
    int fixed_column_ = -1;
    int smf_column_ = -1;
};

/// sqrt(c1) + sqrt(c2) - alpha |c1 - c2|.
double two_spot_objective(double c1, double c2, double alpha);

/// Coincidences at the first target: heralded rate, or fixed-detector coincidences.
double cost_single_spot(std::span<const double> v, const CostContext& ctx, std::uint64_t noise_seed = 0);
/// Two-spot balanced objective over the first two targets.
double cost_two_spot(std::span<const double> v, const CostContext& ctx, double alpha, std::uint64_t noise_seed = 0);
/// SMF coupling efficiency of the heralded photon.
double cost_smf(std::span<const double> v, const CostContext& ctx, std::uint64_t noise_seed = 0);
/// Singles at the first target (negative-control feedback).
double cost_singles(std::span<const double> v, const CostContext& ctx, std::uint64_t noise_seed = 0);

/// Binds a CostSpec to a context. The context must outlive the returned function.
CostFunction make_cost(const CostSpec& spec, const CostContext& ctx);

}  // namespace fiberpiano
