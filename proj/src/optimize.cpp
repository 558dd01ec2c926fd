#include "fiberpiano/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/parallel.hpp"
#include "fiberpiano/random.hpp"
#include "fiberpiano/stats.hpp"

namespace fiberpiano {

void PsoConfig::validate() const {
    if (swarm_size < 2) throw DomainError("pso.swarm_size must be at least 2");
    if (max_iterations < 0) throw DomainError("pso.max_iterations must be non-negative");
    if (!(inertia > 0.0 && inertia < 1.0)) throw DomainError("pso.inertia must lie in (0, 1)");
    if (!(cognitive > 0.0)) throw DomainError("pso.cognitive must be positive");
    if (!(social > 0.0)) throw DomainError("pso.social must be positive");
    if (!(upper_bound > lower_bound)) throw DomainError("pso bounds must satisfy lower < upper");
    if (!(velocity_clamp > 0.0)) throw DomainError("pso.velocity_clamp must be positive");
    if (evaluations_per_cost < 1) throw DomainError("pso.evaluations_per_cost must be at least 1");
}

std::optional<int> OptimizationRun::first_iteration_reaching(double level) const {
    for (const auto& t : trace)
        if (t.best >= level) return t.iteration;
    return std::nullopt;
}

OptimizationRun pso_run(const CostFunction& cost, int dimension, const PsoConfig& config) {
    config.validate();
    if (dimension < 1) throw DimensionError("pso_run: dimension must be at least 1");

    const auto started = std::chrono::steady_clock::now();
    const auto swarm = static_cast<std::size_t>(config.swarm_size);
    const auto dim = static_cast<std::size_t>(dimension);
    const double lo = config.lower_bound;
    const double hi = config.upper_bound;
    const double vmax = config.velocity_clamp * (hi - lo);

    Rng rng = make_rng(config.seed);
    std::vector<std::vector<double>> x(swarm, std::vector<double>(dim));
    std::vector<std::vector<double>> vel(swarm, std::vector<double>(dim));
    for (std::size_t i = 0; i < swarm; ++i)
        for (std::size_t d = 0; d < dim; ++d) {
            x[i][d] = uniform(rng, lo, hi);
            vel[i][d] = uniform(rng, -vmax, vmax);
        }

    std::vector<double> fx(swarm);
    auto evaluate_swarm = [&](int iteration) {
        parallel_for(swarm, config.workers, [&](std::size_t i) {
            try {
                double acc = 0.0;
                for (int r = 0; r < config.evaluations_per_cost; ++r) {
                    const std::uint64_t noise = derive_seed(config.seed, static_cast<std::uint64_t>(iteration) * swarm + i,
                                                            static_cast<std::uint64_t>(r));
                    acc += cost(x[i], noise);
                }
                fx[i] = acc / config.evaluations_per_cost;
            } catch (const std::exception& e) {
                throw CostEvaluationError("cost evaluation failed at iteration " + std::to_string(iteration) +
                                              ", particle " + std::to_string(i) + ": " + e.what(),
                                          iteration, static_cast<int>(i));
            }
        });
    };

    OptimizationRun run;
    run.seed = config.seed;
    run.trace.reserve(static_cast<std::size_t>(config.max_iterations) + 1);

    evaluate_swarm(0);
    std::vector<std::vector<double>> personal = x;
    std::vector<double> personal_cost = fx;
    std::size_t leader = static_cast<std::size_t>(std::max_element(fx.begin(), fx.end()) - fx.begin());
    std::vector<double> global = personal[leader];
    double global_cost = personal_cost[leader];
    run.trace.push_back({0, global_cost, pairwise_sum(fx) / static_cast<double>(swarm)});

    for (int it = 1; it <= config.max_iterations; ++it) {
        for (std::size_t i = 0; i < swarm; ++i) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double r1 = uniform01(rng);
                const double r2 = uniform01(rng);
                double v = config.inertia * vel[i][d] + config.cognitive * r1 * (personal[i][d] - x[i][d]) +
                           config.social * r2 * (global[d] - x[i][d]);
                v = std::clamp(v, -vmax, vmax);
                double p = x[i][d] + v;
                if (p > hi) {
                    p = 2.0 * hi - p;
                    v = -v;
                } else if (p < lo) {
                    p = 2.0 * lo - p;
                    v = -v;
                }
                x[i][d] = std::clamp(p, lo, hi);
                vel[i][d] = v;
            }
        }

        evaluate_swarm(it);
        for (std::size_t i = 0; i < swarm; ++i) {
            if (fx[i] > personal_cost[i]) {
                personal_cost[i] = fx[i];
                personal[i] = x[i];
            }
            if (personal_cost[i] > global_cost) {
                global_cost = personal_cost[i];
                global = personal[i];
            }
        }
        run.trace.push_back({it, global_cost, pairwise_sum(fx) / static_cast<double>(swarm)});
    }

    run.best_displacements = global;
    run.best_cost = global_cost;
    run.evaluations = static_cast<long long>(swarm) * (config.max_iterations + 1) * config.evaluations_per_cost;
    run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return run;
}

OptimizationRun pso_run(const std::function<double(std::span<const double>)>& cost, int dimension,
                        const PsoConfig& config) {
    return pso_run(CostFunction([&cost](std::span<const double> v, std::uint64_t) { return cost(v); }), dimension,
                   config);
}

void CostSpec::validate() const {
    if (!(alpha >= 0.0)) throw DomainError("cost.alpha must be non-negative");
    switch (variant) {
        case CostVariant::TwoSpot:
            if (targets.size() != 2) throw DomainError("two_spot cost needs exactly two targets");
            break;
        case CostVariant::SmfCoupling:
            if (configuration != Configuration::Heralded)
                throw DomainError("smf_coupling cost needs the heralded configuration");
            break;
        case CostVariant::SingleSpot:
        case CostVariant::SinglesFeedback:
            if (targets.empty()) throw DomainError("cost needs a target detector");
            break;
    }
}

CostContext::CostContext(std::shared_ptr<const FiberModel> fiber, const ModeBasis& basis, TwoPhotonState state,
                         Configuration configuration, std::vector<DetectorSpec> targets,
                         std::optional<DetectorSpec> fixed, std::optional<Eigen::VectorXcd> herald_mode,
                         double counts_scale, NoiseModel noise)
    : fiber_(std::move(fiber)),
      state_(std::move(state)),
      configuration_(configuration),
      targets_(std::move(targets)),
      fixed_(std::move(fixed)),
      counts_scale_(counts_scale),
      noise_(noise) {
    if (!fiber_) throw DomainError("cost context needs a fiber model");
    const int n = basis.size();
    if (fiber_->modes() != n) throw DimensionError("fiber model and mode basis disagree on the mode count");
    if (!(counts_scale_ > 0.0)) throw DomainError("counts scale must be positive");
    for (int m : state_.schmidt_modes)
        if (m < 0 || m >= n) throw DimensionError("Schmidt mode index outside the fiber basis");

    const int columns = static_cast<int>(targets_.size()) + 2;
    probes_ = Eigen::MatrixXcd::Zero(n, columns);
    for (std::size_t i = 0; i < targets_.size(); ++i)
        probes_.col(static_cast<Eigen::Index>(i)) = detector_vector(basis, targets_[i]);
    fixed_column_ = static_cast<int>(targets_.size());
    smf_column_ = fixed_column_ + 1;
    probes_(0, smf_column_) = 1.0;  // fundamental mode; the SMF mode in the scalar model

    if (configuration_ == Configuration::TwoPhoton) {
        if (!fixed_) throw DomainError("two-photon configuration needs a fixed detector");
        probes_.col(fixed_column_) = detector_vector(basis, *fixed_);
    } else {
        if (!herald_mode) throw DomainError("heralded configuration needs a herald mode");
        heralded_ = herald(state_, *herald_mode);
        heralded_input_ = heralded_input(state_, *heralded_, n);
    }
}

Readout CostContext::readout(std::span<const double> v) const {
    const Eigen::MatrixXcd back = fiber_->propagate_adjoint(v, probes_);
    Readout r;
    r.coincidences.resize(targets_.size());
    r.singles.resize(targets_.size());

    for (std::size_t i = 0; i < targets_.size(); ++i) {
        const auto col = back.col(static_cast<Eigen::Index>(i));
        double singles = 0.0;
        cd pair{0.0, 0.0};
        for (int a = 0; a < state_.size(); ++a) {
            const auto m = state_.schmidt_modes[static_cast<std::size_t>(a)];
            const double lambda = state_.schmidt_coeffs[static_cast<std::size_t>(a)];
            singles += lambda * std::norm(col(m));
            if (configuration_ == Configuration::TwoPhoton)
                pair += std::sqrt(lambda) * std::conj(col(m)) * std::conj(back(m, fixed_column_));
        }
        r.singles[i] = counts_scale_ * singles;
        r.coincidences[i] = configuration_ == Configuration::TwoPhoton
                                ? counts_scale_ * std::norm(pair)
                                : counts_scale_ * heralded_->herald_probability * std::norm(col.dot(heralded_input_));
    }
    if (configuration_ == Configuration::Heralded) r.smf_coupling = std::norm(back.col(smf_column_).dot(heralded_input_));
    return r;
}

double CostContext::sample_counts(double expected, std::uint64_t noise_seed) const {
    if (!noise_.poisson) return expected;
    Rng rng = make_rng(noise_seed);
    return static_cast<double>(poisson_counts(expected, 1.0, rng));
}

double two_spot_objective(double c1, double c2, double alpha) {
    return std::sqrt(c1) + std::sqrt(c2) - alpha * std::abs(c1 - c2);
}

double cost_single_spot(std::span<const double> v, const CostContext& ctx, std::uint64_t noise_seed) {
    if (ctx.targets().empty()) throw DomainError("single-spot cost needs a target detector");
    return ctx.sample_counts(ctx.readout(v).coincidences[0], noise_seed);
}

double cost_two_spot(std::span<const double> v, const CostContext& ctx, double alpha, std::uint64_t noise_seed) {
    if (ctx.targets().size() != 2) throw DomainError("two-spot cost needs exactly two targets");
    const Readout r = ctx.readout(v);
    const double c1 = ctx.sample_counts(r.coincidences[0], derive_seed(noise_seed, 1));
    const double c2 = ctx.sample_counts(r.coincidences[1], derive_seed(noise_seed, 2));
    return two_spot_objective(c1, c2, alpha);
}

double cost_smf(std::span<const double> v, const CostContext& ctx, std::uint64_t noise_seed) {
    if (ctx.configuration() != Configuration::Heralded) throw DomainError("SMF coupling needs the heralded configuration");
    const double coupling = ctx.readout(v).smf_coupling;
    if (!ctx.noise().poisson) return coupling;
    const double per_unit = ctx.counts_scale() * ctx.heralded()->herald_probability;
    return ctx.sample_counts(coupling * per_unit, noise_seed) / per_unit;
}

double cost_singles(std::span<const double> v, const CostContext& ctx, std::uint64_t noise_seed) {
    if (ctx.targets().empty()) throw DomainError("singles cost needs a target detector");
    return ctx.sample_counts(ctx.readout(v).singles[0], noise_seed);
}

CostFunction make_cost(const CostSpec& spec, const CostContext& ctx) {
    spec.validate();
    const CostContext* c = &ctx;
    switch (spec.variant) {
        case CostVariant::SingleSpot:
            return [c](std::span<const double> v, std::uint64_t s) { return cost_single_spot(v, *c, s); };
        case CostVariant::TwoSpot:
            return [c, alpha = spec.alpha](std::span<const double> v, std::uint64_t s) {
                return cost_two_spot(v, *c, alpha, s);
            };
        case CostVariant::SmfCoupling:
            return [c](std::span<const double> v, std::uint64_t s) { return cost_smf(v, *c, s); };
        case CostVariant::SinglesFeedback:
            return [c](std::span<const double> v, std::uint64_t s) { return cost_singles(v, *c, s); };
    }
    throw DomainError("unknown cost variant");
}

}  // namespace fiberpiano
