#include <doctest.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <set>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/optimize.hpp"
#include "fiberpiano/random.hpp"

using namespace fiberpiano;

namespace {

struct Setup {
    ModeBasis basis = build_mode_basis(FiberSpec{}, GridSpec{});
    std::shared_ptr<const FiberModel> fiber =
        std::make_shared<const FiberModel>(build_actuator_bank(30, 37, 0.8, 0.03, 1), 2);
    DetectorSpec t1{4.0, 0.0, 2.0, DetectorRole::Scanning};
    DetectorSpec t2{-2.0, 6.0, 2.0, DetectorRole::Scanning};
    DetectorSpec fixed{-4.0, 0.0, 2.0, DetectorRole::Fixed};

    Eigen::VectorXcd herald_mode() const {
        Eigen::VectorXcd h = detector_vector(basis, {3.0, 2.0, 2.0, DetectorRole::Heralding});
        return h.normalized();
    }
    CostContext heralded(double k = 15.0, SpectrumKind kind = SpectrumKind::Geometric) const {
        return CostContext(fiber, basis, spdc_state(k, 30, kind), Configuration::Heralded, {t1, t2}, std::nullopt,
                           herald_mode());
    }
    CostContext two_photon(double k = 15.0) const {
        return CostContext(fiber, basis, spdc_state(k, 30), Configuration::TwoPhoton, {t1, t2}, fixed, std::nullopt);
    }
};

const Setup& setup() {
    static const Setup s;
    return s;
}

PsoConfig quick(int iterations, std::uint64_t seed) {
    PsoConfig c;
    c.max_iterations = iterations;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("PSO maximizes a concave quadratic to the origin") {
    const auto cost = [](std::span<const double> v) {
        double s = 0.0;
        for (double x : v) s -= x * x;
        return s;
    };
    const OptimizationRun run = pso_run(cost, 37, PsoConfig{});
    for (double x : run.best_displacements) CHECK(std::abs(x) < 1e-3);
    CHECK(run.trace.size() == 501);
}

TEST_CASE("PSO on a constant cost: flat trace, runs to max_iterations") {
    const OptimizationRun run = pso_run([](std::span<const double>) { return 2.5; }, 5, quick(40, 1));
    CHECK(run.trace.size() == 41);
    for (const auto& t : run.trace) CHECK(t.best == 2.5);
    CHECK(run.evaluations == 30 * 41);
}

TEST_CASE("PSO stays in bounds, trace is monotone, runs are seed-deterministic") {
    std::mutex m;
    double worst = 0.0;
    const CostFunction cost = [&](std::span<const double> v, std::uint64_t) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::lock_guard lock(m);
            worst = std::max(worst, std::abs(v[i]));
            s += std::sin(3.0 * v[i] + static_cast<double>(i)) + 2.0 * v[i];
        }
        return s;
    };
    PsoConfig c = quick(100, 5);
    const OptimizationRun a = pso_run(cost, 37, c);
    CHECK(worst <= 1.0);
    for (std::size_t i = 1; i < a.trace.size(); ++i) CHECK(a.trace[i].best >= a.trace[i - 1].best);
    c.workers = 3;
    const OptimizationRun b = pso_run(cost, 37, c);
    CHECK(a.best_displacements == b.best_displacements);
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].best == b.trace[i].best);
        CHECK(a.trace[i].mean == b.trace[i].mean);
    }
    c.seed = 6;
    CHECK(pso_run(cost, 37, c).best_displacements != a.best_displacements);
}

TEST_CASE("PSO config validation and cost failures") {
    PsoConfig c;
    c.swarm_size = 1;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c = PsoConfig{};
    c.inertia = 1.0;
    CHECK_THROWS_AS(c.validate(), DomainError);
    c = PsoConfig{};
    c.social = 0.0;
    CHECK_THROWS_AS(c.validate(), DomainError);

    const CostFunction boom = [](std::span<const double> v, std::uint64_t) -> double {
        if (v[0] > 0.5) throw std::runtime_error("detector saturated");
        return v[0];
    };
    try {
        pso_run(boom, 3, quick(50, 2));
        FAIL("expected a failure");
    } catch (const CostEvaluationError& e) {
        CHECK(e.particle() >= 0);
        CHECK(e.particle() < 30);
        CHECK(e.iteration() >= 0);
        CHECK(std::string(e.what()).find("detector saturated") != std::string::npos);
    }
}

TEST_CASE("noisy costs average evaluations_per_cost draws with distinct seeds") {
    std::atomic<int> calls{0};
    std::mutex m;
    std::set<std::uint64_t> seeds;
    const CostFunction cost = [&](std::span<const double>, std::uint64_t s) {
        ++calls;
        std::lock_guard lock(m);
        seeds.insert(s);
        return 1.0;
    };
    PsoConfig c = quick(3, 1);
    c.evaluations_per_cost = 4;
    const OptimizationRun run = pso_run(cost, 2, c);
    CHECK(calls == 30 * 4 * 4);
    CHECK(seeds.size() == 30 * 4 * 4);
    CHECK(run.evaluations == 30 * 4 * 4);
}

TEST_CASE("two-spot objective arithmetic") {
    CHECK(two_spot_objective(4.0, 4.0, 0.04) == 4.0);
    CHECK(two_spot_objective(9.0, 0.0, 0.04) == doctest::Approx(2.64));
    CostSpec s;
    s.variant = CostVariant::TwoSpot;
    s.targets = {setup().t1};
    CHECK_THROWS_AS(s.validate(), DomainError);
    s.targets.push_back(setup().t2);
    s.alpha = -1.0;
    CHECK_THROWS_AS(s.validate(), DomainError);
    CHECK(CostSpec{}.alpha == 0.04);
}

TEST_CASE("costs are deterministic and non-negative") {
    const Setup& su = setup();
    const CostContext her = su.heralded();
    const CostContext two = su.two_photon();
    const auto zero = std::vector<double>(37, 0.0);
    CHECK(cost_single_spot(zero, her) == cost_single_spot(zero, her));
    CHECK(cost_single_spot(zero, two) == cost_single_spot(zero, two));
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto v = random_displacements(37, s);
        CHECK(cost_single_spot(v.values(), her) >= 0.0);
        CHECK(cost_single_spot(v.values(), two) >= 0.0);
        CHECK(cost_singles(v.values(), two) >= 0.0);
        const double smf = cost_smf(v.values(), her);
        CHECK(smf >= 0.0);
        CHECK(smf <= 1.0);
    }
}

TEST_CASE("costs agree with assembled-matrix maps") {
    const Setup& su = setup();
    const CostContext her = su.heralded();
    const CostContext two = su.two_photon();
    const auto v = random_displacements(37, 3);
    const Eigen::MatrixXcd t = su.fiber->assemble(v).matrix;
    const ScanGrid at_t1{su.t1.x_um, su.t1.y_um, 1.0, 1, 1};
    CHECK(cost_single_spot(v.values(), two) ==
          doctest::Approx(coincidence_map(two.state(), t, su.basis, su.fixed, at_t1, 2.0).values[0]).epsilon(1e-10));
    CHECK(cost_single_spot(v.values(), her) ==
          doctest::Approx(heralded_coincidence_map(her.state(), *her.heralded(), t, su.basis, at_t1, 2.0).values[0])
              .epsilon(1e-10));
    CHECK(cost_singles(v.values(), two) ==
          doctest::Approx(singles_map(two.state(), t, su.basis, at_t1, 2.0).values[0]).epsilon(1e-10));
}

TEST_CASE("SMF coupling of the fundamental through an identity fiber is 1") {
    const ModeBasis b = build_mode_basis(FiberSpec{}, GridSpec{});
    const auto fiber = std::make_shared<const FiberModel>(build_actuator_bank(30, 1, 0.8, 0.0, 1), 2);
    const TwoPhotonState st = spdc_state(1.0, 30);
    Eigen::VectorXcd e0 = Eigen::VectorXcd::Zero(30);
    e0(0) = 1.0;
    const CostContext ctx(fiber, b, st, Configuration::Heralded, {DetectorSpec{}}, std::nullopt, e0);
    // K = 1 heralded on the fundamental: the coupling is |T_00|^2.
    const Eigen::MatrixXcd t = fiber->assemble(Displacements::zeros(1)).matrix;
    CHECK(cost_smf(std::vector<double>{0.0}, ctx) == doctest::Approx(std::norm(t(0, 0))).epsilon(1e-12));

    const Eigen::VectorXcd psi = heralded_input(st, *ctx.heralded(), 30);
    CHECK(std::norm(e0.dot(Eigen::MatrixXcd::Identity(30, 30) * psi)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("K = 1: coincidence cost is the product of singles at target and fixed detector") {
    const Setup& su = setup();
    const CostContext two = su.two_photon(1.0);
    const CostContext at_fixed(su.fiber, su.basis, spdc_state(1.0, 30), Configuration::TwoPhoton, {su.fixed}, su.fixed,
                               std::nullopt);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto v = random_displacements(37, 100 + s);
        const double product = cost_singles(v.values(), two) * cost_singles(v.values(), at_fixed);
        CHECK(cost_single_spot(v.values(), two) == doctest::Approx(product).epsilon(1e-9));
    }
}

TEST_CASE("context validation") {
    const Setup& su = setup();
    CHECK_THROWS_AS(CostContext(su.fiber, su.basis, spdc_state(2.0, 30), Configuration::TwoPhoton, {su.t1},
                                std::nullopt, std::nullopt),
                    DomainError);
    CHECK_THROWS_AS(CostContext(su.fiber, su.basis, spdc_state(2.0, 30), Configuration::Heralded, {su.t1},
                                std::nullopt, std::nullopt),
                    DomainError);
    const DetectorSpec outside{90.0, 0.0, 2.0, DetectorRole::Scanning};
    CHECK_THROWS_AS(CostContext(su.fiber, su.basis, spdc_state(2.0, 30), Configuration::Heralded, {outside},
                                std::nullopt, su.herald_mode()),
                    GeometryError);
    const CostContext two = su.two_photon();
    CHECK_THROWS_AS(cost_smf(std::vector<double>(37, 0.0), two), DomainError);
    CHECK_THROWS_AS(cost_single_spot(std::vector<double>(3, 0.0), two), DimensionError);
}

TEST_CASE("Poisson layer: counts are integers, seed-deterministic, unbiased") {
    const Setup& su = setup();
    const CostContext ctx(su.fiber, su.basis, spdc_state(15.0, 30), Configuration::Heralded, {su.t1}, std::nullopt,
                          su.herald_mode(), 2e5, NoiseModel{true});
    const auto v = random_displacements(37, 1);
    const double expected = ctx.readout(v.values()).coincidences[0];
    const double a = cost_single_spot(v.values(), ctx, 7);
    CHECK(a == std::round(a));
    CHECK(a == cost_single_spot(v.values(), ctx, 7));
    double total = 0.0;
    for (std::uint64_t s = 0; s < 2000; ++s) total += cost_single_spot(v.values(), ctx, s);
    CHECK(total / 2000 == doctest::Approx(expected).epsilon(5.0 * std::sqrt(expected / 2000) / expected + 1e-9));
}
