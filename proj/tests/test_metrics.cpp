#include <doctest.h>

#include <cmath>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/metrics.hpp"
#include "fiberpiano/random.hpp"
#include "oracles.hpp"

using namespace fiberpiano;

namespace {

DisorderStats stats(double mean, double sd, int n) {
    DisorderStats s;
    s.mean = mean;
    s.stddev = sd;
    s.samples = n;
    return s;
}

}  // namespace

TEST_CASE("disorder average of a constant cost") {
    const DisorderStats s = disorder_average([](std::span<const double>, std::uint64_t) { return 4.0; }, 37, 10, 1);
    CHECK(s.mean == 4.0);
    CHECK(s.stddev == 0.0);
    CHECK(s.samples == 10);
    CHECK_THROWS_AS(disorder_average([](std::span<const double>, std::uint64_t) { return 4.0; }, 37, 1, 1),
                    DomainError);
}

TEST_CASE("disorder samples are independent of worker count and match an oracle mean/std") {
    const CostFunction cost = [](std::span<const double> v, std::uint64_t) { return 2.0 + v[0] + 0.5 * v[1]; };
    const auto a = disorder_samples(cost, 4, 500, 9, 1);
    const auto b = disorder_samples(cost, 4, 500, 9, 4);
    CHECK(a == b);
    const DisorderStats s = disorder_average(cost, 4, 500, 9, 3);
    CHECK(s.mean == doctest::Approx(oracle::mean(a)).epsilon(1e-12));
    CHECK(s.stddev == doctest::Approx(oracle::pop_std(a)).epsilon(1e-12));
}

TEST_CASE("baseline standard error scales as 1/sqrt(n)") {
    const CostFunction cost = [](std::span<const double> v, std::uint64_t) { return std::exp(v[0] + v[1] * v[2]); };
    const double e100 = disorder_average(cost, 3, 100, 4).standard_error();
    const double e400 = disorder_average(cost, 3, 400, 4).standard_error();
    const double e1600 = disorder_average(cost, 3, 1600, 4).standard_error();
    CHECK(e100 / e400 == doctest::Approx(2.0).epsilon(0.3));
    CHECK(e400 / e1600 == doctest::Approx(2.0).epsilon(0.3));
}

TEST_CASE("enhancement examples") {
    CHECK(enhancement(16.0, stats(1.0, 0.5, 100)).value == 16.0);
    CHECK(enhancement(3.0, stats(3.0, 1.0, 100)).value == 1.0);
    const Enhancement e = enhancement(16.0, stats(2.0, 1.0, 100));
    CHECK(e.value == 8.0);
    CHECK(e.uncertainty == doctest::Approx(8.0 * (1.0 / (2.0 * 10.0))));
    CHECK_THROWS_AS(enhancement(1.0, stats(0.0, 0.0, 10)), DegenerateError);
}

TEST_CASE("enhancement report: identity decomposition and unchanged maps") {
    const ScanGrid scan{0.0, 0.0, 2.0, 5, 5};
    DetectionMap before{scan, 2.0, std::vector<double>(25), std::nullopt};
    Rng rng = make_rng(1);
    for (double& v : before.values) v = uniform(rng, 0.5, 2.0);
    const DetectorSpec target{2.0, -2.0, 2.0, DetectorRole::Scanning};
    const double at_target = before.values[static_cast<std::size_t>(scan.nearest(2.0, -2.0))];

    const EnhancementReport same = enhancement_report(before, before, target, stats(at_target, 0.1, 100));
    CHECK(same.enhancement == doctest::Approx(1.0));
    CHECK(same.total_ratio == doctest::Approx(1.0));
    CHECK(same.normalized_enhancement == doctest::Approx(1.0));

    DetectionMap after = before;
    after.values[static_cast<std::size_t>(scan.nearest(2.0, -2.0))] *= 10.0;
    ReportExtras extras;
    extras.singles_after = before;
    extras.singles_baseline = stats(at_target, 0.1, 100);
    const EnhancementReport r = enhancement_report(before, after, target, stats(at_target, 0.1, 100), extras);
    CHECK(r.enhancement == doctest::Approx(10.0));
    CHECK(r.total_ratio > 1.0);
    CHECK(std::abs(r.enhancement - r.normalized_enhancement * r.total_ratio) <= 1e-9 * r.enhancement);
    REQUIRE(r.singles_enhancement);
    CHECK(*r.singles_enhancement == doctest::Approx(1.0));

    extras.total_before = 2.0;
    extras.total_after = 3.0;
    CHECK(enhancement_report(before, after, target, stats(at_target, 0.1, 100), extras).total_ratio == 1.5);
}

TEST_CASE("enhancement report rejects mismatched grids and off-grid targets") {
    const ScanGrid a{0.0, 0.0, 2.0, 5, 5}, b{0.0, 0.0, 2.0, 6, 5};
    const DetectionMap ma{a, 2.0, std::vector<double>(25, 1.0), std::nullopt};
    const DetectionMap mb{b, 2.0, std::vector<double>(30, 1.0), std::nullopt};
    const DetectorSpec target{0.0, 0.0, 2.0, DetectorRole::Scanning};
    CHECK_THROWS_AS(enhancement_report(ma, mb, target, stats(1.0, 0.1, 10)), GeometryError);
    CHECK_THROWS_AS(enhancement_report(ma, ma, {20.0, 0.0, 2.0, DetectorRole::Scanning}, stats(1.0, 0.1, 10)),
                    GeometryError);
}

TEST_CASE("full-aperture totals are displacement independent without loss") {
    const ModeBasis basis = build_mode_basis(FiberSpec{}, GridSpec{});
    const FiberModel model(build_actuator_bank(30, 37, 0.8, 0.0, 3), 4);
    const TwoPhotonState st = spdc_state(15.0, 30);
    Eigen::VectorXcd hm = detector_vector(basis, {3.0, 2.0, 2.0, DetectorRole::Heralding});
    hm.normalize();
    const HeraldedState h = herald(st, hm);
    const double h0 = full_aperture_total_heralded(st, h, model.assemble(Displacements::zeros(37)).matrix, basis);
    const double p0 = full_aperture_total_pairs(st, model.assemble(Displacements::zeros(37)).matrix, basis);
    CHECK(h0 == doctest::Approx(h.herald_probability).epsilon(1e-3));
    CHECK(p0 == doctest::Approx(1.0).epsilon(1e-3));
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Eigen::MatrixXcd t = model.assemble(random_displacements(37, s)).matrix;
        CHECK(std::abs(full_aperture_total_heralded(st, h, t, basis) / h0 - 1.0) < 1e-3);
        CHECK(std::abs(full_aperture_total_pairs(st, t, basis) / p0 - 1.0) < 1e-3);
    }
}
