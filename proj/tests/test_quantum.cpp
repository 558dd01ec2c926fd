#include <doctest.h>

#include <cmath>
#include <random>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/fiber.hpp"
#include "fiberpiano/quantum.hpp"
#include "fiberpiano/random.hpp"
#include "oracles.hpp"

using namespace fiberpiano;

namespace {

double sum(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
}

ModeBasis small_basis(int n) {
    FiberSpec f;
    f.mode_truncation = n;
    return build_mode_basis(f, GridSpec{});
}

std::vector<oracle::Detector> scan_detectors(const ScanGrid& scan, double wd) {
    std::vector<oracle::Detector> out;
    for (int p = 0; p < scan.size(); ++p) out.push_back({scan.x(p), scan.y(p), wd});
    return out;
}

}  // namespace

TEST_CASE("spdc_state spectra") {
    const TwoPhotonState one = spdc_state(1.0, 30);
    CHECK(one.schmidt_coeffs[0] == doctest::Approx(1.0));
    for (int a = 1; a < 30; ++a) CHECK(one.schmidt_coeffs[a] == doctest::Approx(0.0));

    const TwoPhotonState k15 = spdc_state(15.0, 30);
    CHECK(std::abs(sum(k15.schmidt_coeffs) - 1.0) < 1e-12);
    CHECK(std::abs(k15.schmidt_number() - 15.0) < 1e-6);
    for (int a = 1; a < 30; ++a) CHECK(k15.schmidt_coeffs[a] <= k15.schmidt_coeffs[a - 1]);
    for (int a = 0; a < 30; ++a) CHECK(k15.schmidt_modes[a] == a);

    const TwoPhotonState eq = spdc_state(10.0, 30, SpectrumKind::EqualWeight);
    for (int a = 0; a < 30; ++a) CHECK(eq.schmidt_coeffs[a] == doctest::Approx(a < 10 ? 0.1 : 0.0));
    CHECK(eq.schmidt_number() == doctest::Approx(10.0));

    CHECK(spdc_state(30.0, 30).schmidt_number() == doctest::Approx(30.0));
    CHECK(std::abs(spdc_state(7.3, 189).schmidt_number() - 7.3) < 1e-6);

    CHECK_THROWS_AS(spdc_state(31.0, 30), InfeasibleSpectrumError);
    CHECK_THROWS_AS(spdc_state(0.5, 30), DomainError);
    CHECK_THROWS_AS(spdc_state(2.5, 30, SpectrumKind::EqualWeight), DomainError);
}

TEST_CASE("herald examples") {
    const TwoPhotonState s = spdc_state(15.0, 30);
    Eigen::VectorXcd e0 = Eigen::VectorXcd::Zero(30);
    e0(0) = 1.0;
    const HeraldedState h0 = herald(s, e0);
    CHECK(std::abs(h0.coeffs(0) - 1.0) < 1e-12);
    CHECK(h0.coeffs.tail(29).norm() < 1e-12);
    CHECK(h0.herald_probability == doctest::Approx(s.schmidt_coeffs[0]));

    const TwoPhotonState k2 = spdc_state(2.0, 4, SpectrumKind::EqualWeight);
    Eigen::VectorXcd hm = Eigen::VectorXcd::Zero(4);
    hm(0) = hm(1) = 1.0 / std::sqrt(2.0);
    const HeraldedState h2 = herald(k2, hm);
    CHECK(std::abs(h2.coeffs(0) - 1.0 / std::sqrt(2.0)) < 1e-12);
    CHECK(std::abs(h2.coeffs(1) - 1.0 / std::sqrt(2.0)) < 1e-12);
    CHECK(h2.herald_probability == doctest::Approx(0.5));

    Rng rng = make_rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXcd r(30);
        for (int i = 0; i < 30; ++i) r(i) = cd(uniform(rng, -1, 1), uniform(rng, -1, 1));
        CHECK(std::abs(herald(s, r.normalized()).coeffs.norm() - 1.0) < 1e-12);
    }

    Eigen::VectorXcd far = Eigen::VectorXcd::Zero(4);
    far(3) = 1.0;
    CHECK_THROWS_AS(herald(k2, far), ZeroProbabilityHeraldError);
    CHECK_THROWS_AS(herald(k2, 2.0 * hm), DomainError);
}

TEST_CASE("brute-force equivalence of singles, coincidence and heralded maps (N <= 4, K <= 2)") {
    const ScanGrid scan{0.5, -0.5, 1.5, 5, 5};
    const double wd = 2.0;
    const oracle::Grid og{120.0, 256};

    struct Case {
        int n;
        double k;
        SpectrumKind kind;
    };
    for (const Case c : {Case{2, 2.0, SpectrumKind::EqualWeight}, Case{2, 1.0, SpectrumKind::Geometric},
                         Case{4, 2.0, SpectrumKind::EqualWeight}, Case{4, 1.6, SpectrumKind::Geometric}}) {
        CAPTURE(c.n);
        CAPTURE(c.k);
        const ModeBasis b = small_basis(c.n);
        const TwoPhotonState st = spdc_state(c.k, c.n, c.kind);
        Eigen::MatrixXcd t = random_segment_unitary(c.n, 100 + c.n);
        if (c.n == 2) {
            const double th = 0.7, ph = 1.1;
            t << std::cos(th), -std::sin(th) * std::polar(1.0, -ph), std::sin(th) * std::polar(1.0, ph), std::cos(th);
        }
        const DetectorSpec fixed{-3.0, 2.0, wd, DetectorRole::Fixed};

        auto dets = scan_detectors(scan, wd);
        dets.push_back({fixed.x_um, fixed.y_um, wd});
        const int active = c.n;  // every Schmidt term, including zero weights
        const Eigen::MatrixXcd amps = oracle::collected(dets, t, b.waist_um(), og, active);
        const int fixed_row = scan.size();

        const DetectionMap s = singles_map(st, t, b, scan, wd);
        const CoincidenceMap cm = coincidence_map(st, t, b, fixed, scan, wd);
        Eigen::VectorXcd hmode = detector_vector(b, {2.0, 1.0, wd, DetectorRole::Heralding});
        hmode.normalize();
        const HeraldedState h = herald(st, hmode);
        const CoincidenceMap hm = heralded_coincidence_map(st, h, t, b, scan, wd);
        std::vector<cd> hc(h.coeffs.data(), h.coeffs.data() + h.coeffs.size());

        for (int p = 0; p < scan.size(); ++p) {
            CHECK(std::abs(s.values[p] - oracle::singles(st.schmidt_coeffs, amps, p)) < 1e-10);
            CHECK(std::abs(cm.values[p] - oracle::coincidences(st.schmidt_coeffs, amps, p, fixed_row)) < 1e-10);
            CHECK(std::abs(hm.values[p] - oracle::heralded(hc, h.herald_probability, amps, p)) < 1e-10);
            CHECK(cm.values[p] >= 0.0);
        }
    }
}

TEST_CASE("coincidences are symmetric under swapping detectors") {
    const ModeBasis b = small_basis(30);
    const TwoPhotonState st = spdc_state(15.0, 30);
    const Eigen::MatrixXcd t = random_segment_unitary(30, 9);
    const ScanGrid one_a{4.0, 0.0, 1.0, 1, 1};
    const ScanGrid one_b{-3.0, 5.0, 1.0, 1, 1};
    const double ab = coincidence_map(st, t, b, {-3.0, 5.0, 2.0, DetectorRole::Fixed}, one_a, 2.0).values[0];
    const double ba = coincidence_map(st, t, b, {4.0, 0.0, 2.0, DetectorRole::Fixed}, one_b, 2.0).values[0];
    CHECK(std::abs(ab - ba) < 1e-12);
}

TEST_CASE("single Schmidt mode: singles are collected intensities, coincidences factorize") {
    const ModeBasis b = small_basis(30);
    const TwoPhotonState st = spdc_state(1.0, 30);
    const Eigen::MatrixXcd t = random_segment_unitary(30, 4);
    const ScanGrid scan{0.0, 0.0, 2.0, 7, 7};
    const DetectorSpec fixed{2.0, -2.0, 2.0, DetectorRole::Fixed};
    const DetectionMap s = singles_map(st, t, b, scan, 2.0);
    const CoincidenceMap c = coincidence_map(st, t, b, fixed, scan, 2.0);
    const double s_fixed = std::norm(detector_vector(b, fixed).dot(t.col(0)));
    for (int p = 0; p < scan.size(); ++p) {
        const Eigen::VectorXcd d = detector_vector(b, {scan.x(p), scan.y(p), 2.0, DetectorRole::Scanning});
        CHECK(s.values[p] == doctest::Approx(std::norm(d.dot(t.col(0)))).epsilon(1e-9));
        CHECK(c.values[p] == doctest::Approx(s.values[p] * s_fixed).epsilon(1e-9));
    }
}

TEST_CASE("identity fiber: fundamental-mode singles peak at the centre") {
    const ModeBasis b = small_basis(30);
    const TwoPhotonState st = spdc_state(1.0, 30);
    const Eigen::MatrixXcd t = Eigen::MatrixXcd::Identity(30, 30);
    const ScanGrid scan{0.0, 0.0, 1.0, 9, 9};
    const DetectionMap s = singles_map(st, t, b, scan, 2.0);
    const auto peak = std::max_element(s.values.begin(), s.values.end()) - s.values.begin();
    CHECK(peak == scan.nearest(0.0, 0.0));

    Eigen::VectorXcd e0 = Eigen::VectorXcd::Zero(30);
    e0(0) = 1.0;
    const HeraldedState h = herald(st, e0);
    const CoincidenceMap hm = heralded_coincidence_map(st, h, t, b, scan, 2.0);
    for (int p = 0; p < scan.size(); ++p) CHECK(std::abs(hm.values[p] - s.values[p]) < 1e-14);
}

TEST_CASE("dimension mismatches are rejected") {
    const ModeBasis b = small_basis(30);
    const TwoPhotonState st = spdc_state(2.0, 30);
    const ScanGrid scan{};
    CHECK_THROWS_AS(singles_map(st, Eigen::MatrixXcd::Identity(10, 10), b, scan, 2.0), DimensionError);
    CHECK_THROWS_AS(heralded_coincidence_map(st, HeraldedState{Eigen::VectorXcd::Ones(3), 1.0},
                                             Eigen::MatrixXcd::Identity(30, 30), b, scan, 2.0),
                    DimensionError);
}

TEST_CASE("contrast examples") {
    const std::vector<double> constant(10, 3.0);
    CHECK(contrast(constant) == 0.0);
    std::mt19937_64 rng(5);
    std::exponential_distribution<double> ex(0.5);
    std::vector<double> speckle(10000);
    for (double& x : speckle) x = ex(rng);
    CHECK(contrast(speckle) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(contrast(speckle) == doctest::Approx(oracle::pop_std(speckle) / oracle::mean(speckle)).epsilon(1e-12));
    CHECK_THROWS_AS(contrast(std::vector<double>{1.0}), DomainError);
    CHECK_THROWS_AS(contrast(std::vector<double>{0.0, 0.0}), DegenerateError);
}

TEST_CASE("schmidt estimate examples") {
    CHECK(schmidt_estimate(1.0 / std::sqrt(18.0), 1.0 / std::sqrt(1.2)) == doctest::Approx(15.0));
    for (double k : {1.0, 4.0, 15.0}) CHECK(schmidt_estimate(1.0 / std::sqrt(k), 1.0) == doctest::Approx(k));
    CHECK_THROWS_AS(schmidt_estimate(0.0, 1.0), DomainError);
    CHECK_THROWS_AS(schmidt_estimate(0.3, -1.0), DomainError);
}

TEST_CASE("finite-N Haar singles contrast agrees with Monte Carlo over Haar unitaries") {
    // Independent of the fiber model: draw Haar T directly, singles at one fixed detector vector.
    const int n = 30;
    for (int k : {1, 5, 15}) {
        std::vector<double> s;
        const Eigen::VectorXcd d = Eigen::VectorXcd::Unit(n, 3);
        for (std::uint64_t trial = 0; trial < 4000; ++trial) {
            const Eigen::MatrixXcd t = random_segment_unitary(n, derive_seed(8, trial));
            double v = 0.0;
            for (int a = 0; a < k; ++a) v += std::norm(d.dot(t.col(a))) / k;
            s.push_back(v);
        }
        const double c = oracle::pop_std(s) / oracle::mean(s);
        CAPTURE(k);
        CHECK(c == doctest::Approx(haar_singles_contrast(k, n)).epsilon(0.06));
    }
    CHECK(haar_singles_contrast(15.0, 1000000) == doctest::Approx(1.0 / std::sqrt(15.0)).epsilon(1e-5));
}

TEST_CASE("geometric spectra: coincidence contrast exceeds singles contrast") {
    const int n = 30;
    const TwoPhotonState st = spdc_state(6.0, n);
    const Eigen::VectorXcd d1 = Eigen::VectorXcd::Unit(n, 2), d2 = Eigen::VectorXcd::Unit(n, 7);
    std::vector<double> s, c;
    for (std::uint64_t trial = 0; trial < 1000; ++trial) {
        const Eigen::MatrixXcd t = random_segment_unitary(n, derive_seed(21, trial));
        const Eigen::VectorXcd a1 = t.adjoint() * d1, a2 = t.adjoint() * d2;
        Eigen::VectorXcd x1(n), x2(n);
        for (int a = 0; a < n; ++a) {
            x1(a) = std::conj(a1(a));
            x2(a) = std::conj(a2(a));
        }
        s.push_back(singles_rate(st, x1));
        c.push_back(coincidence_rate(st, x1, x2));
    }
    CHECK(contrast(c) > contrast(s));
}

TEST_CASE("poisson counts") {
    Rng rng = make_rng(3);
    CHECK(poisson_counts(0.0, 5.0, rng) == 0);
    const long long big = poisson_counts(1e5, 10.0, rng);
    CHECK(std::abs(static_cast<double>(big) - 1e6) < 5.0 * 1e3);
    double total = 0.0;
    for (int i = 0; i < 10000; ++i) total += static_cast<double>(poisson_counts(10.0, 5.0, rng));
    CHECK(total / 10000 == doctest::Approx(50.0).epsilon(1.5 / 50.0));
    Rng a = make_rng(9), b = make_rng(9);
    CHECK(poisson_counts(37.0, 1.0, a) == poisson_counts(37.0, 1.0, b));
    CHECK_THROWS_AS(poisson_counts(-1.0, 1.0, rng), DomainError);
    CHECK_THROWS_AS(poisson_counts(1.0, 0.0, rng), DomainError);
}
