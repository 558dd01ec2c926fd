#include "fiberpiano/fiber.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fiberpiano/errors.hpp"
#include "fiberpiano/random.hpp"

namespace fiberpiano {

namespace {

Eigen::MatrixXcd ginibre(int n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    Eigen::MatrixXcd z(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const double re = normal(rng);
            const double im = normal(rng);
            z(i, j) = cd(re, im);
        }
    return z;
}

void require_stroke(double v) {
    if (!(v >= -1.0 && v <= 1.0)) throw DomainError("actuator stroke " + std::to_string(v) + " outside [-1, 1]");
}

}  // namespace

Eigen::MatrixXcd random_segment_unitary(int n, std::uint64_t seed) {
    if (n < 1) throw DimensionError("random_segment_unitary: n must be at least 1");
    Rng rng = make_rng(seed);
    const Eigen::MatrixXcd z = ginibre(n, rng);
    const Eigen::HouseholderQR<Eigen::MatrixXcd> qr(z);
    Eigen::MatrixXcd q = qr.householderQ();
    const Eigen::MatrixXcd& r = qr.matrixQR();
    // Fix the phase of each column by arg(R_jj) so the distribution is exactly Haar.
    for (int j = 0; j < n; ++j) {
        const cd rjj = r(j, j);
        const double mag = std::abs(rjj);
        q.col(j) *= (mag > 0.0 ? rjj / mag : cd(1.0, 0.0));
    }
    return q;
}

ActuatorBank build_actuator_bank(int n, int count, double coupling_strength, double loss_coefficient,
                                 std::uint64_t seed, LossModel loss_model) {
    if (n < 1) throw DimensionError("build_actuator_bank: n must be at least 1");
    if (count < 1) throw DomainError("build_actuator_bank: count must be at least 1");
    if (!(coupling_strength > 0.0)) throw DomainError("build_actuator_bank: coupling strength must be positive");
    if (!(loss_coefficient >= 0.0)) throw DomainError("build_actuator_bank: loss coefficient must be non-negative");

    ActuatorBank bank;
    bank.modes = n;
    bank.coupling_strength = coupling_strength;
    bank.loss_coefficient = loss_coefficient;
    bank.loss_model = loss_model;
    bank.seed = seed;
    bank.actuators.reserve(static_cast<std::size_t>(count));

    for (int k = 0; k < count; ++k) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
        const Eigen::MatrixXcd g = ginibre(n, rng);
        Eigen::MatrixXcd h = 0.5 * (g + g.adjoint());

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(h);
        const double op_norm = eig.eigenvalues().cwiseAbs().maxCoeff();
        const double scale = op_norm > 0.0 ? coupling_strength / op_norm : coupling_strength;

        Actuator a;
        a.generator = h * scale;
        a.eigenvectors = eig.eigenvectors();
        a.eigenvalues = eig.eigenvalues() * scale;
        if (n == 1 && op_norm == 0.0) {
            a.generator(0, 0) = coupling_strength;
            a.eigenvalues(0) = coupling_strength;
        }
        if (loss_model == LossModel::ModeDependent) {
            a.loss_basis = random_segment_unitary(n, derive_seed(seed, static_cast<std::uint64_t>(k), 1));
            a.loss_rates.resize(n);
            for (int m = 0; m < n; ++m) a.loss_rates(m) = 2.0 * loss_coefficient * uniform01(rng);
        }
        bank.actuators.push_back(std::move(a));
    }
    return bank;
}

Displacements::Displacements(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) require_stroke(v);
}

Displacements random_displacements(int count, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::vector<double> v(static_cast<std::size_t>(count));
    for (double& x : v) x = uniform(rng, -1.0, 1.0);
    return Displacements(std::move(v));
}

FiberModel::FiberModel(ActuatorBank bank, std::uint64_t segment_seed)
    : bank_(std::move(bank)), segment_seed_(segment_seed) {
    const int segments = bank_.count() + 1;
    segments_.reserve(static_cast<std::size_t>(segments));
    segments_adjoint_.reserve(static_cast<std::size_t>(segments));
    for (int j = 0; j < segments; ++j) {
        segments_.push_back(random_segment_unitary(bank_.modes, derive_seed(segment_seed_, static_cast<std::uint64_t>(j))));
        segments_adjoint_.push_back(segments_.back().adjoint());
    }
}

void FiberModel::check(std::span<const double> v, Eigen::Index rows) const {
    if (static_cast<int>(v.size()) != bank_.count())
        throw DimensionError("expected " + std::to_string(bank_.count()) + " actuator strokes, got " +
                             std::to_string(v.size()));
    if (rows != bank_.modes)
        throw DimensionError("expected vectors over " + std::to_string(bank_.modes) + " modes, got " +
                             std::to_string(rows));
    for (double x : v) require_stroke(x);
}

void FiberModel::apply_actuator(int k, double v, Eigen::MatrixXcd& x, bool adjoint) const {
    const Actuator& a = bank_.actuators[static_cast<std::size_t>(k)];
    const double beta = bank_.loss_coefficient;

    auto apply_loss = [&] {
        if (beta == 0.0 || v == 0.0) return;
        if (bank_.loss_model == LossModel::Uniform) {
            x *= std::exp(-0.5 * beta * v * v);
        } else {
            Eigen::MatrixXcd rotated = a.loss_basis.adjoint() * x;
            for (Eigen::Index m = 0; m < rotated.rows(); ++m)
                rotated.row(m) *= std::exp(-0.5 * a.loss_rates(m) * v * v);
            x.noalias() = a.loss_basis * rotated;
        }
    };
    auto apply_unitary = [&] {
        if (v == 0.0) return;
        Eigen::MatrixXcd rotated = a.eigenvectors.adjoint() * x;
        const double sign = adjoint ? -1.0 : 1.0;
        for (Eigen::Index m = 0; m < rotated.rows(); ++m)
            rotated.row(m) *= std::polar(1.0, sign * v * a.eigenvalues(m));
        x.noalias() = a.eigenvectors * rotated;
    };

    // T contains L(v) U(v); its adjoint contains U(v)^H L(v), L being Hermitian.
    if (adjoint) {
        apply_loss();
        apply_unitary();
    } else {
        apply_unitary();
        apply_loss();
    }
}

Eigen::MatrixXcd FiberModel::propagate(std::span<const double> v, const Eigen::MatrixXcd& inputs) const {
    check(v, inputs.rows());
    Eigen::MatrixXcd x = segments_[0] * inputs;
    Eigen::MatrixXcd next(x.rows(), x.cols());
    for (int k = 0; k < bank_.count(); ++k) {
        apply_actuator(k, v[static_cast<std::size_t>(k)], x, false);
        next.noalias() = segments_[static_cast<std::size_t>(k) + 1] * x;
        x.swap(next);
    }
    return x;
}

Eigen::MatrixXcd FiberModel::propagate_adjoint(std::span<const double> v, const Eigen::MatrixXcd& outputs) const {
    check(v, outputs.rows());
    const int count = bank_.count();
    Eigen::MatrixXcd x = segments_adjoint_[static_cast<std::size_t>(count)] * outputs;
    Eigen::MatrixXcd next(x.rows(), x.cols());
    for (int k = count - 1; k >= 0; --k) {
        apply_actuator(k, v[static_cast<std::size_t>(k)], x, true);
        next.noalias() = segments_adjoint_[static_cast<std::size_t>(k)] * x;
        x.swap(next);
    }
    return x;
}

TransmissionMatrix FiberModel::assemble(const Displacements& v) const {
    TransmissionMatrix tm;
    tm.matrix = propagate(v.values(), Eigen::MatrixXcd::Identity(bank_.modes, bank_.modes));
    tm.bank_seed = bank_.seed;
    tm.segment_seed = segment_seed_;
    tm.displacements.assign(v.values().begin(), v.values().end());
    return tm;
}

Eigen::MatrixXcd FiberModel::loss_operator(int k, double v) const {
    Eigen::MatrixXcd x = Eigen::MatrixXcd::Identity(bank_.modes, bank_.modes);
    const Actuator& a = bank_.actuators.at(static_cast<std::size_t>(k));
    const double beta = bank_.loss_coefficient;
    if (bank_.loss_model == LossModel::Uniform) return x * std::exp(-0.5 * beta * v * v);
    Eigen::VectorXd diag(bank_.modes);
    for (int m = 0; m < bank_.modes; ++m) diag(m) = std::exp(-0.5 * a.loss_rates(m) * v * v);
    return a.loss_basis * diag.asDiagonal() * a.loss_basis.adjoint();
}

Eigen::MatrixXcd FiberModel::perturbation(int k, double v) const {
    const Actuator& a = bank_.actuators.at(static_cast<std::size_t>(k));
    Eigen::VectorXcd phases(bank_.modes);
    for (int m = 0; m < bank_.modes; ++m) phases(m) = std::polar(1.0, v * a.eigenvalues(m));
    return a.eigenvectors * phases.asDiagonal() * a.eigenvectors.adjoint();
}

TransmissionMatrix assemble_tm(const ActuatorBank& bank, const Displacements& v, std::uint64_t segment_seed) {
    return FiberModel(bank, segment_seed).assemble(v);
}

SpeckleCorrelation speckle_correlation(const Eigen::MatrixXcd& t1, const Eigen::MatrixXcd& t2,
                                       const Eigen::VectorXcd& input, const ModeBasis& basis) {
    const Eigen::Index n = basis.size();
    if (t1.rows() != n || t1.cols() != n || t2.rows() != n || t2.cols() != n || input.size() != n)
        throw DimensionError("speckle_correlation: matrices and input must match the basis size");

    const Eigen::VectorXd i1 = render_field(t1 * input, basis).values.cwiseAbs2();
    const Eigen::VectorXd i2 = render_field(t2 * input, basis).values.cwiseAbs2();
    const Eigen::VectorXd envelope = basis.profiles().rowwise().squaredNorm() / static_cast<double>(n);
    const double cutoff = 1e-3 * envelope.maxCoeff();

    double env_sum = 0.0, sum1 = 0.0, sum2 = 0.0;
    for (Eigen::Index p = 0; p < envelope.size(); ++p) {
        if (envelope(p) < cutoff) continue;
        env_sum += envelope(p);
        sum1 += i1(p);
        sum2 += i2(p);
    }
    if (!(env_sum > 0.0) || !(sum1 > 0.0) || !(sum2 > 0.0))
        throw DegenerateError("speckle_correlation: output pattern carries no power");

    const double scale1 = sum1 / env_sum;
    const double scale2 = sum2 / env_sum;
    double cross = 0.0, var1 = 0.0, var2 = 0.0, energy1 = 0.0, energy2 = 0.0;
    for (Eigen::Index p = 0; p < envelope.size(); ++p) {
        if (envelope(p) < cutoff) continue;
        const double d1 = i1(p) - scale1 * envelope(p);
        const double d2 = i2(p) - scale2 * envelope(p);
        cross += d1 * d2;
        var1 += d1 * d1;
        var2 += d2 * d2;
        energy1 += i1(p) * i1(p);
        energy2 += i2(p) * i2(p);
    }
    if (var1 <= 1e-24 * energy1 || var2 <= 1e-24 * energy2)
        throw DegenerateError("speckle_correlation: pattern has zero speckle variance");

    SpeckleCorrelation out;
    out.signed_value = cross / std::sqrt(var1 * var2);
    out.value = std::clamp(out.signed_value, 0.0, 1.0);
    return out;
}

CalibrationResult decorrelation_at(double coupling_strength, int count, double loss_coefficient,
                                   std::uint64_t seed, const ModeBasis& basis, const CalibrationTargets& targets) {
    const int n = basis.size();
    const FiberModel model(build_actuator_bank(n, count, coupling_strength, loss_coefficient, seed),
                           derive_seed(seed, 0x5E6D));
    Eigen::VectorXcd input = Eigen::VectorXcd::Zero(n);
    input(0) = 1.0;

    const Eigen::MatrixXcd rest = model.assemble(Displacements::zeros(count)).matrix;
    double full = 0.0, stroke = 0.0;
    for (int t = 0; t < targets.trials; ++t) {
        const auto v = random_displacements(count, derive_seed(seed, 0xCA1, static_cast<std::uint64_t>(t)));
        full += speckle_correlation(rest, model.assemble(v).matrix, input, basis).signed_value;

        std::vector<double> lo(static_cast<std::size_t>(count), 0.0), hi = lo;
        const auto k = static_cast<std::size_t>(t % count);
        lo[k] = -1.0;
        hi[k] = 1.0;
        stroke += speckle_correlation(model.assemble(Displacements(lo)).matrix,
                                      model.assemble(Displacements(hi)).matrix, input, basis)
                      .signed_value;
    }
    return {coupling_strength, full / targets.trials, stroke / targets.trials};
}

CalibrationResult calibrate_coupling_strength(int count, double loss_coefficient, std::uint64_t seed,
                                              const ModeBasis& basis, const CalibrationTargets& targets) {
    if (targets.trials < 1) throw DomainError("calibration needs at least one trial");
    auto meets = [&](const CalibrationResult& r) {
        return r.full_vector_correlation < targets.full_vector_correlation &&
               r.single_stroke_correlation < targets.single_stroke_correlation;
    };

    double lo = 0.0;
    double hi = 0.25;
    CalibrationResult best = decorrelation_at(hi, count, loss_coefficient, seed, basis, targets);
    while (!meets(best)) {
        lo = hi;
        hi *= 2.0;
        if (hi > 64.0) throw DomainError("calibration did not reach the decorrelation targets");
        best = decorrelation_at(hi, count, loss_coefficient, seed, basis, targets);
    }
    while (hi - lo > targets.tolerance) {
        const double mid = 0.5 * (lo + hi);
        const CalibrationResult r = decorrelation_at(mid, count, loss_coefficient, seed, basis, targets);
        if (meets(r)) {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }
    return best;
}

}  // namespace fiberpiano
