#include "fiberpiano/modes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fiberpiano/errors.hpp"

namespace fiberpiano {

namespace {

constexpr double kPi = std::numbers::pi;

// Gaussian collection modes are negligible (< 1e-15 relative) beyond this many waists.
constexpr double kWindowWaists = 6.0;

struct PixelWindow {
    int x0, x1, y0, y1;  // inclusive-exclusive
};

PixelWindow window_around(const GridSpec& grid, double x_um, double y_um, double radius_um) {
    const double dx = grid.spacing_um();
    const int n = grid.samples_per_side;
    auto lo = [&](double c) {
        return std::clamp(static_cast<int>(std::floor((c - radius_um + 0.5 * grid.side_um) / dx)), 0, n);
    };
    auto hi = [&](double c) {
        return std::clamp(static_cast<int>(std::ceil((c + radius_um + 0.5 * grid.side_um) / dx)) + 1, 0, n);
    };
    return {lo(x_um), hi(x_um), lo(y_um), hi(y_um)};
}

double gaussian_collection(const DetectorSpec& det, double x, double y) {
    const double w = det.collection_radius_um;
    const double r2 = (x - det.x_um) * (x - det.x_um) + (y - det.y_um) * (y - det.y_um);
    return std::sqrt(2.0 / kPi) / w * std::exp(-r2 / (w * w));
}

void require_inside(const DetectorSpec& det, const GridSpec& grid) {
    if (!(det.collection_radius_um > 0.0))
        throw DomainError("detector collection radius must be positive");
    if (!grid.contains(det.x_um, det.y_um))
        throw GeometryError("detector at (" + std::to_string(det.x_um) + ", " + std::to_string(det.y_um) +
                            ") um lies outside the " + std::to_string(grid.side_um) + " um grid");
}

double log_factorial(int n) { return std::lgamma(static_cast<double>(n) + 1.0); }

}  // namespace

double FiberSpec::v_number() const { return 2.0 * kPi * core_radius_um * numerical_aperture / wavelength_um(); }

int FiberSpec::mode_capacity() const {
    const double v = v_number();
    return static_cast<int>(std::floor(v * v / 8.0));
}

double FiberSpec::fundamental_waist_um() const {
    return std::sqrt(core_radius_um * wavelength_um() / (kPi * numerical_aperture));
}

std::vector<ModeLabel> enumerate_modes(int count) {
    std::vector<ModeLabel> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int group = 0; static_cast<int>(out.size()) < count; ++group) {
        // |l| = group, group-2, ..., so p = (group - |l|) / 2. Ascending |l|, +l before -l.
        for (int al = group % 2; al <= group && static_cast<int>(out.size()) < count; al += 2) {
            const int p = (group - al) / 2;
            out.push_back({p, al});
            if (al != 0 && static_cast<int>(out.size()) < count) out.push_back({p, -al});
        }
    }
    return out;
}

cd ModeBasis::value(int n, double x_um, double y_um) const {
    const ModeLabel m = modes_.at(static_cast<std::size_t>(n));
    const int al = std::abs(m.l);
    const double w = waist_um_;
    const double r2 = (x_um * x_um + y_um * y_um) / (w * w);
    const double norm = std::exp(0.5 * (std::log(2.0 / kPi) + log_factorial(m.p) - log_factorial(m.p + al))) / w;
    const double radial = norm * std::pow(2.0 * r2, 0.5 * al) *
                          std::assoc_laguerre(static_cast<unsigned>(m.p), static_cast<unsigned>(al), 2.0 * r2) *
                          std::exp(-r2);
    if (m.l == 0) return {radial, 0.0};
    return std::polar(radial, m.l * std::atan2(y_um, x_um));
}

Eigen::MatrixXcd ModeBasis::gram(int count) const {
    if (count < 0 || count > size()) throw DimensionError("gram: requested more modes than the basis holds");
    const auto block = profiles_.leftCols(count);
    return (block.adjoint() * block) * grid_.pixel_area_um2();
}

Eigen::VectorXcd ModeBasis::project(const ComplexField& field) const {
    if (!(field.grid == grid_)) throw DimensionError("project: field grid does not match the basis grid");
    return (profiles_.adjoint() * field.values) * grid_.pixel_area_um2();
}

ModeBasis build_mode_basis(const FiberSpec& fiber, const GridSpec& grid) {
    if (!(fiber.core_radius_um > 0.0)) throw DomainError("fiber.core_radius_um must be positive");
    if (!(fiber.numerical_aperture > 0.0 && fiber.numerical_aperture < 1.0))
        throw DomainError("fiber.numerical_aperture must lie in (0, 1)");
    if (!(fiber.wavelength_nm > 0.0)) throw DomainError("fiber.wavelength_nm must be positive");
    if (fiber.mode_truncation < 1) throw DomainError("fiber.mode_truncation must be at least 1");

    const int capacity = fiber.mode_capacity();
    if (fiber.mode_truncation > capacity)
        throw CapacityError("mode_truncation " + std::to_string(fiber.mode_truncation) +
                            " exceeds fiber capacity " + std::to_string(capacity));

    const double waist = fiber.fundamental_waist_um();
    if (grid.samples_per_side < 64)
        throw ResolutionError("grid needs at least 64 samples per side, got " +
                              std::to_string(grid.samples_per_side));
    if (!(grid.side_um >= 3.0 * waist))
        throw ResolutionError("grid side " + std::to_string(grid.side_um) + " um is smaller than 3 fundamental waists");
    if (waist / grid.spacing_um() < 8.0)
        throw ResolutionError("fewer than 8 samples across the fundamental waist (" + std::to_string(waist) +
                              " um at spacing " + std::to_string(grid.spacing_um()) + " um)");

    ModeBasis basis;
    basis.fiber_ = fiber;
    basis.grid_ = grid;
    basis.capacity_ = capacity;
    basis.waist_um_ = waist;
    basis.modes_ = enumerate_modes(fiber.mode_truncation);

    const int n = grid.samples_per_side;
    basis.profiles_.resize(static_cast<Eigen::Index>(grid.pixel_count()), basis.size());
    for (int mode = 0; mode < basis.size(); ++mode) {
        for (int iy = 0; iy < n; ++iy) {
            const double y = grid.coordinate(iy);
            for (int ix = 0; ix < n; ++ix)
                basis.profiles_(iy * n + ix, mode) = basis.value(mode, grid.coordinate(ix), y);
        }
    }
    return basis;
}

ComplexField render_field(const Eigen::VectorXcd& coeffs, const ModeBasis& basis) {
    if (coeffs.size() != basis.size())
        throw DimensionError("render_field: expected " + std::to_string(basis.size()) + " coefficients, got " +
                             std::to_string(coeffs.size()));
    return {basis.grid(), basis.profiles() * coeffs};
}

ComplexField collection_mode(const DetectorSpec& detector, const GridSpec& grid) {
    require_inside(detector, grid);
    const int n = grid.samples_per_side;
    ComplexField g{grid, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(grid.pixel_count()))};
    const auto win = window_around(grid, detector.x_um, detector.y_um, kWindowWaists * detector.collection_radius_um);
    for (int iy = win.y0; iy < win.y1; ++iy)
        for (int ix = win.x0; ix < win.x1; ++ix)
            g.values(iy * n + ix) = gaussian_collection(detector, grid.coordinate(ix), grid.coordinate(iy));
    return g;
}

cd collection_amplitude(const ComplexField& field, const DetectorSpec& detector) {
    const GridSpec& grid = field.grid;
    require_inside(detector, grid);
    const int n = grid.samples_per_side;
    const auto win = window_around(grid, detector.x_um, detector.y_um, kWindowWaists * detector.collection_radius_um);
    cd acc{0.0, 0.0};
    for (int iy = win.y0; iy < win.y1; ++iy)
        for (int ix = win.x0; ix < win.x1; ++ix)
            acc += gaussian_collection(detector, grid.coordinate(ix), grid.coordinate(iy)) * field.values(iy * n + ix);
    return acc * grid.pixel_area_um2();
}

Eigen::VectorXcd detector_vector(const ModeBasis& basis, const DetectorSpec& detector) {
    const GridSpec& grid = basis.grid();
    require_inside(detector, grid);
    const int n = grid.samples_per_side;
    const auto win = window_around(grid, detector.x_um, detector.y_um, kWindowWaists * detector.collection_radius_um);
    Eigen::VectorXcd d = Eigen::VectorXcd::Zero(basis.size());
    for (int iy = win.y0; iy < win.y1; ++iy) {
        for (int ix = win.x0; ix < win.x1; ++ix) {
            const double g = gaussian_collection(detector, grid.coordinate(ix), grid.coordinate(iy));
            d += g * basis.profiles().row(iy * n + ix).adjoint();
        }
    }
    return d * grid.pixel_area_um2();
}

}  // namespace fiberpiano
