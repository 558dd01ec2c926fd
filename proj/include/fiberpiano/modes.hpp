#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace fiberpiano {

using cd = std::complex<double>;

/// Parabolic graded-index fiber. Lengths in micrometres, wavelength in nanometres.
struct FiberSpec {
    double core_radius_um = 25.0;
    double numerical_aperture = 0.2;
    double wavelength_nm = 807.6;
    int mode_truncation = 30;

    double wavelength_um() const { return wavelength_nm * 1e-3; }
    /// Normalized frequency V = 2 pi a NA / lambda.
    double v_number() const;
    /// Scalar guided modes per polarization, floor(V^2 / 8).
    int mode_capacity() const;
    /// 1/e field radius of the fundamental mode of the parabolic profile, sqrt(a lambda / (pi NA)).
    double fundamental_waist_um() const;

    bool operator==(const FiberSpec&) const = default;
};

/// Square sampling grid centred on the fiber axis.
struct GridSpec {
    double side_um = 120.0;
    int samples_per_side = 256;

    double spacing_um() const { return side_um / samples_per_side; }
    double pixel_area_um2() const { return spacing_um() * spacing_um(); }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(samples_per_side) * static_cast<std::size_t>(samples_per_side);
    }
    /// Coordinate of sample i along either axis (pixel centres, symmetric about 0).
    double coordinate(int i) const { return (i + 0.5) * spacing_um() - 0.5 * side_um; }
    bool contains(double x_um, double y_um) const {
        return std::abs(x_um) <= 0.5 * side_um && std::abs(y_um) <= 0.5 * side_um;
    }

    bool operator==(const GridSpec&) const = default;
};

/// Laguerre-Gauss label: radial index p, azimuthal index l.
struct ModeLabel {
    int p = 0;
    int l = 0;

    int group() const { return 2 * p + (l < 0 ? -l : l); }
    bool operator==(const ModeLabel&) const = default;
};

/// Complex field sampled on a grid. Row-major: index = iy * samples + ix.
struct ComplexField {
    GridSpec grid;
    Eigen::VectorXcd values;

    /// Integrated power sum |E|^2 dA.
    double power() const { return values.squaredNorm() * grid.pixel_area_um2(); }
};

/// Ordered LG eigenbasis of the parabolic-index fiber, sampled on a grid.
///
/// Modes are sorted by group order 2p+|l|, then |l|, then positive l before negative.
/// Sampled profiles are analytically normalized (not re-orthogonalized) so the Gram matrix on
/// the grid measures quadrature error directly.
class ModeBasis {
public:
    const FiberSpec& fiber() const { return fiber_; }
    const GridSpec& grid() const { return grid_; }
    const std::vector<ModeLabel>& modes() const { return modes_; }
    int size() const { return static_cast<int>(modes_.size()); }
    int capacity() const { return capacity_; }
    double waist_um() const { return waist_um_; }

    /// Analytic value of mode n at (x, y) in micrometres.
    cd value(int n, double x_um, double y_um) const;

    /// Sampled profiles, pixels x modes.
    const Eigen::MatrixXcd& profiles() const { return profiles_; }

    /// Grid inner products <phi_i | phi_j> for the first `count` modes.
    Eigen::MatrixXcd gram(int count) const;

    /// Coefficients <phi_n | field> by grid quadrature.
    Eigen::VectorXcd project(const ComplexField& field) const;

private:
    friend ModeBasis build_mode_basis(const FiberSpec&, const GridSpec&);

    FiberSpec fiber_;
    GridSpec grid_;
    std::vector<ModeLabel> modes_;
    int capacity_ = 0;
    double waist_um_ = 0.0;
    Eigen::MatrixXcd profiles_;
};

/// Enumerates the first `count` LG labels in basis order.
std::vector<ModeLabel> enumerate_modes(int count);

/// Builds the mode basis. Throws CapacityError if mode_truncation exceeds capacity,
/// ResolutionError if the grid is too coarse or too small, DomainError on invalid fiber params.
ModeBasis build_mode_basis(const FiberSpec& fiber, const GridSpec& grid);

/// field = sum_n coeffs_n phi_n. Throws DimensionError on length mismatch.
ComplexField render_field(const Eigen::VectorXcd& coeffs, const ModeBasis& basis);

enum class DetectorRole { Heralding, Fixed, Scanning };

/// Single-photon detector behind a collection fiber, modelled as a Gaussian collection mode.
/// Position and waist are in fiber-facet micrometres.
struct DetectorSpec {
    double x_um = 0.0;
    double y_um = 0.0;
    double collection_radius_um = 2.0;
    DetectorRole role = DetectorRole::Scanning;

    bool operator==(const DetectorSpec&) const = default;
};

/// Unit-norm Gaussian collection mode of the detector, sampled on `grid`.
ComplexField collection_mode(const DetectorSpec& detector, const GridSpec& grid);

/// <g_det | field> by grid quadrature. Throws GeometryError if the detector lies outside the grid.
cd collection_amplitude(const ComplexField& field, const DetectorSpec& detector);

/// Mode-space image of the collection mode: d_n = <phi_n | g_det>.
/// For any coefficient vector c, <g_det | render(c)> = d^H c.
Eigen::VectorXcd detector_vector(const ModeBasis& basis, const DetectorSpec& detector);

}  // namespace fiberpiano
