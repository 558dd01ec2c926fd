#pragma once

// Independent reference implementations used by the unit and acceptance tests. Nothing here
// calls into the library's numerical code paths: mode profiles come from the three-term Laguerre
// recurrence, collection overlaps from full-grid sums, and detection rates from explicit term
// expansions.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using cd = std::complex<double>;
constexpr double pi = std::numbers::pi;

/// Generalized Laguerre L_p^{a}(x) by upward recurrence.
inline double laguerre(int p, int a, double x) {
    if (p == 0) return 1.0;
    double prev = 1.0;
    double cur = 1.0 + a - x;
    for (int k = 1; k < p; ++k) {
        const double next = ((2.0 * k + 1.0 + a - x) * cur - (k + a) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    return cur;
}

/// Unit-norm LG mode with 1/e field radius w at (x, y).
inline cd lg_mode(int p, int l, double w, double x, double y) {
    const int a = std::abs(l);
    double fact_ratio = 1.0;  // p! / (p + |l|)!
    for (int k = p + 1; k <= p + a; ++k) fact_ratio /= k;
    const double r2 = (x * x + y * y) / (w * w);
    const double amp = std::sqrt(2.0 * fact_ratio / pi) / w * std::pow(std::sqrt(2.0 * r2), a) *
                       laguerre(p, a, 2.0 * r2) * std::exp(-r2);
    const double phi = std::atan2(y, x);
    return {amp * std::cos(l * phi), amp * std::sin(l * phi)};
}

struct Label {
    int p, l;
};

/// Group order, then |l|, then +l before -l.
inline std::vector<Label> labels(int count) {
    std::vector<Label> out;
    for (int g = 0; static_cast<int>(out.size()) < count; ++g) {
        std::vector<Label> group;
        for (int p = 0; 2 * p <= g; ++p) {
            const int a = g - 2 * p;
            group.push_back({p, a});
            if (a != 0) group.push_back({p, -a});
        }
        std::stable_sort(group.begin(), group.end(), [](const Label& x, const Label& y) {
            if (std::abs(x.l) != std::abs(y.l)) return std::abs(x.l) < std::abs(y.l);
            return x.l > y.l;
        });
        for (const auto& lab : group)
            if (static_cast<int>(out.size()) < count) out.push_back(lab);
    }
    return out;
}

struct Grid {
    double side;
    int n;
    double dx() const { return side / n; }
    double coord(int i) const { return (i + 0.5) * dx() - 0.5 * side; }
};

/// Unit-norm Gaussian collection mode of radius wd centred at (cx, cy).
inline double collection(double wd, double cx, double cy, double x, double y) {
    const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    return std::sqrt(2.0 / pi) / wd * std::exp(-r2 / (wd * wd));
}

struct Detector {
    double x, y, wd;
};

/// A(det, a) = sum over all pixels of g_det(pixel) * (T phi_{a})(pixel) dA, with modes sampled
/// from lg_mode. Columns of T are indexed by Schmidt mode a (identity embedding).
inline Eigen::MatrixXcd collected(const std::vector<Detector>& dets, const Eigen::MatrixXcd& t, double waist,
                                  const Grid& grid, int schmidt_modes) {
    const int n = static_cast<int>(t.rows());
    const auto labs = labels(n);
    Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dets.size()), schmidt_modes);
    const double da = grid.dx() * grid.dx();
    std::vector<cd> phi(static_cast<std::size_t>(n));
    for (int iy = 0; iy < grid.n; ++iy)
        for (int ix = 0; ix < grid.n; ++ix) {
            const double x = grid.coord(ix), y = grid.coord(iy);
            for (int m = 0; m < n; ++m) phi[static_cast<std::size_t>(m)] = lg_mode(labs[m].p, labs[m].l, waist, x, y);
            for (std::size_t d = 0; d < dets.size(); ++d) {
                const double g = collection(dets[d].wd, dets[d].x, dets[d].y, x, y);
                if (g == 0.0) continue;
                for (int a = 0; a < schmidt_modes; ++a) {
                    cd field = 0.0;
                    for (int m = 0; m < n; ++m) field += t(m, a) * phi[static_cast<std::size_t>(m)];
                    out(static_cast<Eigen::Index>(d), a) += g * field * da;
                }
            }
        }
    return out;
}

inline double singles(const std::vector<double>& lambda, const Eigen::MatrixXcd& amps, int det) {
    double s = 0.0;
    for (std::size_t a = 0; a < lambda.size(); ++a) {
        const cd v = amps(det, static_cast<Eigen::Index>(a));
        s += lambda[a] * (v.real() * v.real() + v.imag() * v.imag());
    }
    return s;
}

inline double coincidences(const std::vector<double>& lambda, const Eigen::MatrixXcd& amps, int d1, int d2) {
    cd amp = 0.0;
    for (std::size_t a = 0; a < lambda.size(); ++a)
        amp += std::sqrt(lambda[a]) * amps(d1, static_cast<Eigen::Index>(a)) * amps(d2, static_cast<Eigen::Index>(a));
    return std::norm(amp);
}

/// P_h |sum_a c_a A_a(det)|^2.
inline double heralded(const std::vector<cd>& c, double probability, const Eigen::MatrixXcd& amps, int det) {
    cd amp = 0.0;
    for (std::size_t a = 0; a < c.size(); ++a) amp += c[a] * amps(det, static_cast<Eigen::Index>(a));
    return probability * std::norm(amp);
}

/// Kolmogorov-Smirnov p-value for the one-sample test against U(lo, hi).
inline double ks_uniform_pvalue(std::vector<double> xs, double lo, double hi) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = (xs[i] - lo) / (hi - lo);
        d = std::max({d, (i + 1.0) / n - f, f - i / n});
    }
    const double sn = std::sqrt(n);
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    double q = 0.0;
    for (int k = 1; k <= 100; ++k) q += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    return std::clamp(q, 0.0, 1.0);
}

inline double mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

inline double pop_std(const std::vector<double>& x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace oracle
