// Test-only reference implementations, independent of the
// library code paths they are used to check.

#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace dcav::oracle {

/// Element M01 of the characteristic matrix of diamond (index n, on the
/// mirror) followed by air. With both outer boundaries perfectly reflecting
/// (E = 0), a mode exists exactly where this element vanishes.
inline double characteristic_element(double lambda_nm, double air_gap_nm, double thickness_nm,
                                     double n)
{
    using cd = std::complex<double>;
    const cd i(0.0, 1.0);
    const double k = 2.0 * std::numbers::pi / lambda_nm;
    auto layer = [&](double index, double thickness) {
        const double delta = k * index * thickness;
        struct M { cd a, b, c, d; };
        return M{std::cos(delta), i * std::sin(delta) / index, i * index * std::sin(delta),
                 std::cos(delta)};
    };
    const auto d = layer(n, thickness_nm);
    const auto a = layer(1.0, air_gap_nm);
    const cd m01 = d.a * a.b + d.b * a.d;
    return m01.imag();
}

/// Dense wavelength scan followed by plain bisection on every sign change.
inline std::vector<double> brute_force_resonances(double air_gap_nm, double thickness_nm, double n,
                                                  double lower_nm, double upper_nm,
                                                  double step_nm = 1e-3)
{
    std::vector<double> roots;
    auto f = [&](double l) { return characteristic_element(l, air_gap_nm, thickness_nm, n); };
    const auto steps = static_cast<long>(std::ceil((upper_nm - lower_nm) / step_nm));
    double x0 = lower_nm;
    double f0 = f(x0);
    if (f0 == 0.0) roots.push_back(x0);
    for (long s = 1; s <= steps; ++s) {
        const double x1 = std::min(upper_nm, lower_nm + s * step_nm);
        const double f1 = f(x1);
        if (f1 == 0.0) {
            roots.push_back(x1);
        } else if (f0 != 0.0 && (f0 < 0.0) != (f1 < 0.0)) {
            double lo = x0, hi = x1, flo = f0;
            for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = f(mid);
                if (fm == 0.0) { lo = hi = mid; break; }
                if ((fm < 0.0) == (flo < 0.0)) { lo = mid; flo = fm; } else { hi = mid; }
            }
            roots.push_back(0.5 * (lo + hi));
        }
        x0 = x1;
        f0 = f1;
    }
    return roots;
}

}  // namespace dcav::oracle
