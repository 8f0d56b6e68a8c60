#include "doctest.h"

#include "dcav/lineshape.hpp"
#include "dcav/lsq.hpp"
#include "dcav/rng.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <numbers>

using namespace dcav;

namespace {

// Direct convolution of area-normalized Gaussian and Lorentzian.
double voigt_by_quadrature(double x, double fwhm_l, double fwhm_g)
{
    const double sigma = fwhm_g / lineshape::kFwhmPerSigma;
    const double gamma = 0.5 * fwhm_l;
    auto integrand = [&](double t) {
        const double g = std::exp(-0.5 * t * t / (sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi));
        const double u = x - t;
        return g * gamma / (std::numbers::pi * (u * u + gamma * gamma));
    };
    // Split at the two peaks so the adaptive rule sees both structures.
    const double reach = 12.0 * sigma;
    double total = 0.0;
    const double cuts[] = {-reach, std::min(0.0, x), std::max(0.0, x), reach};
    for (int i = 0; i < 3; ++i) {
        if (cuts[i + 1] <= cuts[i]) continue;
        total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, cuts[i], cuts[i + 1], 15, 1e-11);
    }
    return total;
}

}  // namespace

TEST_CASE("peak-normalized lineshapes")
{
    CHECK(lineshape::lorentzian(3.0, 3.0, 2.0) == 1.0);
    CHECK(lineshape::lorentzian(4.0, 3.0, 2.0) == doctest::Approx(0.5));
    CHECK(lineshape::gaussian(4.0, 3.0, 2.0) == doctest::Approx(0.5));
}

TEST_CASE("Voigt matches direct convolution to 1e-4 relative")
{
    for (double fl : {1.0, 13.0, 32.0, 80.0}) {
        for (double fg : {2.0, 30.0, 54.7, 141.0}) {
            const double total = lineshape::voigt_fwhm(fl, fg);
            for (double x = -5.0 * total; x <= 5.0 * total; x += total / 7.0) {
                const double expected = voigt_by_quadrature(x, fl, fg);
                const double got = lineshape::voigt(x, 0.0, fl, fg);
                CHECK(std::abs(got / expected - 1.0) < 1e-4);
            }
        }
    }
}

TEST_CASE("Voigt limits")
{
    // Zero Gaussian width is the area-normalized Lorentzian, exactly.
    for (double x : {-40.0, -3.0, 0.0, 7.5, 100.0}) {
        const double gamma = 16.0;
        CHECK(lineshape::voigt(x, 0.0, 32.0, 0.0) == gamma / (std::numbers::pi * (x * x + gamma * gamma)));
    }
    // Vanishing Lorentzian part approaches the Gaussian.
    const double g = lineshape::voigt(10.0, 0.0, 1e-9, 40.0);
    const double sigma = 40.0 / lineshape::kFwhmPerSigma;
    CHECK(g == doctest::Approx(std::exp(-50.0 / (sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-6));
}

TEST_CASE("Voigt gradient matches finite differences")
{
    for (double x : {-60.0, -12.0, 0.5, 25.0}) {
        const double c = 1.5, fl = 13.0, fg = 50.0;
        const auto grad = lineshape::voigt_with_gradient(x, c, fl, fg);
        const double h = 1e-5;
        auto v = [&](double cc, double l, double gg) { return lineshape::voigt(x, cc, l, gg); };
        CHECK(grad.d_center == doctest::Approx((v(c + h, fl, fg) - v(c - h, fl, fg)) / (2 * h)).epsilon(1e-5));
        CHECK(grad.d_fwhm_lorentzian == doctest::Approx((v(c, fl + h, fg) - v(c, fl - h, fg)) / (2 * h)).epsilon(1e-5));
        CHECK(grad.d_fwhm_gaussian == doctest::Approx((v(c, fl, fg + h) - v(c, fl, fg - h)) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("Voigt width combination round trip")
{
    const double fg = lineshape::gaussian_fwhm_for_voigt(62.0, 13.0);
    CHECK(lineshape::voigt_fwhm(13.0, fg) == doctest::Approx(62.0).epsilon(1e-12));
    CHECK_THROWS(lineshape::gaussian_fwhm_for_voigt(5.0, 13.0));
}

TEST_CASE("bounded Levenberg-Marquardt")
{
    // y = a exp(-b x) + c on 40 points.
    const int m = 40;
    Eigen::VectorXd xs(m), ys(m);
    for (int i = 0; i < m; ++i) {
        xs[i] = 0.1 * i;
        ys[i] = 3.0 * std::exp(-1.7 * xs[i]) + 0.25;
    }
    const lsq::Model model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
        for (int i = 0; i < m; ++i) {
            const double e = std::exp(-p[1] * xs[i]);
            r[i] = p[0] * e + p[2] - ys[i];
            if (j) {
                (*j)(i, 0) = e;
                (*j)(i, 1) = -p[0] * xs[i] * e;
                (*j)(i, 2) = 1.0;
            }
        }
    };

    SUBCASE("unconstrained recovery")
    {
        const auto res = lsq::solve(model, m, Eigen::Vector3d(1.0, 0.5, 0.0), {});
        CHECK(res.converged);
        CHECK(res.params[0] == doctest::Approx(3.0).epsilon(1e-9));
        CHECK(res.params[1] == doctest::Approx(1.7).epsilon(1e-9));
        CHECK(res.params[2] == doctest::Approx(0.25).epsilon(1e-9));
    }
    SUBCASE("active bound pins a parameter")
    {
        const std::vector<lsq::Bounds> bounds{{-1e9, 1e9}, {-1e9, 1e9}, {0.5, 1e9}};
        const auto res = lsq::solve(model, m, Eigen::Vector3d(1.0, 0.5, 1.0), bounds);
        CHECK(res.converged);
        CHECK(res.params[2] == 0.5);
        CHECK(res.at_bound[2]);
        CHECK(!res.at_bound[0]);
        CHECK(res.std_errors[2] == 0.0);
    }
    SUBCASE("fixed parameter")
    {
        const auto res = lsq::solve(model, m, Eigen::Vector3d(1.0, 1.7, 0.0), {}, {false, true, false});
        CHECK(res.params[1] == 1.7);
        CHECK(res.params[0] == doctest::Approx(3.0).epsilon(1e-9));
    }
}

TEST_CASE("r squared")
{
    Eigen::VectorXd y(4);
    y << 1, 2, 3, 4;
    CHECK(lsq::r_squared(y, Eigen::VectorXd::Zero(4)) == 1.0);
    Eigen::VectorXd r(4);
    r << 0.5, -0.5, 0.5, -0.5;
    CHECK(lsq::r_squared(y, r) == doctest::Approx(1.0 - 1.0 / 5.0));
}

TEST_CASE("counter RNG is order independent and well spread")
{
    const rng::CounterRng a(42, 1);
    const rng::CounterRng b(42, 1);
    const rng::CounterRng c(43, 1);
    CHECK(a.normal(1000) == b.normal(1000));
    CHECK(a.normal(1000) != c.normal(1000));
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = a.normal(static_cast<std::uint64_t>(i));
        sum += z;
        sum2 += z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sum2 / n - 1.0) < 0.01);
}
