#include "dcav/lineshape.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dcav::lineshape {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSqrtPi = 1.7724538509055160273;
constexpr double kSqrt2 = std::numbers::sqrt2;

// Weideman's rational expansion of w(z) in the upper half plane,
// coefficients from a trapezoidal DFT evaluated once.
constexpr int kTerms = 36;

struct WeidemanTable {
    double l = 0.0;
    std::array<double, kTerms> coeff{};  // coeff[j] multiplies Z^j

    WeidemanTable()
    {
        constexpr int m = 2 * kTerms;
        constexpr int m2 = 2 * m;
        l = std::sqrt(kTerms / std::sqrt(2.0));

        std::array<double, m2> f{};
        // f = [0, g(k = -m+1 .. m-1)], then fftshift.
        std::array<double, m2> raw{};
        raw[0] = 0.0;
        for (int k = -m + 1; k <= m - 1; ++k) {
            const double theta = k * kPi / m;
            const double t = l * std::tan(theta / 2.0);
            raw[k + m] = std::exp(-t * t) * (l * l + t * t);
        }
        for (int j = 0; j < m2; ++j) f[j] = raw[(j + m) % m2];

        for (int q = 1; q <= kTerms; ++q) {
            double re = 0.0;
            for (int j = 0; j < m2; ++j) re += f[j] * std::cos(2.0 * kPi * j * q / m2);
            coeff[q - 1] = re / m2;
        }
    }
};

const WeidemanTable& table()
{
    static const WeidemanTable t;
    return t;
}

}  // namespace

double lorentzian(double x, double center, double fwhm)
{
    const double u = 2.0 * (x - center) / fwhm;
    return 1.0 / (1.0 + u * u);
}

double gaussian(double x, double center, double fwhm)
{
    const double sigma = fwhm / kFwhmPerSigma;
    const double u = (x - center) / sigma;
    return std::exp(-0.5 * u * u);
}

std::complex<double> faddeeva(std::complex<double> z)
{
    if (z.imag() < 0.0) throw std::domain_error("faddeeva: lower half plane not supported");
    const WeidemanTable& t = table();
    const std::complex<double> i(0.0, 1.0);
    const std::complex<double> denom = t.l - i * z;
    const std::complex<double> big_z = (t.l + i * z) / denom;
    std::complex<double> poly = 0.0;
    for (int j = kTerms - 1; j >= 0; --j) poly = poly * big_z + t.coeff[j];
    return 2.0 * poly / (denom * denom) + 1.0 / (kSqrtPi * denom);
}

VoigtGradient voigt_with_gradient(double x, double center, double fwhm_l, double fwhm_g)
{
    VoigtGradient out;
    const double gamma = 0.5 * fwhm_l;
    const double sigma = fwhm_g / kFwhmPerSigma;
    const double u = x - center;

    if (sigma == 0.0) {
        const double d = u * u + gamma * gamma;
        out.value = gamma / (kPi * d);
        out.d_center = 2.0 * u * gamma / (kPi * d * d);
        out.d_fwhm_lorentzian = 0.5 * (d - 2.0 * gamma * gamma) / (kPi * d * d);
        out.d_fwhm_gaussian = 0.0;
        return out;
    }

    const double norm = 1.0 / (sigma * std::sqrt(2.0 * kPi));
    const std::complex<double> i(0.0, 1.0);
    const std::complex<double> z = std::complex<double>(u, gamma) / (sigma * kSqrt2);
    const std::complex<double> w = faddeeva(z);
    const std::complex<double> dw = -2.0 * z * w + 2.0 * i / kSqrtPi;

    out.value = norm * w.real();
    if (gamma == 0.0) out.value = norm * std::exp(-0.5 * u * u / (sigma * sigma));
    out.d_center = norm * (dw * (-1.0 / (sigma * kSqrt2))).real();
    const double d_gamma = norm * (dw * (i / (sigma * kSqrt2))).real();
    const double d_sigma = norm * (dw * (-z / sigma)).real() - out.value / sigma;
    out.d_fwhm_lorentzian = 0.5 * d_gamma;
    out.d_fwhm_gaussian = d_sigma / kFwhmPerSigma;
    return out;
}

double voigt(double x, double center, double fwhm_l, double fwhm_g)
{
    if (fwhm_l == 0.0 && fwhm_g == 0.0) throw std::domain_error("voigt: both widths zero");
    if (fwhm_l == 0.0) {
        const double sigma = fwhm_g / kFwhmPerSigma;
        const double u = (x - center) / sigma;
        return std::exp(-0.5 * u * u) / (sigma * std::sqrt(2.0 * kPi));
    }
    return voigt_with_gradient(x, center, fwhm_l, fwhm_g).value;
}

double voigt_fwhm(double fwhm_l, double fwhm_g)
{
    return 0.5346 * fwhm_l + std::sqrt(0.2166 * fwhm_l * fwhm_l + fwhm_g * fwhm_g);
}

double gaussian_fwhm_for_voigt(double fwhm_total, double fwhm_l)
{
    const double a = fwhm_total - 0.5346 * fwhm_l;
    const double g2 = a * a - 0.2166 * fwhm_l * fwhm_l;
    if (a < 0.0 || g2 < 0.0) throw std::domain_error("total Voigt width smaller than the Lorentzian part");
    return std::sqrt(g2);
}

}  // namespace dcav::lineshape
