#pragma once

#include <complex>

namespace dcav::lineshape {

inline constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)

/// Peak-normalized Lorentzian (1 at the center).
double lorentzian(double x, double center, double fwhm);

/// Peak-normalized Gaussian.
double gaussian(double x, double center, double fwhm);

/// Faddeeva function w(z) = exp(-z^2) erfc(-iz) for Im z >= 0.
std::complex<double> faddeeva(std::complex<double> z);

/// Area-normalized Voigt profile. A zero Gaussian width gives the exact
/// Lorentzian; a zero Lorentzian width gives the exact Gaussian.
double voigt(double x, double center, double fwhm_lorentzian, double fwhm_gaussian);

struct VoigtGradient {
    double value = 0.0;
    double d_center = 0.0;
    double d_fwhm_lorentzian = 0.0;
    double d_fwhm_gaussian = 0.0;
};
VoigtGradient voigt_with_gradient(double x, double center, double fwhm_lorentzian,
                                  double fwhm_gaussian);

/// Olivero-Longbothum total width, accurate to ~0.02 %.
double voigt_fwhm(double fwhm_lorentzian, double fwhm_gaussian);

/// Gaussian width that gives the requested Voigt total width.
double gaussian_fwhm_for_voigt(double fwhm_total, double fwhm_lorentzian);

}  // namespace dcav::lineshape
