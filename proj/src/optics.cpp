#include "dcav/optics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dcav::optics {

void OpticalConstants::validate() const
{
    if (!(wavelength_nm > 0.0)) throw std::invalid_argument("wavelength must be positive");
    if (!(n_diamond > 1.0)) throw std::invalid_argument("diamond refractive index must exceed 1");
    if (!(alpha_per_m >= 0.0)) throw std::invalid_argument("absorption coefficient must be >= 0");
}

void MirrorSet::validate() const
{
    if (!(loss_fiber_ppm >= 0.0) || !(loss_sample_diamond_ppm >= 0.0))
        throw std::invalid_argument("mirror losses must be >= 0");
    if (!(sample_transmission_fraction >= 0.0 && sample_transmission_fraction <= 1.0))
        throw std::invalid_argument("sample transmission fraction must lie in [0, 1]");
}

void FiberTip::validate() const
{
    if (!(roc_um > 0.0)) throw std::invalid_argument("fiber ROC must be positive");
    if (!(feature_diameter_um > 0.0))
        throw std::invalid_argument("concave feature diameter must be positive");
}

double mode_thickness_nm(ModeIndex mode, const OpticalConstants& c)
{
    const double q = static_cast<double>(mode.q);
    if (mode.kind == ModeKind::air_like) return q * c.wavelength_nm / (2.0 * c.n_diamond);
    return (2.0 * q + 1.0) * c.wavelength_nm / (4.0 * c.n_diamond);
}

namespace {

double interface_phase(double thickness_nm, const OpticalConstants& c)
{
    return 2.0 * kPi * c.n_diamond * thickness_nm / c.wavelength_nm;
}

}  // namespace

double field_intensity_ratio(double thickness_nm, const OpticalConstants& c)
{
    const double phase = interface_phase(thickness_nm, c);
    const double s = std::sin(phase);
    const double co = std::cos(phase);
    return 1.0 / (s * s / c.n_diamond + c.n_diamond * co * co);
}

double scattering_loss_ppm(double thickness_nm, double roughness_nm, const OpticalConstants& c)
{
    const double n = c.n_diamond;
    const double s = std::sin(interface_phase(thickness_nm, c));
    const double index_factor = (n + 1.0) * (n - 1.0) * (n - 1.0) / n;
    const double roughness_factor = 4.0 * kPi * roughness_nm / c.wavelength_nm;
    return fraction_to_ppm(s * s * index_factor * roughness_factor * roughness_factor);
}

LossBreakdown effective_losses(const DiamondSlab& slab, const MirrorSet& mirrors,
                               const OpticalConstants& c, double loss_additional_ppm)
{
    LossBreakdown b;
    b.field_ratio = field_intensity_ratio(slab.thickness_nm, c);

    const double absorption_ppm = fraction_to_ppm(2.0 * c.alpha_per_m * slab.thickness_nm * 1e-9);
    const double scattering_ppm = scattering_loss_ppm(slab.thickness_nm, slab.roughness_nm, c);

    b.loss_air_mirror_ppm = mirrors.loss_fiber_ppm;
    b.loss_sample_mirror_weighted_ppm = b.field_ratio * mirrors.loss_sample_diamond_ppm;
    b.loss_absorption_weighted_ppm = b.field_ratio * absorption_ppm;
    b.loss_scattering_weighted_ppm = b.field_ratio * scattering_ppm;
    b.loss_additional_ppm = loss_additional_ppm;
    b.loss_effective_ppm = b.loss_air_mirror_ppm + b.loss_sample_mirror_weighted_ppm +
                           b.loss_absorption_weighted_ppm + b.loss_scattering_weighted_ppm +
                           b.loss_additional_ppm;
    b.finesse = 2.0 * kPi / ppm_to_fraction(b.loss_effective_ppm);
    return b;
}

double outcoupling_efficiency(const LossBreakdown& b, const MirrorSet& mirrors)
{
    if (!(b.loss_effective_ppm > 0.0))
        throw std::invalid_argument("outcoupling efficiency needs a positive effective loss");
    return mirrors.sample_transmission_fraction * b.loss_sample_mirror_weighted_ppm /
           b.loss_effective_ppm;
}

BeamGeometry beam_geometry(double cavity_length_um, const FiberTip& fiber,
                           const OpticalConstants& c, double medium_index)
{
    if (!(cavity_length_um > 0.0) || !(cavity_length_um < fiber.roc_um))
        throw std::domain_error("cavity length " + std::to_string(cavity_length_um) +
                                " um outside the stable range (0, ROC = " +
                                std::to_string(fiber.roc_um) + " um)");
    const double lambda_um = c.wavelength_nm * 1e-3;
    const double length = cavity_length_um;

    BeamGeometry g;
    g.waist_sample_um =
        std::sqrt(lambda_um / kPi) * std::pow(length * (fiber.roc_um - length), 0.25);
    const double rayleigh_ratio =
        length * lambda_um / (kPi * medium_index * g.waist_sample_um * g.waist_sample_um);
    g.width_fiber_um = g.waist_sample_um * std::sqrt(1.0 + rayleigh_ratio * rayleigh_ratio);
    return g;
}

double clipping_loss_ppm(double cavity_length_um, const FiberTip& fiber,
                         const OpticalConstants& c)
{
    const BeamGeometry g = beam_geometry(cavity_length_um, fiber, c);
    const double ratio = fiber.feature_diameter_um / (2.0 * g.width_fiber_um);
    return fraction_to_ppm(std::exp(-2.0 * ratio * ratio));
}

// The standing wave E = A sin(k n z) in the diamond and B sin(k (t_d + t_a - z))
// in the air gap must match in value and slope at the interface, which gives
//   sin(k n t_d) cos(k t_a) + n cos(k n t_d) sin(k t_a) = 0,
// equivalently tan(k n t_d) = -n tan(k t_a). Writing n cos(a) + i sin(a) =
// R exp(i theta(a)) turns this into sin(k t_a + theta) = 0, with theta the
// continuous phase below.
namespace {

double layer_phase(double a, double n)
{
    return a - std::atan((n - 1.0) * std::sin(2.0 * a) / ((n + 1.0) + (n - 1.0) * std::cos(2.0 * a)));
}

double layer_phase_slope(double a, double n)
{
    const double co = std::cos(a);
    const double s = std::sin(a);
    return n / (n * n * co * co + s * s);
}

}  // namespace

double resonance_phase(double k, double air_gap_nm, double thickness_nm, double n)
{
    return k * air_gap_nm + layer_phase(k * n * thickness_nm, n);
}

PhaseDerivatives resonance_phase_derivatives(double k, double air_gap_nm, double thickness_nm,
                                             double n)
{
    const double slope = layer_phase_slope(k * n * thickness_nm, n);
    return {air_gap_nm + n * thickness_nm * slope, k, k * n * slope};
}

double resonance_wavelength_nm(int order, const HybridGeometry& g, const OpticalConstants& c,
                               double k_lower, double k_upper)
{
    const double n = c.n_diamond;
    const double target = order * kPi;
    auto residual = [&](double k) {
        return resonance_phase(k, g.air_gap_nm, g.diamond_thickness_nm, n) - target;
    };

    double lo = k_lower;
    double hi = k_upper;
    const double f_lo = residual(lo);
    const double f_hi = residual(hi);
    if (f_lo > 0.0 || f_hi < 0.0) return -1.0;
    if (f_lo == 0.0) return 2.0 * kPi / lo;
    if (f_hi == 0.0) return 2.0 * kPi / hi;

    // Safeguarded Newton on a monotone function.
    double k = lo + (hi - lo) * (-f_lo) / (f_hi - f_lo);
    for (int iter = 0; iter < 200; ++iter) {
        const double f = residual(k);
        if (f == 0.0) break;
        if (f < 0.0) lo = k; else hi = k;

        const double slope =
            resonance_phase_derivatives(k, g.air_gap_nm, g.diamond_thickness_nm, n).d_k;
        double next = k - f / slope;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - k);
        k = next;
        if (step <= 1e-15 * k || (hi - lo) <= 1e-15 * k) break;
    }
    return 2.0 * kPi / k;
}

std::vector<double> hybrid_resonances_nm(const HybridGeometry& g, const OpticalConstants& c,
                                         WavelengthBand band)
{
    c.validate();
    if (!(g.air_gap_nm >= 0.0) || !(g.diamond_thickness_nm >= 0.0) ||
        !(g.air_gap_nm + g.diamond_thickness_nm > 0.0))
        throw std::invalid_argument("hybrid geometry needs non-negative layers with positive total length");

    std::vector<double> out;
    if (!(band.lower_nm > 0.0) || !(band.upper_nm > band.lower_nm)) return out;

    const double n = c.n_diamond;
    // Widen by a hair so roots sitting exactly on a band edge survive rounding.
    const double k_lower = 2.0 * kPi / band.upper_nm * (1.0 - 1e-12);
    const double k_upper = 2.0 * kPi / band.lower_nm * (1.0 + 1e-12);
    const double phase_lo = resonance_phase(k_lower, g.air_gap_nm, g.diamond_thickness_nm, n);
    const double phase_hi = resonance_phase(k_upper, g.air_gap_nm, g.diamond_thickness_nm, n);

    const int first = std::max(1, static_cast<int>(std::ceil(phase_lo / kPi)));
    const int last = static_cast<int>(std::floor(phase_hi / kPi));
    for (int m = last; m >= first; --m) {
        const double lambda = resonance_wavelength_nm(m, g, c, k_lower, k_upper);
        if (lambda < 0.0) continue;
        if (lambda < band.lower_nm * (1.0 - 1e-12) || lambda > band.upper_nm * (1.0 + 1e-12))
            continue;
        out.push_back(lambda);
    }
    return out;
}

double purcell_estimate(double finesse, const HybridGeometry& g, const FiberTip& fiber,
                        const OpticalConstants& c)
{
    const double lambda_um = c.wavelength_nm * 1e-3;
    const double n = c.n_diamond;
    const double optical_length_um = (g.air_gap_nm + n * g.diamond_thickness_nm) * 1e-3;
    const double physical_length_um = (g.air_gap_nm + g.diamond_thickness_nm) * 1e-3;
    const BeamGeometry beam = beam_geometry(physical_length_um, fiber, c, g.medium_index_air_part);

    const double quality = finesse * optical_length_um / (lambda_um / 2.0);
    const double volume = kPi / 4.0 * beam.waist_sample_um * beam.waist_sample_um * optical_length_um;
    return 3.0 * lambda_um * lambda_um * lambda_um * quality / (4.0 * kPi * kPi * volume * n * n * n);
}

double free_spectral_range_ghz(const HybridGeometry& g, const OpticalConstants& c)
{
    const double optical_length_m = (g.air_gap_nm + c.n_diamond * g.diamond_thickness_nm) * 1e-9;
    return kSpeedOfLight / (2.0 * optical_length_m) * 1e-9;
}

}  // namespace dcav::optics
