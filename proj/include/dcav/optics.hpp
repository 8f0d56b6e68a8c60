// Hybrid diamond-air Fabry-Perot cavity physics.
//
// All functions are pure. Losses cross this interface in ppm; internally
// everything is carried as a fraction of the round-trip power.

#pragma once

#include <cstdint>
#include <numbers>
#include <vector>

namespace dcav::optics {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSpeedOfLight = 299'792'458.0;  // m/s

inline constexpr double ppm_to_fraction(double ppm) { return ppm * 1e-6; }
inline constexpr double fraction_to_ppm(double fraction) { return fraction * 1e6; }

struct OpticalConstants {
    double wavelength_nm = 637.0;
    double n_diamond = 2.41;
    double alpha_per_m = 0.0;  // diamond absorption coefficient

    /// Throws std::invalid_argument on a nonphysical set.
    void validate() const;
};

struct MirrorSet {
    double loss_fiber_ppm = 50.0;            // air-side fiber mirror
    double loss_sample_diamond_ppm = 670.0;  // sample mirror, diamond-terminated
    double sample_transmission_fraction = 1.0;

    void validate() const;
};

struct DiamondSlab {
    double thickness_nm = 0.0;
    double roughness_nm = 0.0;  // rms roughness of the air-diamond interface
};

/// Per-channel ledger of the effective round-trip loss.
struct LossBreakdown {
    double field_ratio = 0.0;  // n_d E_max,d^2 / E_max,a^2
    double loss_air_mirror_ppm = 0.0;
    double loss_sample_mirror_weighted_ppm = 0.0;
    double loss_absorption_weighted_ppm = 0.0;
    double loss_scattering_weighted_ppm = 0.0;
    double loss_additional_ppm = 0.0;
    double loss_effective_ppm = 0.0;
    double finesse = 0.0;
};

struct FiberTip {
    double roc_um = 17.3;
    double feature_diameter_um = 10.0;

    void validate() const;
};

struct HybridGeometry {
    double air_gap_nm = 0.0;
    double diamond_thickness_nm = 0.0;
    double medium_index_air_part = 1.0;  // n in the Gaussian beam formulas
};

struct BeamGeometry {
    double waist_sample_um = 0.0;  // w0, on the flat sample mirror
    double width_fiber_um = 0.0;   // w_m, on the curved fiber mirror
};

enum class ModeKind { air_like, diamond_like };

struct ModeIndex {
    std::uint32_t q = 0;
    ModeKind kind = ModeKind::air_like;
};

struct WavelengthBand {
    double lower_nm = 600.0;
    double upper_nm = 700.0;
};

/// Diamond thickness at which a mode of the given order is air- or diamond-like.
double mode_thickness_nm(ModeIndex mode, const OpticalConstants& constants);

/// Field intensity ratio n_d E_max,d^2 / E_max,a^2; always within [1/n_d, n_d].
double field_intensity_ratio(double thickness_nm, const OpticalConstants& constants);

/// Unweighted scattering loss at the air-diamond interface.
double scattering_loss_ppm(double thickness_nm, double roughness_nm,
                           const OpticalConstants& constants);

LossBreakdown effective_losses(const DiamondSlab& slab, const MirrorSet& mirrors,
                               const OpticalConstants& constants, double loss_additional_ppm);

/// Fraction of the intracavity loss leaving through the sample mirror.
double outcoupling_efficiency(const LossBreakdown& breakdown, const MirrorSet& mirrors);

/// Gaussian mode of a plano-concave cavity. Throws std::domain_error unless
/// 0 < cavity_length < ROC.
BeamGeometry beam_geometry(double cavity_length_um, const FiberTip& fiber,
                           const OpticalConstants& constants, double medium_index = 1.0);

/// Clipping loss of the fiber mirror's finite concave feature.
double clipping_loss_ppm(double cavity_length_um, const FiberTip& fiber,
                         const OpticalConstants& constants);

/// Accumulated standing-wave phase of the two-layer cavity at vacuum
/// wavenumber k (rad/nm). Resonances sit at phase = m*pi. Strictly
/// increasing in k, so every resonance order is found exactly once.
double resonance_phase(double k_per_nm, double air_gap_nm, double diamond_thickness_nm,
                       double n_diamond);

/// d(resonance_phase)/dk, d/d(air gap), d/d(thickness).
struct PhaseDerivatives {
    double d_k = 0.0;
    double d_air_gap = 0.0;
    double d_thickness = 0.0;
};
PhaseDerivatives resonance_phase_derivatives(double k_per_nm, double air_gap_nm,
                                             double diamond_thickness_nm, double n_diamond);

/// Wavelength of resonance order m, refined to 1e-12 relative. Returns a
/// negative value if the order has no solution in (k_lower, k_upper].
double resonance_wavelength_nm(int order, const HybridGeometry& geometry,
                               const OpticalConstants& constants, double k_lower,
                               double k_upper);

/// All fundamental resonance wavelengths inside the band, ascending.
std::vector<double> hybrid_resonances_nm(const HybridGeometry& geometry,
                                         const OpticalConstants& constants,
                                         WavelengthBand band = {});

/// Hemispherical-cavity Purcell estimate F_P = 3 lambda^3 Q / (4 pi^2 V n_d^3)
/// with Q = finesse * L_opt / (lambda/2) and V = (pi/4) w0^2 L_opt, where
/// L_opt = t_a + n_d t_d and w0 is taken at the physical length t_a + t_d.
/// An order-of-magnitude figure, linear in finesse.
double purcell_estimate(double finesse, const HybridGeometry& geometry, const FiberTip& fiber,
                        const OpticalConstants& constants);

/// Free spectral range of the hybrid cavity in GHz (optical length t_a + n_d t_d).
double free_spectral_range_ghz(const HybridGeometry& geometry, const OpticalConstants& constants);

}  // namespace dcav::optics
