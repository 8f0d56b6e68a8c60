// Seeded synthetic scanning-cavity datasets.
//
// Every random draw comes from a counter-based generator keyed on
// (seed, stream, cell or sample index), so outputs do not depend on
// evaluation order.

#pragma once

#include "dcav/maps.hpp"
#include "dcav/optics.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dcav::synth {

/// t(x, y) = base + slope/100 * (x cos(direction) + y sin(direction)).
HeightMap make_wedge_heightmap(double width_um, double height_um, double pitch_um,
                               double base_thickness_um, double slope_um_per_100um,
                               double direction_rad = 0.0);

/// Stationary Gaussian field with the given mean and standard deviation,
/// correlation function exp(-r^2 / l^2), periodic on the grid, clipped at 0.
RoughnessField sample_roughness_field(const GridGeometry& grid, double mean_sigma_nm,
                                      double sigma_spread_nm, double correlation_length_um,
                                      std::uint64_t seed);

struct ScanConfig {
    double step_um = 0.2;
    double sweep_hz = 300.0;
    std::size_t samples_per_trace = 200'000;
    double cavity_length_um = 5.0;  // air gap
    double max_cavity_length_um = 15.0;
    double sideband_ghz = 6.0;
    double noise_rms_v = 0.0;
    std::uint64_t seed = 1;

    double sideband_relative_amplitude = 0.3;
    double peak_voltage_v = 1.0;         // carrier peak height in a trace
    double detector_gain_v = 10.0;       // volts per unit cavity transmission
    double transmission_floor_factor = 3.0;
    double finesse_noise_relative = 0.0; // multiplicative, per pixel
    double piezo_nonlinearity = 0.3;     // fractional slope loss at the turnarounds
    double mode_phase = 0.3;             // first fundamental, in FSR units from the sweep start
    double polarization_amplitude_ratio = 0.7;

    void validate() const;
};

/// Per-pixel finesse from the loss model. Grids must match exactly.
FinesseMap synthesize_finesse_map(const HeightMap& height, const RoughnessField& roughness,
                                  const optics::MirrorSet& mirrors,
                                  const optics::OpticalConstants& constants,
                                  double loss_additional_ppm, const ScanConfig& config);

/// Resonant transmission of the two-mirror cavity at the given losses.
double cavity_transmission(const optics::LossBreakdown& breakdown, const optics::MirrorSet& mirrors);

struct TransmissionTrace {
    std::vector<double> time_s;
    std::vector<double> voltage_v;
    double sweep_hz = 0.0;
    double sweep_amplitude_v = 0.0;
    double sweep_start_s = 0.0;  // time of the lower turnaround
};

/// One full triangular period. Fundamentals are Lorentzians of FWHM 1/F in
/// FSR units. Splitting and sidebands are converted to FSR units with the
/// free spectral range finesse * linewidth.
TransmissionTrace synthesize_trace(double finesse, int modes_in_sweep, double splitting_ghz,
                                   double linewidth_ghz, const ScanConfig& config,
                                   bool sidebands_on);

/// Sweep position (FSR units, 0..modes_in_sweep) at trace time t.
double sweep_position(double time_s, int modes_in_sweep, const ScanConfig& config);

struct DispersionSpectra {
    std::vector<int> step_label;
    std::vector<double> air_gap_nm;  // generator truth per step
    std::vector<double> wavelength_nm;
    std::vector<double> intensity;   // row-major, steps x wavelengths

    double at(std::size_t step, std::size_t iw) const { return intensity[step * wavelength_nm.size() + iw]; }
};

struct DispersionConfig {
    double air_gap_start_nm = 4000.0;
    double air_gap_step_nm = 20.0;
    int length_steps = 40;
    optics::WavelengthBand band{};
    double wavelength_step_nm = 0.05;
    double instrument_fwhm_nm = 0.4;
    double noise_relative = 0.0;
    std::uint64_t seed = 1;
};

/// White-light transmission spectra for a linear air-gap sweep over fixed t_d.
DispersionSpectra synthesize_dispersion_spectra(double diamond_thickness_nm,
                                                const optics::OpticalConstants& constants,
                                                const DispersionConfig& config);

enum class Emitter { snv, nv };

struct Bistability {
    double splitting_mhz = 100.0;
    double switch_probability = 0.1;  // per scan
};

struct PleConfig {
    double range_mhz = 300.0;  // axis spans [-range, range]
    double step_mhz = 5.0;
    double peak_counts = 200.0;
    double background_counts = 2.0;
};

struct PleScan {
    std::vector<double> freq_mhz;
    std::vector<double> counts;
};

struct PleScanSet {
    Emitter emitter = Emitter::snv;
    std::vector<PleScan> scans;
    std::string repump;  // metadata
};

/// SnV: each scan is a Lorentzian centered at a Gaussian-diffused frequency.
/// NV: each scan is a Voigt (repump every step), diffusion sigma sets the
/// Gaussian part. Counts are Poisson distributed.
PleScanSet synthesize_ple_scans(Emitter emitter, double homogeneous_fwhm_mhz,
                                double diffusion_sigma_mhz, int n_scans,
                                std::optional<Bistability> bistability, std::uint64_t seed,
                                const PleConfig& config = {});

struct LengthSweepPoint {
    double length_um = 0.0;
    double finesse = 0.0;
};

/// Bare-cavity finesse including clipping, optionally with multiplicative noise.
std::vector<LengthSweepPoint> synthesize_length_sweep(const std::vector<double>& lengths_um,
                                                      const optics::FiberTip& fiber,
                                                      const optics::MirrorSet& mirrors,
                                                      const optics::OpticalConstants& constants,
                                                      double loss_additional_ppm,
                                                      double noise_relative, std::uint64_t seed);

/// Poisson deviate from a single uniform (inversion; normal approximation
/// above mean 500).
double poisson_deviate(double mean, double uniform, double normal);

}  // namespace dcav::synth
