// Tool configuration and dataset manifests (JSON). Every configuration key
// carries its unit in the name; unknown keys are rejected.

#pragma once

#include "dcav/optics.hpp"
#include "dcav/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcav::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ToolConfig {
    // physics
    double wavelength_nm = 637.0;
    double n_diamond = 2.41;
    double alpha_per_m = 0.0;
    double loss_fiber_ppm = 50.0;
    double loss_sample_diamond_ppm = 670.0;
    double sample_transmission_fraction = 1.0;
    double roc_um = 17.3;
    double feature_diameter_um = 10.0;

    // scanning setup
    double scan_step_um = 0.2;
    double sweep_hz = 300.0;
    std::int64_t samples_per_trace = 200000;
    double cavity_length_um = 5.0;
    double max_cavity_length_um = 15.0;
    double sideband_ghz = 6.0;
    double sideband_relative_amplitude = 0.3;
    double noise_rms_v = 0.0;
    double detector_gain_v = 10.0;
    double transmission_floor_factor = 3.0;
    double piezo_nonlinearity = 0.3;

    // analysis
    double segment_nm = 10.0;
    double histogram_bin = 100.0;
    std::int64_t min_segment_samples = 20;
    double r2_floor = 0.95;
    double shift_bound_nm = 20.0;
    double roughness_max_nm = 5.0;
    double nv_lorentzian_floor_mhz = 13.0;
    std::string trace_analysis = "finesse";  // finesse | polarization
    double acceptance_min_s = 0.0;
    double acceptance_max_s = 0.0;  // 0: automatic
    double anchor_x_um = 0.0;
    double anchor_y_um = 0.0;
    double anchor_thickness_um = -1.0;  // negative: take from the dataset manifest
    std::string ple_model = "auto";     // auto | lorentzian | gaussian | voigt

    // simulated device
    double scan_width_um = 70.0;
    double scan_height_um = 70.0;
    double base_thickness_um = 2.0;
    double slope_um_per_100um = 0.7;
    double slope_direction_rad = 0.0;
    double roughness_mean_nm = 0.9;
    double roughness_spread_nm = 0.0;
    double correlation_length_um = 1.0;
    double loss_additional_ppm = 610.0;
    double finesse_noise_relative = 0.02;
    double registration_offset_um = 0.25;

    // simulated trace
    double trace_finesse = 9500.0;
    std::int64_t modes_in_sweep = 4;
    double splitting_ghz = 0.0;
    double linewidth_ghz = 2.9;
    bool sidebands = false;

    // simulated and fitted spectra
    double thickness_nm = 2510.0;
    double air_gap_start_nm = 4000.0;
    double air_gap_step_nm = 20.0;
    std::int64_t length_steps = 40;
    double band_lower_nm = 600.0;
    double band_upper_nm = 700.0;
    double wavelength_step_nm = 0.05;
    double instrument_fwhm_nm = 0.4;
    double spectra_noise_relative = 0.0;
    double guess_thickness_nm = 2400.0;
    double guess_air_gap_nm = 4200.0;
    double guess_air_gap_step_nm = 20.0;
    double guess_thickness_halfwidth_nm = 400.0;
    double guess_air_gap_halfwidth_nm = 1000.0;

    // simulated PLE
    std::string emitter = "snv";  // snv | nv
    double homogeneous_fwhm_mhz = 32.0;
    double diffusion_sigma_mhz = 60.0;
    std::int64_t n_scans = 100;
    double bistability_splitting_mhz = 0.0;  // 0: no telegraph
    double switch_probability = 0.1;
    double ple_range_mhz = 300.0;
    double ple_step_mhz = 5.0;
    double peak_counts = 200.0;
    double background_counts = 2.0;

    // simulated length sweep
    double length_min_um = 1.0;
    double length_max_um = 17.0;
    double length_step_um = 0.25;
    double length_noise_relative = 0.005;

    std::int64_t seed = 1;

    /// Throws ConfigError naming the first offending key.
    void validate() const;

    optics::OpticalConstants constants() const;
    optics::MirrorSet mirrors() const;
    optics::FiberTip fiber() const;
    synth::ScanConfig scan_config() const;
};

/// All keys with their current values, in a fixed order.
std::string to_json(const ToolConfig& c);

/// Applies the keys of a JSON object on top of `base`. Unknown keys, wrong
/// types and failed validation throw ConfigError. `origin` names the source
/// in messages.
ToolConfig apply_json(ToolConfig base, const std::string& json_text, const std::string& origin);

/// Applies one `key=value` assignment; the value is parsed as for JSON, with
/// bare words accepted as strings.
ToolConfig apply_assignment(ToolConfig base, const std::string& assignment);

ToolConfig load(const std::filesystem::path& path, ToolConfig base = {});

std::vector<std::string> keys();

/// 64-bit FNV-1a of the text, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

struct Manifest {
    std::string kind;  // scan | traces | spectra | ple | heightmap | length_sweep | samples | report
    std::map<std::string, std::string> files;  // role -> path relative to the manifest
    std::string command;
    std::string config_hash;
    std::int64_t seed = 0;
    bool synthetic = false;
    std::map<std::string, double> parameters;  // generator truth or calibration values

    std::filesystem::path base_dir;  // set on load
    std::filesystem::path file(const std::string& role) const;  // throws ConfigError
};

std::string to_json(const Manifest& m);
void save(const std::filesystem::path& path, const Manifest& m);

/// Throws ConfigError on schema problems and lists every missing referenced file.
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace dcav::config
