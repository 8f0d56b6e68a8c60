// Observables from single traces and scans: finesse from a triangular
// length sweep, polarization splitting against a sideband ruler, and PLE
// lineshapes.

#pragma once

#include "dcav/synth.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace dcav::tracefit {

/// Raised by lineshape fits that cannot produce a result.
struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PeakFit {
    double center = 0.0;
    double width_fwhm = 0.0;
    double amplitude = 0.0;
    double offset = 0.0;
    double r_squared = 0.0;
    double center_error = 0.0;
    double width_error = 0.0;
    Eigen::MatrixXd covariance;
    bool converged = false;
    bool doublet = false;          // fitted as a polarization pair
    double doublet_separation = 0.0;
};

/// Allowed time spacing of adjacent fundamentals. Zero max means automatic:
/// [0.8, 1.25] times the median spacing of the strong peaks.
struct Acceptance {
    double min_s = 0.0;
    double max_s = 0.0;
    bool automatic() const { return !(max_s > 0.0); }
};

struct DetectOptions {
    double prominence_noise_factor = 5.0;
    double prominence_relative = 0.05;  // of the tallest peak
    double central_fraction = 0.8;      // of each sweep half
};

struct PeakWindow {
    std::size_t sample = 0;  // index of the maximum
    double time_s = 0.0;
    double height_v = 0.0;   // above baseline
    double prominence_v = 0.0;
    double fwhm_s = 0.0;     // half-maximum estimate
    int half = 0;            // 0 up ramp, 1 down ramp
    std::vector<std::size_t> partners;  // close peaks merged into this window (samples)
};

struct Detection {
    bool ok = false;
    std::string reason;
    std::vector<PeakWindow> peaks;  // accepted fundamentals, time ordered
    Acceptance acceptance;          // as applied
    double noise_v = 0.0;
    double baseline_v = 0.0;
};

/// Generic peak finder on a trace: smoothed maxima with topographic
/// prominence above max(factor * noise, relative * tallest).
std::vector<PeakWindow> find_peaks(const synth::TransmissionTrace& trace, const DetectOptions& options,
                                   double* noise_v = nullptr, double* baseline_v = nullptr);

/// Fundamentals: central part of each half sweep, spacing inside acceptance.
Detection detect_fundamental_modes(const synth::TransmissionTrace& trace, Acceptance acceptance = {},
                                   const DetectOptions& options = {});

struct FinesseOptions {
    double r2_floor = 0.95;
    double window_fwhm = 8.0;             // fit window half width
    double doublet_r2_gain = 0.01;
    DetectOptions detect{};
};

struct FinesseResult {
    double finesse = 0.0;
    double mode_distance_s = 0.0;
    double linewidth_s = 0.0;
    int chosen_peak = -1;  // 0 or 1 within the fitted pair
    bool valid = false;
    std::string reason;
    PeakFit fits[2];
};

FinesseResult fit_finesse(const synth::TransmissionTrace& trace, Acceptance acceptance = {},
                          const FinesseOptions& options = {});

/// Single Lorentzian fit on samples [begin, end) of the trace.
PeakFit fit_lorentzian_window(const synth::TransmissionTrace& trace, std::size_t begin, std::size_t end,
                              double center_guess, double fwhm_guess);

struct PolarizationOptions {
    double r2_floor = 0.95;
    double six_peak_r2_gain = 0.01;
    double resolvability = 0.5;  // splitting must exceed this times the linewidth
    DetectOptions detect{.prominence_noise_factor = 5.0, .prominence_relative = 0.03};
};

struct SplittingResult {
    double splitting_ghz = 0.0;
    double linewidth_ghz = 0.0;
    bool resolved = false;
    bool accepted = false;  // passed the R^2 filter
    double r_squared = 0.0;
    int peaks_in_model = 0;  // 3 or 6
    double sideband_spacing_s = 0.0;
    std::string reason;
};

SplittingResult fit_polarization(const synth::TransmissionTrace& trace, double sideband_ghz,
                                 const PolarizationOptions& options = {});

enum class LineModel { lorentzian, gaussian, voigt };

struct LineshapeFit {
    LineModel model = LineModel::lorentzian;
    double center_mhz = 0.0;
    double fwhm_total_mhz = 0.0;
    double fwhm_lorentzian_mhz = 0.0;
    double fwhm_gaussian_mhz = 0.0;
    double amplitude = 0.0;  // peak height above offset
    double offset = 0.0;
    double center_error = 0.0;
    double fwhm_total_error = 0.0;
    double fwhm_lorentzian_error = 0.0;
    double fwhm_gaussian_error = 0.0;
    double r_squared = 0.0;
    bool lorentzian_at_floor = false;
    int iterations = 0;
};

struct PleFitOptions {
    double lorentzian_floor_mhz = 0.0;       // voigt only
    double fixed_gaussian_fwhm_mhz = -1.0;   // voigt only; negative means free
    double fixed_lorentzian_fwhm_mhz = -1.0; // voigt only; negative means free
};

/// Least-squares lineshape fit. Throws FitError on degenerate data or
/// non-convergence.
LineshapeFit fit_ple_scan(const std::vector<double>& freq_mhz, const std::vector<double>& counts,
                          LineModel model, const PleFitOptions& options = {});

struct DiffusionOptions {
    double selection_fraction_min = 0.5;
    double r2_floor = 0.8;
    double completeness_fwhm = 1.5;  // fitted center this many FWHM inside the range
    int bins_per_step = 4;
};

struct DiffusionResult {
    LineshapeFit gaussian_fit;    // plain average of all scans
    LineshapeFit dephasing_fit;   // centered average of selected scans
    LineshapeFit diffusion_fit;   // Voigt on the plain average, Lorentzian fixed at the dephasing width
    int selected_count = 0;
    std::vector<bool> selected;
    std::vector<double> average_counts;  // plain average on the common axis
    std::string warning;
};

DiffusionResult spectral_diffusion_average(const synth::PleScanSet& scans,
                                           const DiffusionOptions& options = {});

struct PleSummary {
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::vector<std::pair<double, double>> cdf;  // (value, cumulative fraction)
};

PleSummary ple_statistics(std::vector<double> fwhm_mhz);
PleSummary ple_statistics(const std::vector<LineshapeFit>& fits);

std::string to_string(LineModel model);
LineModel parse_line_model(const std::string& name);

}  // namespace dcav::tracefit
