// Parameter recovery from maps, length sweeps and white-light spectra.

#pragma once

#include "dcav/maps.hpp"
#include "dcav/optics.hpp"
#include "dcav/synth.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace dcav::modelfit {

struct FitReport {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> std_errors;
    std::vector<bool> fixed;
    std::vector<bool> at_bound;
    double residual_rms = 0.0;
    double r_squared = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string message;

    /// Throws std::out_of_range for an unknown name.
    double value(const std::string& name) const;
    double error(const std::string& name) const;
    bool pinned(const std::string& name) const;
};

struct ThicknessFinesseSample {
    double thickness_um = 0.0;
    double finesse = 0.0;
    double x_um = 0.0;
    double y_um = 0.0;
    double weight = 1.0;  // inverse variance, relative
};

/// Axis-aligned region of interest in scan coordinates (inclusive).
struct Region {
    double x0_um = 0.0, y0_um = 0.0, x1_um = 0.0, y1_um = 0.0;
    bool contains(double x, double y) const
    {
        return x >= std::min(x0_um, x1_um) && x <= std::max(x0_um, x1_um) &&
               y >= std::min(y0_um, y1_um) && y <= std::max(y0_um, y1_um);
    }
};

struct Registration {
    std::vector<ThicknessFinesseSample> samples;  // valid scan pixels only
    double offset_um = 0.0;                       // added to the height map
    double max_displacement_um = 0.0;             // nearest-neighbour distance, worst pixel
};

/// Resamples the height map onto the scan grid (nearest neighbour) and shifts
/// it so the thickness at the anchor equals the dispersion-derived value.
Registration register_heightmap(const HeightMap& height, const FinesseMap& scan, double anchor_x_um,
                                double anchor_y_um, double dispersion_thickness_um,
                                std::optional<Region> region = std::nullopt);

struct LossFitOptions {
    double shift_bound_nm = 20.0;
    double roughness_max_nm = 5.0;
    double loss_additional_max_ppm = 1e5;
    std::vector<double> roughness_starts_nm{0.3, 0.9, 1.5};
};

/// Finesse(t + delta; sigma, L_add) against the samples with mirror losses
/// fixed and alpha = 0. Parameters: roughness_nm, loss_additional_ppm,
/// thickness_shift_nm.
FitReport fit_loss_model(const std::vector<ThicknessFinesseSample>& samples,
                         const optics::MirrorSet& mirrors, const optics::OpticalConstants& constants,
                         const LossFitOptions& options = {});

/// Model finesse at the fitted parameters of a loss-model report.
double loss_model_finesse(const FitReport& report, double thickness_um, const optics::MirrorSet& mirrors,
                          const optics::OpticalConstants& constants);

struct SegmentStats {
    double center_nm = 0.0;
    std::size_t count = 0;
    double mean = 0.0;
    double sigma = 0.0;
    bool histogram_fit = false;  // false: sample moments
    std::vector<std::pair<double, std::size_t>> histogram;  // (bin lower edge, count)
};

/// Thickness segments of the given width; segments with fewer than
/// min_samples are skipped. Histogram bins are aligned to multiples of the
/// bin width.
std::vector<SegmentStats> segment_statistics(const std::vector<ThicknessFinesseSample>& samples,
                                             double segment_nm = 10.0, double histogram_bin = 100.0,
                                             std::size_t min_samples = 20);

/// Sets each sample's weight to the inverse finesse variance of its thickness
/// segment. Skipped or zero-scatter segments get the median variance.
void weight_by_segment_scatter(std::vector<ThicknessFinesseSample>& samples, double segment_nm = 10.0,
                               std::size_t min_samples = 20);

struct Envelopes {
    FitReport upper;  // fitted to mean + sigma
    FitReport lower;  // fitted to mean - sigma
};

Envelopes fit_envelopes(const std::vector<SegmentStats>& stats, const optics::MirrorSet& mirrors,
                        const optics::OpticalConstants& constants, const LossFitOptions& options = {});

/// Fraction of samples whose finesse lies between the two envelope curves.
double fraction_between_envelopes(const std::vector<ThicknessFinesseSample>& samples, const Envelopes& env,
                                  const optics::MirrorSet& mirrors, const optics::OpticalConstants& constants);

struct ClippingReport {
    FitReport fit;  // loss_additional_ppm, feature_diameter_um
    double plateau_finesse = 0.0;
    double rolloff_length_um = 0.0;  // clipping equals all other losses
    bool diameter_identifiable = false;
};

ClippingReport fit_clipping(const std::vector<synth::LengthSweepPoint>& data, const optics::FiberTip& fiber,
                            const optics::MirrorSet& mirrors, const optics::OpticalConstants& constants);

struct SpectralLine {
    int step_label = 0;
    double wavelength_nm = 0.0;
    int track = -1;
};

/// Bright-line centers per length step (3-point log-parabola refinement).
std::vector<SpectralLine> extract_spectral_lines(const synth::DispersionSpectra& spectra,
                                                 double relative_threshold = 0.3);

/// Greedy nearest-line association across consecutive steps. Throws
/// std::runtime_error listing candidates when a line is ambiguous.
int associate_tracks(std::vector<SpectralLine>& lines);

struct DispersionGuess {
    double thickness_nm = 0.0;
    double air_gap_first_nm = 0.0;  // at the first step label
    double air_gap_per_step_nm = 0.0;
    double thickness_halfwidth_nm = 400.0;
    double air_gap_halfwidth_nm = 1000.0;
};

struct DispersionReport {
    FitReport fit;  // thickness_nm, air_gap_first_nm, air_gap_per_step_nm
    std::vector<SpectralLine> lines;
    std::vector<int> track_orders;
    std::vector<int> step_labels;
    std::vector<double> air_gap_nm;  // per step label
};

DispersionReport fit_dispersion(const synth::DispersionSpectra& spectra, const optics::OpticalConstants& constants,
                                const DispersionGuess& guess);

}  // namespace dcav::modelfit
