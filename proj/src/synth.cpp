#include "dcav/synth.hpp"

#include "dcav/lineshape.hpp"
#include "dcav/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcav::synth {

namespace {

// RNG stream identifiers; one per kind of draw.
enum Stream : std::uint64_t {
    kRoughness = 1,
    kFinesseNoise = 2,
    kTraceNoise = 3,
    kSpectraNoise = 4,
    kPleCounts = 5,
    kPleCenter = 6,
    kPleTelegraph = 7,
    kLengthSweep = 8,
};

constexpr double kFourLn2 = 2.772588722239781;  // 4 ln 2

// Periodic 1D Gaussian blur; kernel normalized to unit sum of squares so
// white noise keeps unit variance.
std::vector<double> blur_kernel(double sigma_cells)
{
    if (sigma_cells <= 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(4.0 * sigma_cells));
    std::vector<double> w(2 * radius + 1);
    double sum_sq = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double v = std::exp(-0.5 * k * k / (sigma_cells * sigma_cells));
        w[k + radius] = v;
        sum_sq += v * v;
    }
    for (double& v : w) v /= std::sqrt(sum_sq);
    return w;
}

long wrap(long i, long n) { return ((i % n) + n) % n; }

}  // namespace

HeightMap make_wedge_heightmap(double width_um, double height_um, double pitch_um,
                               double base_thickness_um, double slope_um_per_100um,
                               double direction_rad)
{
    if (!(width_um > 0.0) || !(height_um > 0.0) || !(pitch_um > 0.0))
        throw std::invalid_argument("wedge extent and pitch must be positive");
    HeightMap map;
    map.grid = make_grid(width_um, height_um, pitch_um);
    map.frame = "synthetic wedge";
    map.thickness_um.resize(map.grid.size());
    const double gradient = slope_um_per_100um / 100.0;
    const double cx = std::cos(direction_rad);
    const double sy = std::sin(direction_rad);
    for (std::size_t iy = 0; iy < map.grid.ny; ++iy)
        for (std::size_t ix = 0; ix < map.grid.nx; ++ix)
            map.thickness_um[map.grid.index(ix, iy)] =
                base_thickness_um + gradient * (map.grid.x(ix) * cx + map.grid.y(iy) * sy);
    for (double t : map.thickness_um)
        if (t < 0.0) throw std::invalid_argument("wedge reaches negative thickness");
    return map;
}

RoughnessField sample_roughness_field(const GridGeometry& grid, double mean_sigma_nm,
                                      double sigma_spread_nm, double correlation_length_um,
                                      std::uint64_t seed)
{
    grid.validate();
    if (!(mean_sigma_nm >= 0.0) || !(sigma_spread_nm >= 0.0))
        throw std::invalid_argument("roughness mean and spread must be >= 0");
    if (!(correlation_length_um >= 0.0))
        throw std::invalid_argument("correlation length must be >= 0");

    RoughnessField field;
    field.grid = grid;
    field.correlation_length_um = correlation_length_um;
    field.seed = seed;
    field.sigma_nm.assign(grid.size(), mean_sigma_nm);
    if (sigma_spread_nm == 0.0) return field;

    const rng::CounterRng gen(seed, kRoughness);
    std::vector<double> white(grid.size());
    for (std::size_t i = 0; i < white.size(); ++i) white[i] = gen.normal(i);

    // A std-s Gaussian blur yields correlation exp(-r^2 / 4s^2), so s = l/2.
    const auto w = blur_kernel(correlation_length_um / 2.0 / grid.pitch_um);
    const long radius = static_cast<long>(w.size() / 2);
    const long nx = static_cast<long>(grid.nx), ny = static_cast<long>(grid.ny);

    std::vector<double> tmp(grid.size(), 0.0);
    for (long iy = 0; iy < ny; ++iy)
        for (long ix = 0; ix < nx; ++ix) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k)
                acc += w[k + radius] * white[iy * nx + wrap(ix + k, nx)];
            tmp[iy * nx + ix] = acc;
        }
    for (long iy = 0; iy < ny; ++iy)
        for (long ix = 0; ix < nx; ++ix) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k)
                acc += w[k + radius] * tmp[wrap(iy + k, ny) * nx + ix];
            field.sigma_nm[iy * nx + ix] = std::max(0.0, mean_sigma_nm + sigma_spread_nm * acc);
        }
    return field;
}

void ScanConfig::validate() const
{
    if (!(step_um > 0.0)) throw std::invalid_argument("scan step must be positive");
    if (!(sweep_hz > 0.0)) throw std::invalid_argument("sweep frequency must be positive");
    if (samples_per_trace < 1000) throw std::invalid_argument("samples_per_trace must be >= 1000");
    if (!(cavity_length_um > 0.0) || !(cavity_length_um < max_cavity_length_um))
        throw std::invalid_argument("cavity length must lie in (0, max_cavity_length_um)");
    if (!(sideband_ghz > 0.0)) throw std::invalid_argument("sideband frequency must be positive");
    if (!(noise_rms_v >= 0.0)) throw std::invalid_argument("noise rms must be >= 0");
    if (!(piezo_nonlinearity >= 0.0 && piezo_nonlinearity < 1.0))
        throw std::invalid_argument("piezo nonlinearity must lie in [0, 1)");
    if (!(finesse_noise_relative >= 0.0))
        throw std::invalid_argument("finesse noise must be >= 0");
}

double cavity_transmission(const optics::LossBreakdown& b, const optics::MirrorSet& mirrors)
{
    const double t_in = optics::ppm_to_fraction(b.loss_air_mirror_ppm);
    const double t_out =
        optics::ppm_to_fraction(b.loss_sample_mirror_weighted_ppm) * mirrors.sample_transmission_fraction;
    const double total = optics::ppm_to_fraction(b.loss_effective_ppm);
    if (!(total > 0.0)) return 0.0;
    return 4.0 * t_in * t_out / (total * total);
}

FinesseMap synthesize_finesse_map(const HeightMap& height, const RoughnessField& roughness,
                                  const optics::MirrorSet& mirrors,
                                  const optics::OpticalConstants& constants,
                                  double loss_additional_ppm, const ScanConfig& config)
{
    config.validate();
    mirrors.validate();
    constants.validate();
    if (!(height.grid == roughness.grid))
        throw std::invalid_argument("registration error: height map and roughness grids differ");
    if (height.thickness_um.size() != height.grid.size() ||
        roughness.sigma_nm.size() != roughness.grid.size())
        throw std::invalid_argument("grid data size does not match its geometry");

    const rng::CounterRng gen(config.seed, kFinesseNoise);
    const double floor_v = config.transmission_floor_factor * config.noise_rms_v;

    FinesseMap map;
    map.grid = height.grid;
    map.pixels.resize(map.grid.size());
    for (std::size_t i = 0; i < map.pixels.size(); ++i) {
        const double t_nm = height.thickness_um[i] * 1e3;
        const auto lb = optics::effective_losses({t_nm, roughness.sigma_nm[i]}, mirrors, constants,
                                                 loss_additional_ppm);
        double finesse = lb.finesse;
        if (config.finesse_noise_relative > 0.0)
            finesse *= std::max(0.05, 1.0 + config.finesse_noise_relative * gen.normal(i));

        const optics::HybridGeometry geom{config.cavity_length_um * 1e3, t_nm, 1.0};
        auto& px = map.pixels[i];
        px.finesse = finesse;
        px.linewidth_ghz = optics::free_spectral_range_ghz(geom, constants) / finesse;
        px.splitting_ghz = 0.0;
        px.transmission = cavity_transmission(lb, mirrors);
        px.valid = config.detector_gain_v * px.transmission >= floor_v && px.transmission > 0.0;
    }
    return map;
}

double sweep_position(double time_s, int modes_in_sweep, const ScanConfig& config)
{
    const double period = 1.0 / config.sweep_hz;
    double phase = std::fmod(time_s, period) / period;
    if (phase < 0.0) phase += 1.0;
    const double u = phase < 0.5 ? 2.0 * phase : 2.0 * (1.0 - phase);

    // Cubic slope loss confined to the outer 10 % at both ends.
    const double k = config.piezo_nonlinearity / 0.03;
    double d = u;
    if (u < 0.1) {
        const double e = 0.1 - u;
        d = u + k * e * e * e;
    } else if (u > 0.9) {
        const double e = u - 0.9;
        d = u - k * e * e * e;
    }
    return d * modes_in_sweep;
}

TransmissionTrace synthesize_trace(double finesse, int modes_in_sweep, double splitting_ghz,
                                   double linewidth_ghz, const ScanConfig& config,
                                   bool sidebands_on)
{
    config.validate();
    if (!(finesse > 1.0)) throw std::invalid_argument("trace finesse must exceed 1");
    if (modes_in_sweep < 2) throw std::invalid_argument("a trace needs at least 2 modes in the sweep");
    if (!(splitting_ghz >= 0.0)) throw std::invalid_argument("splitting must be >= 0");
    if ((splitting_ghz > 0.0 || sidebands_on) && !(linewidth_ghz > 0.0))
        throw std::invalid_argument("splitting and sidebands need a positive linewidth");

    const double width = 1.0 / finesse;  // FSR units
    const double fsr_ghz = finesse * linewidth_ghz;
    struct Peak { double x, a; };
    std::vector<Peak> peaks;
    for (int j = -1; j <= modes_in_sweep; ++j) {
        const double x0 = j + config.mode_phase;
        std::vector<Peak> carriers{{x0, 1.0}};
        if (splitting_ghz > 0.0)
            carriers.push_back({x0 + splitting_ghz / fsr_ghz, config.polarization_amplitude_ratio});
        for (const auto& c : carriers) {
            peaks.push_back(c);
            if (sidebands_on) {
                const double off = config.sideband_ghz / fsr_ghz;
                const double a = c.a * config.sideband_relative_amplitude;
                peaks.push_back({c.x - off, a});
                peaks.push_back({c.x + off, a});
            }
        }
    }

    const std::size_t n = config.samples_per_trace;
    const double period = 1.0 / config.sweep_hz;
    const rng::CounterRng gen(config.seed, kTraceNoise);
    TransmissionTrace trace;
    trace.sweep_hz = config.sweep_hz;
    trace.sweep_amplitude_v = static_cast<double>(modes_in_sweep);  // 1 V per FSR
    trace.sweep_start_s = 0.0;
    trace.time_s.resize(n);
    trace.voltage_v.resize(n);
    const double hw2 = 0.25 * width * width;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = period * static_cast<double>(i) / static_cast<double>(n);
        const double x = sweep_position(t, modes_in_sweep, config);
        double v = 0.0;
        for (const auto& p : peaks) {
            const double d = x - p.x;
            v += p.a * hw2 / (d * d + hw2);
        }
        v *= config.peak_voltage_v;
        if (config.noise_rms_v > 0.0) v += config.noise_rms_v * gen.normal(i);
        trace.time_s[i] = t;
        trace.voltage_v[i] = v;
    }
    return trace;
}

DispersionSpectra synthesize_dispersion_spectra(double diamond_thickness_nm,
                                                const optics::OpticalConstants& constants,
                                                const DispersionConfig& config)
{
    constants.validate();
    if (config.length_steps < 1) throw std::invalid_argument("need at least one length step");
    if (!(config.band.upper_nm > config.band.lower_nm))
        throw std::invalid_argument("dispersion band is empty");
    if (!(config.wavelength_step_nm > 0.0) || !(config.instrument_fwhm_nm > 0.0))
        throw std::invalid_argument("wavelength step and instrument width must be positive");

    DispersionSpectra out;
    const auto nw = static_cast<std::size_t>(
        std::floor((config.band.upper_nm - config.band.lower_nm) / config.wavelength_step_nm + 1e-9)) + 1;
    out.wavelength_nm.resize(nw);
    for (std::size_t i = 0; i < nw; ++i)
        out.wavelength_nm[i] = config.band.lower_nm + static_cast<double>(i) * config.wavelength_step_nm;

    const double reach = 6.0 * config.instrument_fwhm_nm;
    const optics::WavelengthBand wide{config.band.lower_nm - reach, config.band.upper_nm + reach};
    const rng::CounterRng gen(config.seed, kSpectraNoise);
    const double inv_w2 = 1.0 / (config.instrument_fwhm_nm * config.instrument_fwhm_nm);

    out.intensity.assign(nw * static_cast<std::size_t>(config.length_steps), 0.0);
    for (int s = 0; s < config.length_steps; ++s) {
        const double gap = config.air_gap_start_nm + config.air_gap_step_nm * s;
        out.step_label.push_back(s);
        out.air_gap_nm.push_back(gap);
        const auto lines =
            optics::hybrid_resonances_nm({gap, diamond_thickness_nm, 1.0}, constants, wide);
        for (std::size_t i = 0; i < nw; ++i) {
            double v = 0.0;
            for (double l : lines) {
                const double d = out.wavelength_nm[i] - l;
                v += std::exp(-kFourLn2 * d * d * inv_w2);
            }
            const std::size_t idx = static_cast<std::size_t>(s) * nw + i;
            if (config.noise_relative > 0.0) v += config.noise_relative * gen.normal(idx);
            out.intensity[idx] = v;
        }
    }
    return out;
}

double poisson_deviate(double mean, double uniform, double normal)
{
    if (!(mean > 0.0)) return 0.0;
    if (mean > 500.0) return std::max(0.0, std::round(mean + std::sqrt(mean) * normal));
    double p = std::exp(-mean);
    double cdf = p;
    double k = 0.0;
    while (uniform > cdf && p > 0.0) {
        k += 1.0;
        p *= mean / k;
        cdf += p;
    }
    return k;
}

PleScanSet synthesize_ple_scans(Emitter emitter, double homogeneous_fwhm_mhz,
                                double diffusion_sigma_mhz, int n_scans,
                                std::optional<Bistability> bistability, std::uint64_t seed,
                                const PleConfig& config)
{
    if (!(homogeneous_fwhm_mhz > 0.0)) throw std::invalid_argument("homogeneous linewidth must be positive");
    if (!(diffusion_sigma_mhz >= 0.0)) throw std::invalid_argument("diffusion sigma must be >= 0");
    if (n_scans < 1) throw std::invalid_argument("need at least one scan");
    if (!(config.range_mhz > 0.0) || !(config.step_mhz > 0.0))
        throw std::invalid_argument("PLE range and step must be positive");

    const rng::CounterRng counts_gen(seed, kPleCounts);
    const rng::CounterRng center_gen(seed, kPleCenter);
    const rng::CounterRng telegraph_gen(seed, kPleTelegraph);

    const auto points = static_cast<std::size_t>(std::floor(2.0 * config.range_mhz / config.step_mhz + 1e-9)) + 1;
    PleScanSet set;
    set.emitter = emitter;
    set.repump = emitter == Emitter::nv ? "every step" : "before each scan";

    const double fwhm_g = lineshape::kFwhmPerSigma * diffusion_sigma_mhz;
    // Area-normalized Voigt scaled to the requested peak height.
    const double voigt_peak = lineshape::voigt(0.0, 0.0, homogeneous_fwhm_mhz, fwhm_g);

    int state = 0;
    for (int s = 0; s < n_scans; ++s) {
        if (bistability && s > 0 && telegraph_gen.uniform(static_cast<std::uint64_t>(s)) < bistability->switch_probability)
            state = 1 - state;
        double center = 0.0;
        if (emitter == Emitter::snv) {
            center = diffusion_sigma_mhz * center_gen.normal(static_cast<std::uint64_t>(s));
            if (bistability) center += state * bistability->splitting_mhz;
        } else if (bistability) {
            center = state * bistability->splitting_mhz;
        }

        PleScan scan;
        scan.freq_mhz.resize(points);
        scan.counts.resize(points);
        for (std::size_t i = 0; i < points; ++i) {
            const double f = -config.range_mhz + static_cast<double>(i) * config.step_mhz;
            const double shape = emitter == Emitter::snv
                                     ? lineshape::lorentzian(f, center, homogeneous_fwhm_mhz)
                                     : lineshape::voigt(f, center, homogeneous_fwhm_mhz, fwhm_g) / voigt_peak;
            const double mean = config.background_counts + config.peak_counts * shape;
            const std::uint64_t idx = (static_cast<std::uint64_t>(s) << 24) + i;
            scan.freq_mhz[i] = f;
            scan.counts[i] = poisson_deviate(mean, counts_gen.uniform(idx, 0), counts_gen.normal(idx));
        }
        set.scans.push_back(std::move(scan));
    }
    return set;
}

std::vector<LengthSweepPoint> synthesize_length_sweep(const std::vector<double>& lengths_um,
                                                      const optics::FiberTip& fiber,
                                                      const optics::MirrorSet& mirrors,
                                                      const optics::OpticalConstants& constants,
                                                      double loss_additional_ppm,
                                                      double noise_relative, std::uint64_t seed)
{
    fiber.validate();
    const rng::CounterRng gen(seed, kLengthSweep);
    const auto bare = optics::effective_losses({0.0, 0.0}, mirrors, constants, loss_additional_ppm);
    std::vector<LengthSweepPoint> out;
    out.reserve(lengths_um.size());
    for (std::size_t i = 0; i < lengths_um.size(); ++i) {
        const double clip = optics::clipping_loss_ppm(lengths_um[i], fiber, constants);
        double f = 2.0 * optics::kPi / optics::ppm_to_fraction(bare.loss_effective_ppm + clip);
        if (noise_relative > 0.0) f *= 1.0 + noise_relative * gen.normal(i);
        out.push_back({lengths_um[i], f});
    }
    return out;
}

}  // namespace dcav::synth
