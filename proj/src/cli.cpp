#include "dcav/cli.hpp"

#include "dcav/config.hpp"
#include "dcav/io.hpp"
#include "dcav/modelfit.hpp"
#include "dcav/render.hpp"
#include "dcav/synth.hpp"
#include "dcav/tracefit.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>

namespace dcav::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Fit did not produce a usable result.
struct FitFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::optional<std::int64_t> seed;
    std::string out_dir = ".";
    std::string region;
    std::vector<std::string> sets;
    std::string input;
    std::string heightmap;
};

struct Context {
    std::string command;
    config::ToolConfig cfg;
    std::optional<modelfit::Region> region;
    fs::path out_dir;
    std::optional<config::Manifest> manifest;  // when --input names a manifest
    fs::path input;                            // data file otherwise
    fs::path heightmap;                        // analyze-scan with CSV input
    std::ostream* out = nullptr;

    config::Manifest result;  // written as manifest.json

    std::string config_hash() const { return config::fnv1a_hex(config::to_json(cfg)); }

    fs::path input_file(const std::string& role) const
    {
        if (manifest) return manifest->file(role);
        if (input.empty()) throw InputError(command + ": --input is required");
        return input;
    }

    void write_text(const std::string& name, const std::string& text, const std::string& role)
    {
        std::ofstream f(out_dir / name, std::ios::binary | std::ios::trunc);
        if (!f) throw InputError((out_dir / name).string() + ": cannot open for writing");
        f << text;
        result.files[role] = name;
    }

    void add_file(const std::string& name, const std::string& role) { result.files[role] = name; }
};

std::optional<modelfit::Region> parse_region(const std::string& text)
{
    if (text.empty()) return std::nullopt;
    std::vector<double> v;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        const std::string part = text.substr(start, comma - start);
        double x = 0.0;
        const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), x);
        if (part.empty() || ec != std::errc() || p != part.data() + part.size() || !std::isfinite(x))
            throw InputError("--region expects x0,y0,x1,y1 in um, got '" + text + "'");
        v.push_back(x);
        start = comma + 1;
    }
    if (v.size() != 4) throw InputError("--region expects four numbers x0,y0,x1,y1, got '" + text + "'");
    return modelfit::Region{v[0], v[1], v[2], v[3]};
}

json report_json(const modelfit::FitReport& r)
{
    json params = json::array();
    for (std::size_t i = 0; i < r.names.size(); ++i)
        params.push_back({{"name", r.names[i]},
                          {"value", r.values[i]},
                          {"std_error", r.std_errors[i]},
                          {"fixed", static_cast<bool>(r.fixed[i])},
                          {"at_bound", static_cast<bool>(r.at_bound[i])}});
    return {{"parameters", params},
            {"residual_rms", r.residual_rms},
            {"r_squared", r.r_squared},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"message", r.message}};
}

json lineshape_json(const tracefit::LineshapeFit& f)
{
    return {{"model", tracefit::to_string(f.model)},
            {"center_mhz", f.center_mhz},
            {"fwhm_total_mhz", f.fwhm_total_mhz},
            {"fwhm_lorentzian_mhz", f.fwhm_lorentzian_mhz},
            {"fwhm_gaussian_mhz", f.fwhm_gaussian_mhz},
            {"center_error_mhz", f.center_error},
            {"fwhm_total_error_mhz", f.fwhm_total_error},
            {"fwhm_lorentzian_error_mhz", f.fwhm_lorentzian_error},
            {"fwhm_gaussian_error_mhz", f.fwhm_gaussian_error},
            {"amplitude", f.amplitude},
            {"offset", f.offset},
            {"r_squared", f.r_squared},
            {"lorentzian_at_floor", f.lorentzian_at_floor}};
}

// Runs a fit, turning runtime failures into FitFailure. Argument errors
// (std::logic_error) pass through as input errors.
template <class F>
auto fit_step(const std::string& what, F&& f)
{
    try {
        return f();
    } catch (const tracefit::FitError& e) {
        throw FitFailure(what + ": " + e.what());
    } catch (const io::FormatError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw FitFailure(what + ": " + e.what());
    }
}

// ---------------------------------------------------------------- simulate

void simulate_scan(Context& c)
{
    const auto& cfg = c.cfg;
    const auto truth = synth::make_wedge_heightmap(cfg.scan_width_um, cfg.scan_height_um, cfg.scan_step_um,
                                                   cfg.base_thickness_um, cfg.slope_um_per_100um, cfg.slope_direction_rad);
    const auto rough = synth::sample_roughness_field(truth.grid, cfg.roughness_mean_nm, cfg.roughness_spread_nm,
                                                     cfg.correlation_length_um, static_cast<std::uint64_t>(cfg.seed));
    const auto map = synth::synthesize_finesse_map(truth, rough, cfg.mirrors(), cfg.constants(), cfg.loss_additional_ppm,
                                                   cfg.scan_config());

    // The measured height map misses the absolute offset.
    auto measured = truth;
    measured.frame = "white-light height, offset " + io::format_number(-cfg.registration_offset_um) + " um";
    for (double& t : measured.thickness_um) t = std::max(0.0, t - cfg.registration_offset_um);

    const auto& g = truth.grid;
    const auto ix = static_cast<std::size_t>(std::clamp<long>(std::lround((cfg.anchor_x_um - g.origin_x_um) / g.pitch_um), 0, static_cast<long>(g.nx) - 1));
    const auto iy = static_cast<std::size_t>(std::clamp<long>(std::lround((cfg.anchor_y_um - g.origin_y_um) / g.pitch_um), 0, static_cast<long>(g.ny) - 1));

    io::write_heightmap(c.out_dir / "heightmap.csv", measured);
    io::write_finesse_map(c.out_dir / "finesse_map.csv", map);
    c.add_file("heightmap.csv", "heightmap");
    c.add_file("finesse_map.csv", "finesse_map");
    c.result.kind = "scan";
    c.result.parameters = {{"roughness_mean_nm", cfg.roughness_mean_nm},
                           {"roughness_spread_nm", cfg.roughness_spread_nm},
                           {"loss_additional_ppm", cfg.loss_additional_ppm},
                           {"registration_offset_um", cfg.registration_offset_um},
                           {"anchor_x_um", g.x(ix)},
                           {"anchor_y_um", g.y(iy)},
                           {"anchor_thickness_um", truth.at(ix, iy)}};
    std::size_t valid = 0;
    for (const auto& p : map.pixels) valid += p.valid ? 1 : 0;
    *c.out << "simulate-scan: " << g.nx << " x " << g.ny << " pixels, " << valid << " valid\n";
}

void simulate_trace(Context& c)
{
    const auto& cfg = c.cfg;
    const auto tr = synth::synthesize_trace(cfg.trace_finesse, static_cast<int>(cfg.modes_in_sweep), cfg.splitting_ghz,
                                            cfg.linewidth_ghz, cfg.scan_config(), cfg.sidebands);
    io::write_trace(c.out_dir / "trace.csv", tr);
    c.add_file("trace.csv", "trace");
    c.result.kind = "traces";
    c.result.parameters = {{"finesse", cfg.trace_finesse},
                           {"splitting_ghz", cfg.splitting_ghz},
                           {"linewidth_ghz", cfg.linewidth_ghz},
                           {"sideband_ghz", cfg.sideband_ghz}};
    *c.out << "simulate-trace: " << tr.time_s.size() << " samples\n";
}

void simulate_spectra(Context& c)
{
    const auto& cfg = c.cfg;
    synth::DispersionConfig d;
    d.air_gap_start_nm = cfg.air_gap_start_nm;
    d.air_gap_step_nm = cfg.air_gap_step_nm;
    d.length_steps = static_cast<int>(cfg.length_steps);
    d.band = {cfg.band_lower_nm, cfg.band_upper_nm};
    d.wavelength_step_nm = cfg.wavelength_step_nm;
    d.instrument_fwhm_nm = cfg.instrument_fwhm_nm;
    d.noise_relative = cfg.spectra_noise_relative;
    d.seed = static_cast<std::uint64_t>(cfg.seed);
    const auto sp = synth::synthesize_dispersion_spectra(cfg.thickness_nm, cfg.constants(), d);
    io::write_spectra(c.out_dir / "spectra.csv", sp);
    c.add_file("spectra.csv", "spectra");
    c.result.kind = "spectra";
    c.result.parameters = {{"thickness_nm", cfg.thickness_nm},
                           {"air_gap_start_nm", cfg.air_gap_start_nm},
                           {"air_gap_step_nm", cfg.air_gap_step_nm}};
    *c.out << "simulate-spectra: " << sp.step_label.size() << " steps x " << sp.wavelength_nm.size() << " wavelengths\n";
}

void simulate_ple(Context& c)
{
    const auto& cfg = c.cfg;
    std::optional<synth::Bistability> bi;
    if (cfg.bistability_splitting_mhz > 0.0) bi = synth::Bistability{cfg.bistability_splitting_mhz, cfg.switch_probability};
    const auto emitter = cfg.emitter == "nv" ? synth::Emitter::nv : synth::Emitter::snv;
    const auto set = synth::synthesize_ple_scans(emitter, cfg.homogeneous_fwhm_mhz, cfg.diffusion_sigma_mhz,
                                                 static_cast<int>(cfg.n_scans), bi, static_cast<std::uint64_t>(cfg.seed),
                                                 {cfg.ple_range_mhz, cfg.ple_step_mhz, cfg.peak_counts, cfg.background_counts});
    io::write_ple(c.out_dir / "ple.csv", set);
    c.add_file("ple.csv", "ple");
    c.result.kind = "ple";
    c.result.parameters = {{"homogeneous_fwhm_mhz", cfg.homogeneous_fwhm_mhz},
                           {"diffusion_sigma_mhz", cfg.diffusion_sigma_mhz},
                           {"bistability_splitting_mhz", cfg.bistability_splitting_mhz}};
    *c.out << "simulate-ple: " << set.scans.size() << " scans (" << cfg.emitter << ")\n";
}

void simulate_length_sweep(Context& c)
{
    const auto& cfg = c.cfg;
    std::vector<double> lengths;
    for (long k = 0;; ++k) {
        const double l = cfg.length_min_um + static_cast<double>(k) * cfg.length_step_um;
        if (l > cfg.length_max_um + 1e-9 * cfg.length_step_um) break;
        lengths.push_back(l);
    }
    const auto data = synth::synthesize_length_sweep(lengths, cfg.fiber(), cfg.mirrors(), cfg.constants(),
                                                     cfg.loss_additional_ppm, cfg.length_noise_relative,
                                                     static_cast<std::uint64_t>(cfg.seed));
    io::write_length_sweep(c.out_dir / "length_sweep.csv", data);
    c.add_file("length_sweep.csv", "length_sweep");
    c.result.kind = "length_sweep";
    c.result.parameters = {{"loss_additional_ppm", cfg.loss_additional_ppm},
                           {"feature_diameter_um", cfg.feature_diameter_um},
                           {"roc_um", cfg.roc_um}};
    *c.out << "simulate-length-sweep: " << data.size() << " lengths\n";
}

// ---------------------------------------------------------------- analyze

void analyze_trace(Context& c)
{
    const auto tr = io::read_trace(c.input_file("trace"));
    json j;
    bool ok = true;
    if (c.cfg.trace_analysis == "finesse") {
        tracefit::FinesseOptions opt;
        opt.r2_floor = c.cfg.r2_floor;
        const auto r = fit_step("finesse fit", [&] {
            return tracefit::fit_finesse(tr, {c.cfg.acceptance_min_s, c.cfg.acceptance_max_s}, opt);
        });
        j = {{"analysis", "finesse"},
             {"valid", r.valid},
             {"reason", r.reason},
             {"finesse", r.finesse},
             {"mode_distance_s", r.mode_distance_s},
             {"linewidth_s", r.linewidth_s},
             {"chosen_peak", r.chosen_peak}};
        if (r.chosen_peak >= 0) {
            const auto& f = r.fits[r.chosen_peak];
            j["peak"] = {{"center_s", f.center}, {"fwhm_s", f.width_fwhm}, {"r_squared", f.r_squared}, {"doublet", f.doublet}};
        }
        ok = r.valid;
        *c.out << "analyze-trace: finesse " << r.finesse << (r.valid ? "" : " (rejected: " + r.reason + ")") << '\n';
    } else {
        tracefit::PolarizationOptions opt;
        opt.r2_floor = c.cfg.r2_floor;
        const auto r = fit_step("polarization fit", [&] { return tracefit::fit_polarization(tr, c.cfg.sideband_ghz, opt); });
        j = {{"analysis", "polarization"},
             {"accepted", r.accepted},
             {"resolved", r.resolved},
             {"splitting_ghz", r.splitting_ghz},
             {"linewidth_ghz", r.linewidth_ghz},
             {"r_squared", r.r_squared},
             {"peaks_in_model", r.peaks_in_model},
             {"sideband_spacing_s", r.sideband_spacing_s},
             {"reason", r.reason}};
        ok = r.accepted;
        *c.out << "analyze-trace: splitting " << r.splitting_ghz << " GHz, linewidth " << r.linewidth_ghz << " GHz"
               << (r.resolved ? "" : " (unresolved)") << '\n';
    }
    c.write_text("trace_result.json", j.dump(2) + "\n", "report");
    c.result.kind = "report";
    if (!ok) throw FitFailure("analyze-trace: " + j.value("reason", std::string("fit rejected")));
}

void analyze_scan(Context& c)
{
    fs::path height_path = c.heightmap, scan_path;
    double anchor_t = c.cfg.anchor_thickness_um;
    double ax = c.cfg.anchor_x_um, ay = c.cfg.anchor_y_um;
    if (c.manifest) {
        if (height_path.empty()) height_path = c.manifest->file("heightmap");
        scan_path = c.manifest->file("finesse_map");
        const auto& p = c.manifest->parameters;
        if (anchor_t < 0.0 && p.count("anchor_thickness_um")) {
            anchor_t = p.at("anchor_thickness_um");
            if (p.count("anchor_x_um")) ax = p.at("anchor_x_um");
            if (p.count("anchor_y_um")) ay = p.at("anchor_y_um");
        }
    } else {
        scan_path = c.input_file("finesse_map");
    }
    if (height_path.empty()) throw InputError("analyze-scan: --heightmap is required with a CSV input");
    if (anchor_t < 0.0)
        throw InputError("analyze-scan: anchor thickness unknown; set anchor_thickness_um (dispersion-derived, um)");

    const auto height = io::read_heightmap(height_path);
    const auto scan = io::read_finesse_map(scan_path);
    const auto reg = modelfit::register_heightmap(height, scan, ax, ay, anchor_t, c.region);
    const auto stats = modelfit::segment_statistics(reg.samples, c.cfg.segment_nm, c.cfg.histogram_bin,
                                                    static_cast<std::size_t>(c.cfg.min_segment_samples));

    io::write_samples(c.out_dir / "samples.csv", reg.samples);
    c.add_file("samples.csv", "samples");
    std::vector<std::vector<double>> rows;
    for (const auto& s : stats)
        rows.push_back({s.center_nm, static_cast<double>(s.count), s.mean, s.sigma, s.histogram_fit ? 1.0 : 0.0});
    io::write_csv(c.out_dir / "segments.csv", {"center_nm", "count", "mean", "sigma", "histogram_fit"}, rows);
    c.add_file("segments.csv", "segments");

    std::size_t valid = 0;
    for (const auto& p : scan.pixels) valid += p.valid ? 1 : 0;
    const json j{{"offset_um", reg.offset_um},
                 {"max_displacement_um", reg.max_displacement_um},
                 {"anchor", {{"x_um", ax}, {"y_um", ay}, {"thickness_um", anchor_t}}},
                 {"pixels", scan.pixels.size()},
                 {"valid_pixels", valid},
                 {"samples", reg.samples.size()},
                 {"segments", stats.size()}};
    c.write_text("scan_summary.json", j.dump(2) + "\n", "report");
    c.result.kind = "samples";
    c.result.parameters = {{"offset_um", reg.offset_um}};
    *c.out << "analyze-scan: " << reg.samples.size() << " samples, offset " << reg.offset_um << " um, " << stats.size()
           << " segments\n";
}

// ---------------------------------------------------------------- fits

void fit_loss(Context& c)
{
    auto samples = io::read_samples(c.input_file("samples"));
    if (c.region) {
        std::erase_if(samples, [&](const auto& s) { return !c.region->contains(s.x_um, s.y_um); });
    }
    const auto& cfg = c.cfg;
    const auto min_samples = static_cast<std::size_t>(cfg.min_segment_samples);
    modelfit::weight_by_segment_scatter(samples, cfg.segment_nm, min_samples);
    modelfit::LossFitOptions opt;
    opt.shift_bound_nm = cfg.shift_bound_nm;
    opt.roughness_max_nm = cfg.roughness_max_nm;
    const auto report = fit_step("loss-model fit", [&] { return modelfit::fit_loss_model(samples, cfg.mirrors(), cfg.constants(), opt); });

    json j{{"samples", samples.size()}, {"weighting", "inverse segment variance"}, {"loss_model", report_json(report)}};
    const auto stats = modelfit::segment_statistics(samples, cfg.segment_nm, cfg.histogram_bin, min_samples);
    j["segments"] = stats.size();
    std::optional<modelfit::Envelopes> env;
    if (stats.size() >= 5) {
        env = fit_step("envelope fit", [&] { return modelfit::fit_envelopes(stats, cfg.mirrors(), cfg.constants(), opt); });
        j["envelopes"] = {{"upper_finesse", report_json(env->upper)},
                          {"lower_finesse", report_json(env->lower)},
                          {"best_area_roughness_nm", env->upper.value("roughness_nm")},
                          {"fraction_between", modelfit::fraction_between_envelopes(samples, *env, cfg.mirrors(), cfg.constants())}};
    } else {
        j["envelopes"] = nullptr;
    }
    c.write_text("fit_loss.json", j.dump(2) + "\n", "report");

    double t0 = 1e300, t1 = -1e300;
    for (const auto& s : samples) t0 = std::min(t0, s.thickness_um), t1 = std::max(t1, s.thickness_um);
    std::vector<std::vector<double>> rows;
    for (int k = 0; k <= 400; ++k) {
        const double t = t0 + (t1 - t0) * k / 400.0;
        std::vector<double> row{t, modelfit::loss_model_finesse(report, t, cfg.mirrors(), cfg.constants())};
        if (env) {
            row.push_back(modelfit::loss_model_finesse(env->upper, t, cfg.mirrors(), cfg.constants()));
            row.push_back(modelfit::loss_model_finesse(env->lower, t, cfg.mirrors(), cfg.constants()));
        }
        rows.push_back(std::move(row));
    }
    std::vector<std::string> header{"thickness_um", "finesse_model"};
    if (env) header.insert(header.end(), {"finesse_upper", "finesse_lower"});
    io::write_csv(c.out_dir / "fit_loss_curve.csv", header, rows);
    c.add_file("fit_loss_curve.csv", "curve");
    c.result.kind = "report";
    for (std::size_t i = 0; i < report.names.size(); ++i) c.result.parameters[report.names[i]] = report.values[i];

    *c.out << "fit-loss: roughness " << report.value("roughness_nm") << " nm, L_add " << report.value("loss_additional_ppm")
           << " ppm, shift " << report.value("thickness_shift_nm") << " nm\n";
    if (!report.converged) throw FitFailure("loss-model fit did not converge: " + report.message);
}

void fit_clipping(Context& c)
{
    const auto data = io::read_length_sweep(c.input_file("length_sweep"));
    const auto& cfg = c.cfg;
    const auto rep = fit_step("clipping fit", [&] { return modelfit::fit_clipping(data, cfg.fiber(), cfg.mirrors(), cfg.constants()); });
    const json j{{"fit", report_json(rep.fit)},
                 {"plateau_finesse", rep.plateau_finesse},
                 {"rolloff_length_um", rep.rolloff_length_um},
                 {"diameter_identifiable", rep.diameter_identifiable},
                 {"roc_um", cfg.roc_um}};
    c.write_text("fit_clipping.json", j.dump(2) + "\n", "report");
    c.result.kind = "report";
    c.result.parameters = {{"loss_additional_ppm", rep.fit.value("loss_additional_ppm")},
                           {"feature_diameter_um", rep.fit.value("feature_diameter_um")}};
    *c.out << "fit-clipping: L_add " << rep.fit.value("loss_additional_ppm") << " ppm, D " << rep.fit.value("feature_diameter_um")
           << " um" << (rep.diameter_identifiable ? "" : " (unidentifiable)") << ", plateau " << rep.plateau_finesse << '\n';
    if (!rep.fit.converged) throw FitFailure("clipping fit did not converge: " + rep.fit.message);
}

void fit_dispersion(Context& c)
{
    const auto sp = io::read_spectra(c.input_file("spectra"));
    const auto& cfg = c.cfg;
    const modelfit::DispersionGuess guess{cfg.guess_thickness_nm, cfg.guess_air_gap_nm, cfg.guess_air_gap_step_nm,
                                          cfg.guess_thickness_halfwidth_nm, cfg.guess_air_gap_halfwidth_nm};
    const auto rep = fit_step("dispersion fit", [&] { return modelfit::fit_dispersion(sp, cfg.constants(), guess); });
    int tracks = 0;
    for (const auto& l : rep.lines) tracks = std::max(tracks, l.track + 1);
    const json j{{"fit", report_json(rep.fit)}, {"lines", rep.lines.size()}, {"tracks", tracks}, {"track_orders", rep.track_orders}};
    c.write_text("fit_dispersion.json", j.dump(2) + "\n", "report");
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < rep.step_labels.size(); ++i) rows.push_back({static_cast<double>(rep.step_labels[i]), rep.air_gap_nm[i]});
    io::write_csv(c.out_dir / "air_gap.csv", {"length_step", "air_gap_nm"}, rows);
    c.add_file("air_gap.csv", "air_gap");
    std::vector<std::vector<double>> line_rows;
    for (const auto& l : rep.lines) line_rows.push_back({static_cast<double>(l.step_label), l.wavelength_nm, static_cast<double>(l.track)});
    io::write_csv(c.out_dir / "lines.csv", {"length_step", "wavelength_nm", "track"}, line_rows);
    c.add_file("lines.csv", "lines");
    c.result.kind = "report";
    c.result.parameters = {{"thickness_nm", rep.fit.value("thickness_nm")}};
    *c.out << "fit-dispersion: t_d " << rep.fit.value("thickness_nm") << " +- " << rep.fit.error("thickness_nm") << " nm from "
           << rep.lines.size() << " lines\n";
    if (!rep.fit.converged) throw FitFailure("dispersion fit did not converge: " + rep.fit.message);
}

void fit_ple(Context& c)
{
    const auto set = io::read_ple(c.input_file("ple"));
    const auto& cfg = c.cfg;
    if (set.scans.empty()) throw InputError("fit-ple: no scans");
    const bool nv = set.emitter == synth::Emitter::nv;
    std::string model_name = cfg.ple_model;
    if (model_name == "auto") model_name = nv ? "voigt" : "lorentzian";
    const auto model = tracefit::parse_line_model(model_name);
    tracefit::PleFitOptions opt;
    if (model == tracefit::LineModel::voigt) opt.lorentzian_floor_mhz = cfg.nv_lorentzian_floor_mhz;

    std::vector<tracefit::LineshapeFit> fits;
    std::vector<std::vector<double>> rows;
    json failures = json::array();
    for (std::size_t s = 0; s < set.scans.size(); ++s) {
        try {
            const auto f = tracefit::fit_ple_scan(set.scans[s].freq_mhz, set.scans[s].counts, model, opt);
            fits.push_back(f);
            rows.push_back({static_cast<double>(s), f.center_mhz, f.fwhm_total_mhz, f.fwhm_lorentzian_mhz, f.fwhm_gaussian_mhz, f.r_squared});
        } catch (const tracefit::FitError& e) {
            failures.push_back({{"scan_id", s}, {"reason", e.what()}});
        }
    }
    io::write_csv(c.out_dir / "ple_fits.csv",
                  {"scan_id", "center_mhz", "fwhm_total_mhz", "fwhm_lorentzian_mhz", "fwhm_gaussian_mhz", "r_squared"}, rows);
    c.add_file("ple_fits.csv", "fits");

    json j{{"emitter", nv ? "nv" : "snv"}, {"model", model_name}, {"scans", set.scans.size()}, {"fitted", fits.size()}, {"failures", failures}};
    if (!fits.empty()) {
        const auto stats = tracefit::ple_statistics(fits);
        j["fwhm_total_mhz"] = {{"median", stats.median}, {"min", stats.min}, {"max", stats.max}};
        c.result.parameters["median_fwhm_mhz"] = stats.median;
    }
    if (!nv && set.scans.size() >= 10) {
        const auto d = fit_step("spectral diffusion", [&] { return tracefit::spectral_diffusion_average(set); });
        j["spectral_diffusion"] = {{"average_fit", lineshape_json(d.gaussian_fit)},
                                   {"centered_fit", lineshape_json(d.dephasing_fit)},
                                   {"deconvolved_fit", lineshape_json(d.diffusion_fit)},
                                   {"selected", d.selected_count},
                                   {"warning", d.warning}};
        c.result.parameters["dephasing_fwhm_mhz"] = d.dephasing_fit.fwhm_lorentzian_mhz;
        c.result.parameters["average_gaussian_fwhm_mhz"] = d.gaussian_fit.fwhm_gaussian_mhz;
        c.result.parameters["diffusion_fwhm_mhz"] = d.diffusion_fit.fwhm_gaussian_mhz;
        *c.out << "fit-ple: dephasing " << d.dephasing_fit.fwhm_lorentzian_mhz << " MHz, average Gaussian "
               << d.gaussian_fit.fwhm_gaussian_mhz << " MHz, diffusion " << d.diffusion_fit.fwhm_gaussian_mhz << " MHz\n";
    }
    c.write_text("fit_ple.json", j.dump(2) + "\n", "report");
    c.result.kind = "report";
    *c.out << "fit-ple: " << fits.size() << " of " << set.scans.size() << " scans fitted\n";
    if (fits.empty()) throw FitFailure("fit-ple: no scan could be fitted");
}

// ---------------------------------------------------------------- render

std::string peek_header(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw io::FormatError(path.string(), 0, 0, "cannot open file");
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        return line;
    }
    return {};
}

void render_heatmap(Context& c, const GridGeometry& g, const std::vector<double>& values, std::vector<bool> valid,
                    const std::string& title, const std::string& unit, const std::string& stem)
{
    if (c.region)
        for (std::size_t iy = 0; iy < g.ny; ++iy)
            for (std::size_t ix = 0; ix < g.nx; ++ix)
                if (!c.region->contains(g.x(ix), g.y(iy))) valid[g.index(ix, iy)] = false;
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (valid[i]) lo = std::min(lo, values[i]), hi = std::max(hi, values[i]);
    if (lo > hi) lo = 0.0, hi = 1.0;
    const auto scale = render::color_scale(lo, hi);
    c.write_text(stem + ".svg", render::heatmap_svg(g, values, valid, scale, title, unit), "svg");
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < scale.size(); ++k)
        rows.push_back({static_cast<double>(k), scale[k].value, static_cast<double>(scale[k].color.r),
                        static_cast<double>(scale[k].color.g), static_cast<double>(scale[k].color.b)});
    io::write_csv(c.out_dir / (stem + "_color_scale.csv"), {"level", "value_lower", "red", "green", "blue"}, rows);
    c.add_file(stem + "_color_scale.csv", "color_scale");
}

void render_cmd(Context& c)
{
    fs::path path;
    if (c.manifest) {
        for (const char* role : {"finesse_map", "heightmap", "samples", "length_sweep", "trace"})
            if (c.manifest->files.count(role)) {
                path = c.manifest->file(role);
                break;
            }
        if (path.empty()) throw InputError("render: manifest has nothing renderable");
    } else {
        path = c.input_file("input");
    }
    const std::string header = peek_header(path);
    c.result.kind = "report";
    if (header.rfind("x_um,y_um,finesse,", 0) == 0) {
        const auto m = io::read_finesse_map(path);
        std::vector<double> v;
        std::vector<bool> ok;
        for (const auto& p : m.pixels) v.push_back(p.finesse), ok.push_back(p.valid);
        render_heatmap(c, m.grid, v, ok, "Finesse", "", "finesse_map");
    } else if (header == "x_um,y_um,height_um") {
        const auto m = io::read_heightmap(path);
        render_heatmap(c, m.grid, m.thickness_um, std::vector<bool>(m.grid.size(), true), "Height", "um", "heightmap");
    } else if (header == "x_um,y_um,thickness_um,finesse") {
        const auto s = io::read_samples(path);
        render::Series pts{{}, {}, "samples", true};
        for (const auto& x : s)
            if (!c.region || c.region->contains(x.x_um, x.y_um)) pts.x.push_back(x.thickness_um), pts.y.push_back(x.finesse);
        c.write_text("samples.svg", render::curve_svg({pts}, "Finesse vs thickness", "thickness (um)", "finesse"), "svg");
    } else if (header == "length_um,finesse") {
        const auto d = io::read_length_sweep(path);
        render::Series pts{{}, {}, "finesse", true};
        for (const auto& p : d) pts.x.push_back(p.length_um), pts.y.push_back(p.finesse);
        c.write_text("length_sweep.svg", render::curve_svg({pts}, "Finesse vs cavity length", "cavity length (um)", "finesse"), "svg");
    } else if (header == "time_s,voltage_v") {
        const auto t = io::read_trace(path);
        render::Series line{t.time_s, t.voltage_v, "transmission", false};
        c.write_text("trace.svg", render::curve_svg({line}, "Transmission trace", "time (s)", "voltage (V)"), "svg");
    } else {
        throw io::FormatError(path.string(), 1, 1, "render: unsupported header '" + header + "'");
    }
    *c.out << "render: " << c.result.files.size() << " files\n";
}

using Handler = std::function<void(Context&)>;

struct CommandSpec {
    const char* name;
    const char* help;
    Handler handler;
    bool synthetic;
};

const std::vector<CommandSpec>& commands()
{
    static const std::vector<CommandSpec> list{
        {"simulate-scan", "Synthesize a wedge device: height map and finesse map", simulate_scan, true},
        {"simulate-trace", "Synthesize a transmission trace", simulate_trace, true},
        {"simulate-spectra", "Synthesize white-light dispersion spectra", simulate_spectra, true},
        {"simulate-ple", "Synthesize PLE scans", simulate_ple, true},
        {"simulate-length-sweep", "Synthesize finesse versus cavity length", simulate_length_sweep, true},
        {"analyze-trace", "Finesse or polarization splitting from one trace", analyze_trace, false},
        {"analyze-scan", "Register a height map to a finesse map; segment statistics", analyze_scan, false},
        {"fit-loss", "Fit roughness, additional loss and thickness shift; envelopes", fit_loss, false},
        {"fit-clipping", "Fit additional loss and feature diameter from a length sweep", fit_clipping, false},
        {"fit-dispersion", "Fit diamond thickness and air gaps from spectra", fit_dispersion, false},
        {"fit-ple", "Fit PLE lineshapes, spectral diffusion and statistics", fit_ple, false},
        {"render", "SVG heatmap or curve of a dataset", render_cmd, false},
    };
    return list;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Hybrid diamond-air cavity toolkit", "dcav"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::vector<Common> common(commands().size());
    std::vector<CLI::App*> subs;
    for (std::size_t k = 0; k < commands().size(); ++k) {
        auto* sub = app.add_subcommand(commands()[k].name, commands()[k].help);
        auto& o = common[k];
        sub->add_option("--config", o.config_path, "JSON configuration file");
        sub->add_option("--seed", o.seed, "RNG seed (overrides the config)");
        sub->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
        sub->add_option("--region", o.region, "Region of interest x0,y0,x1,y1 (um)");
        sub->add_option("--set", o.sets, "Override a config key: key=value (repeatable)");
        sub->add_option("--input", o.input, "Input data file or dataset manifest (.json)");
        if (std::string(commands()[k].name) == "analyze-scan")
            sub->add_option("--heightmap", o.heightmap, "Height map CSV (with a finesse-map CSV input)");
        subs.push_back(sub);
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    }

    std::size_t k = 0;
    while (k < subs.size() && !subs[k]->parsed()) ++k;
    const auto& spec = commands()[k];
    const auto& o = common[k];

    Context c;
    c.command = spec.name;
    c.out = &out;
    try {
        if (!o.config_path.empty()) c.cfg = config::load(o.config_path);
        for (const auto& s : o.sets) c.cfg = config::apply_assignment(c.cfg, s);
        if (o.seed) {
            c.cfg.seed = *o.seed;
            c.cfg.validate();
        }
        c.region = parse_region(o.region);
        c.out_dir = o.out_dir;
        fs::create_directories(c.out_dir);
        if (!o.input.empty()) {
            if (fs::path(o.input).extension() == ".json") c.manifest = config::load_manifest(o.input);
            else c.input = o.input;
        }
        c.heightmap = o.heightmap;

        c.result.command = spec.name;
        c.result.config_hash = c.config_hash();
        c.result.seed = c.cfg.seed;
        c.result.synthetic = spec.synthetic;
        c.write_text("config.json", config::to_json(c.cfg), "config");

        int code = kExitOk;
        std::string failure;
        try {
            spec.handler(c);
        } catch (const FitFailure& e) {
            code = kExitFit;
            failure = e.what();
        }
        if (c.result.kind.empty()) c.result.kind = "report";
        config::save(c.out_dir / "manifest.json", c.result);
        if (code != kExitOk) err << "fit failure: " << failure << '\n';
        return code;
    } catch (const FitFailure& e) {
        err << "fit failure: " << e.what() << '\n';
        return kExitFit;
    } catch (const tracefit::FitError& e) {
        err << "fit failure: " << e.what() << '\n';
        return kExitFit;
    } catch (const std::exception& e) {
        err << "input error: " << e.what() << '\n';
        return kExitInput;
    }
}

}  // namespace dcav::cli
