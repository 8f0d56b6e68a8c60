#include "dcav/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

namespace dcav::config {

namespace {

using json = nlohmann::ordered_json;

using Member = std::variant<double ToolConfig::*, std::int64_t ToolConfig::*, bool ToolConfig::*,
                            std::string ToolConfig::*>;

struct Key {
    const char* name;
    Member member;
};

#define DCAV_KEY(field) Key{#field, &ToolConfig::field}

const std::vector<Key>& table()
{
    static const std::vector<Key> t{
        DCAV_KEY(wavelength_nm), DCAV_KEY(n_diamond), DCAV_KEY(alpha_per_m), DCAV_KEY(loss_fiber_ppm),
        DCAV_KEY(loss_sample_diamond_ppm), DCAV_KEY(sample_transmission_fraction), DCAV_KEY(roc_um),
        DCAV_KEY(feature_diameter_um),

        DCAV_KEY(scan_step_um), DCAV_KEY(sweep_hz), DCAV_KEY(samples_per_trace), DCAV_KEY(cavity_length_um),
        DCAV_KEY(max_cavity_length_um), DCAV_KEY(sideband_ghz), DCAV_KEY(sideband_relative_amplitude),
        DCAV_KEY(noise_rms_v), DCAV_KEY(detector_gain_v), DCAV_KEY(transmission_floor_factor),
        DCAV_KEY(piezo_nonlinearity),

        DCAV_KEY(segment_nm), DCAV_KEY(histogram_bin), DCAV_KEY(min_segment_samples), DCAV_KEY(r2_floor),
        DCAV_KEY(shift_bound_nm), DCAV_KEY(roughness_max_nm), DCAV_KEY(nv_lorentzian_floor_mhz),
        DCAV_KEY(trace_analysis), DCAV_KEY(acceptance_min_s), DCAV_KEY(acceptance_max_s), DCAV_KEY(anchor_x_um),
        DCAV_KEY(anchor_y_um), DCAV_KEY(anchor_thickness_um), DCAV_KEY(ple_model),

        DCAV_KEY(scan_width_um), DCAV_KEY(scan_height_um), DCAV_KEY(base_thickness_um),
        DCAV_KEY(slope_um_per_100um), DCAV_KEY(slope_direction_rad), DCAV_KEY(roughness_mean_nm),
        DCAV_KEY(roughness_spread_nm), DCAV_KEY(correlation_length_um), DCAV_KEY(loss_additional_ppm),
        DCAV_KEY(finesse_noise_relative), DCAV_KEY(registration_offset_um),

        DCAV_KEY(trace_finesse), DCAV_KEY(modes_in_sweep), DCAV_KEY(splitting_ghz), DCAV_KEY(linewidth_ghz),
        DCAV_KEY(sidebands),

        DCAV_KEY(thickness_nm), DCAV_KEY(air_gap_start_nm), DCAV_KEY(air_gap_step_nm), DCAV_KEY(length_steps),
        DCAV_KEY(band_lower_nm), DCAV_KEY(band_upper_nm), DCAV_KEY(wavelength_step_nm),
        DCAV_KEY(instrument_fwhm_nm), DCAV_KEY(spectra_noise_relative), DCAV_KEY(guess_thickness_nm),
        DCAV_KEY(guess_air_gap_nm), DCAV_KEY(guess_air_gap_step_nm), DCAV_KEY(guess_thickness_halfwidth_nm),
        DCAV_KEY(guess_air_gap_halfwidth_nm),

        DCAV_KEY(emitter), DCAV_KEY(homogeneous_fwhm_mhz), DCAV_KEY(diffusion_sigma_mhz), DCAV_KEY(n_scans),
        DCAV_KEY(bistability_splitting_mhz), DCAV_KEY(switch_probability), DCAV_KEY(ple_range_mhz),
        DCAV_KEY(ple_step_mhz), DCAV_KEY(peak_counts), DCAV_KEY(background_counts),

        DCAV_KEY(length_min_um), DCAV_KEY(length_max_um), DCAV_KEY(length_step_um),
        DCAV_KEY(length_noise_relative),

        DCAV_KEY(seed),
    };
    return t;
}

#undef DCAV_KEY

const Key* find_key(const std::string& name)
{
    for (const auto& k : table())
        if (name == k.name) return &k;
    return nullptr;
}

void set_value(ToolConfig& c, const Key& key, const json& v, const std::string& origin)
{
    auto fail = [&](const std::string& expected) {
        throw ConfigError(origin + ": key '" + key.name + "' expects " + expected + ", got " + v.dump());
    };
    std::visit(
        [&](auto member) {
            using T = std::remove_reference_t<decltype(c.*member)>;
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) fail("a number");
                c.*member = v.get<double>();
            } else if constexpr (std::is_same_v<T, std::int64_t>) {
                if (v.is_number_integer()) c.*member = v.get<std::int64_t>();
                else if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()) &&
                         std::abs(v.get<double>()) < 9e15)
                    c.*member = static_cast<std::int64_t>(v.get<double>());
                else fail("an integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) fail("true or false");
                c.*member = v.get<bool>();
            } else {
                if (!v.is_string()) fail("a string");
                c.*member = v.get<std::string>();
            }
        },
        key.member);
}

json to_json_value(const ToolConfig& c, const Key& key)
{
    return std::visit([&](auto member) { return json(c.*member); }, key.member);
}

void require(bool ok, const char* key, const std::string& what)
{
    if (!ok) throw ConfigError(std::string("config key '") + key + "' " + what);
}

}  // namespace

void ToolConfig::validate() const
{
    for (const auto& k : table())
        std::visit(
            [&](auto member) {
                if constexpr (std::is_same_v<std::remove_reference_t<decltype(this->*member)>, double>)
                    require(std::isfinite(this->*member), k.name, "must be finite");
            },
            k.member);

    require(wavelength_nm > 0.0, "wavelength_nm", "must be > 0");
    require(n_diamond > 1.0, "n_diamond", "must be > 1");
    require(alpha_per_m >= 0.0, "alpha_per_m", "must be >= 0");
    require(loss_fiber_ppm >= 0.0, "loss_fiber_ppm", "must be >= 0");
    require(loss_sample_diamond_ppm >= 0.0, "loss_sample_diamond_ppm", "must be >= 0");
    require(sample_transmission_fraction >= 0.0 && sample_transmission_fraction <= 1.0,
            "sample_transmission_fraction", "must lie in [0, 1]");
    require(roc_um > 0.0, "roc_um", "must be > 0");
    require(feature_diameter_um > 0.0, "feature_diameter_um", "must be > 0");
    require(scan_step_um > 0.0, "scan_step_um", "must be > 0");
    require(sweep_hz > 0.0, "sweep_hz", "must be > 0");
    require(samples_per_trace >= 1000, "samples_per_trace", "must be >= 1000");
    require(cavity_length_um > 0.0 && cavity_length_um < max_cavity_length_um, "cavity_length_um",
            "must lie in (0, max_cavity_length_um)");
    require(sideband_ghz > 0.0, "sideband_ghz", "must be > 0");
    require(sideband_relative_amplitude >= 0.0, "sideband_relative_amplitude", "must be >= 0");
    require(noise_rms_v >= 0.0, "noise_rms_v", "must be >= 0");
    require(detector_gain_v > 0.0, "detector_gain_v", "must be > 0");
    require(transmission_floor_factor >= 0.0, "transmission_floor_factor", "must be >= 0");
    require(piezo_nonlinearity >= 0.0 && piezo_nonlinearity < 1.0, "piezo_nonlinearity", "must lie in [0, 1)");
    require(segment_nm > 0.0, "segment_nm", "must be > 0");
    require(histogram_bin > 0.0, "histogram_bin", "must be > 0");
    require(min_segment_samples >= 1, "min_segment_samples", "must be >= 1");
    require(r2_floor >= 0.0 && r2_floor <= 1.0, "r2_floor", "must lie in [0, 1]");
    require(shift_bound_nm >= 0.0, "shift_bound_nm", "must be >= 0");
    require(roughness_max_nm > 0.0, "roughness_max_nm", "must be > 0");
    require(nv_lorentzian_floor_mhz >= 0.0, "nv_lorentzian_floor_mhz", "must be >= 0");
    require(trace_analysis == "finesse" || trace_analysis == "polarization", "trace_analysis",
            "must be 'finesse' or 'polarization'");
    require(acceptance_min_s >= 0.0 && acceptance_max_s >= 0.0, "acceptance_min_s", "and acceptance_max_s must be >= 0");
    require(ple_model == "auto" || ple_model == "lorentzian" || ple_model == "gaussian" || ple_model == "voigt",
            "ple_model", "must be auto, lorentzian, gaussian or voigt");
    require(scan_width_um > 0.0, "scan_width_um", "must be > 0");
    require(scan_height_um > 0.0, "scan_height_um", "must be > 0");
    require(base_thickness_um >= 0.0, "base_thickness_um", "must be >= 0");
    require(roughness_mean_nm >= 0.0, "roughness_mean_nm", "must be >= 0");
    require(roughness_spread_nm >= 0.0, "roughness_spread_nm", "must be >= 0");
    require(correlation_length_um >= 0.0, "correlation_length_um", "must be >= 0");
    require(loss_additional_ppm >= 0.0, "loss_additional_ppm", "must be >= 0");
    require(finesse_noise_relative >= 0.0, "finesse_noise_relative", "must be >= 0");
    require(trace_finesse > 1.0, "trace_finesse", "must be > 1");
    require(modes_in_sweep >= 2, "modes_in_sweep", "must be >= 2");
    require(splitting_ghz >= 0.0, "splitting_ghz", "must be >= 0");
    require(linewidth_ghz > 0.0, "linewidth_ghz", "must be > 0");
    require(thickness_nm >= 0.0, "thickness_nm", "must be >= 0");
    require(air_gap_start_nm >= 0.0, "air_gap_start_nm", "must be >= 0");
    require(length_steps >= 1, "length_steps", "must be >= 1");
    require(band_upper_nm > band_lower_nm && band_lower_nm > 0.0, "band_lower_nm", "must be > 0 and below band_upper_nm");
    require(wavelength_step_nm > 0.0, "wavelength_step_nm", "must be > 0");
    require(instrument_fwhm_nm > 0.0, "instrument_fwhm_nm", "must be > 0");
    require(spectra_noise_relative >= 0.0, "spectra_noise_relative", "must be >= 0");
    require(guess_thickness_halfwidth_nm >= 0.0, "guess_thickness_halfwidth_nm", "must be >= 0");
    require(guess_air_gap_halfwidth_nm >= 0.0, "guess_air_gap_halfwidth_nm", "must be >= 0");
    require(emitter == "snv" || emitter == "nv", "emitter", "must be 'snv' or 'nv'");
    require(homogeneous_fwhm_mhz > 0.0, "homogeneous_fwhm_mhz", "must be > 0");
    require(diffusion_sigma_mhz >= 0.0, "diffusion_sigma_mhz", "must be >= 0");
    require(n_scans >= 1, "n_scans", "must be >= 1");
    require(bistability_splitting_mhz >= 0.0, "bistability_splitting_mhz", "must be >= 0");
    require(switch_probability >= 0.0 && switch_probability <= 1.0, "switch_probability", "must lie in [0, 1]");
    require(ple_range_mhz > 0.0, "ple_range_mhz", "must be > 0");
    require(ple_step_mhz > 0.0 && ple_step_mhz < ple_range_mhz, "ple_step_mhz", "must lie in (0, ple_range_mhz)");
    require(peak_counts > 0.0, "peak_counts", "must be > 0");
    require(background_counts >= 0.0, "background_counts", "must be >= 0");
    require(length_min_um > 0.0 && length_max_um >= length_min_um && length_max_um < roc_um, "length_min_um",
            "must satisfy 0 < length_min_um <= length_max_um < roc_um");
    require(length_step_um > 0.0, "length_step_um", "must be > 0");
    require(length_noise_relative >= 0.0, "length_noise_relative", "must be >= 0");
    require(seed >= 0, "seed", "must be >= 0");
}

optics::OpticalConstants ToolConfig::constants() const { return {wavelength_nm, n_diamond, alpha_per_m}; }

optics::MirrorSet ToolConfig::mirrors() const
{
    return {loss_fiber_ppm, loss_sample_diamond_ppm, sample_transmission_fraction};
}

optics::FiberTip ToolConfig::fiber() const { return {roc_um, feature_diameter_um}; }

synth::ScanConfig ToolConfig::scan_config() const
{
    synth::ScanConfig s;
    s.step_um = scan_step_um;
    s.sweep_hz = sweep_hz;
    s.samples_per_trace = static_cast<std::size_t>(samples_per_trace);
    s.cavity_length_um = cavity_length_um;
    s.max_cavity_length_um = max_cavity_length_um;
    s.sideband_ghz = sideband_ghz;
    s.sideband_relative_amplitude = sideband_relative_amplitude;
    s.noise_rms_v = noise_rms_v;
    s.detector_gain_v = detector_gain_v;
    s.transmission_floor_factor = transmission_floor_factor;
    s.finesse_noise_relative = finesse_noise_relative;
    s.piezo_nonlinearity = piezo_nonlinearity;
    s.seed = static_cast<std::uint64_t>(seed);
    return s;
}

std::string to_json(const ToolConfig& c)
{
    json j = json::object();
    for (const auto& k : table()) j[k.name] = to_json_value(c, k);
    return j.dump(2) + "\n";
}

ToolConfig apply_json(ToolConfig c, const std::string& text, const std::string& origin)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError(origin + ": top level must be a JSON object");
    for (const auto& [name, value] : j.items()) {
        const Key* key = find_key(name);
        if (!key) throw ConfigError(origin + ": unknown key '" + name + "'");
        set_value(c, *key, value, origin);
    }
    c.validate();
    return c;
}

ToolConfig apply_assignment(ToolConfig c, const std::string& assignment)
{
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string name = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    const Key* key = find_key(name);
    if (!key) throw ConfigError("--set: unknown key '" + name + "'");
    json v;
    try {
        v = json::parse(text);
    } catch (const json::parse_error&) {
        v = text;
    }
    if (std::holds_alternative<std::string ToolConfig::*>(key->member) && !v.is_string()) v = text;
    set_value(c, *key, v, "--set");
    c.validate();
    return c;
}

ToolConfig load(const std::filesystem::path& path, ToolConfig base)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return apply_json(std::move(base), ss.str(), path.string());
}

std::vector<std::string> keys()
{
    std::vector<std::string> out;
    for (const auto& k : table()) out.emplace_back(k.name);
    return out;
}

std::string fnv1a_hex(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::filesystem::path Manifest::file(const std::string& role) const
{
    const auto it = files.find(role);
    if (it == files.end()) throw ConfigError("manifest (" + kind + ") has no '" + role + "' file");
    return base_dir / it->second;
}

std::string to_json(const Manifest& m)
{
    json j;
    j["kind"] = m.kind;
    j["files"] = json::object();
    for (const auto& [role, path] : m.files) j["files"][role] = path;
    j["provenance"] = {{"command", m.command}, {"config_hash", m.config_hash}, {"seed", m.seed}, {"synthetic", m.synthetic}};
    j["parameters"] = json::object();
    for (const auto& [k, v] : m.parameters) j["parameters"][k] = v;
    return j.dump(2) + "\n";
}

void save(const std::filesystem::path& path, const Manifest& m)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError(path.string() + ": cannot open for writing");
    out << to_json(m);
}

Manifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot open manifest");
    std::ostringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    const std::string where = path.string() + ": ";
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
        throw ConfigError(where + "manifest needs a string 'kind'");
    if (!j.contains("files") || !j["files"].is_object()) throw ConfigError(where + "manifest needs a 'files' object");

    Manifest m;
    m.kind = j["kind"].get<std::string>();
    static const std::vector<std::string> kinds{"scan", "traces", "spectra", "ple", "heightmap", "length_sweep", "samples", "report"};
    if (std::find(kinds.begin(), kinds.end(), m.kind) == kinds.end()) throw ConfigError(where + "unknown dataset kind '" + m.kind + "'");
    m.base_dir = path.parent_path();
    std::vector<std::string> missing;
    for (const auto& [role, p] : j["files"].items()) {
        if (!p.is_string()) throw ConfigError(where + "file '" + role + "' must be a string path");
        m.files[role] = p.get<std::string>();
        if (!std::filesystem::exists(m.base_dir / m.files[role])) missing.push_back((m.base_dir / m.files[role]).string());
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& s : missing) list += "\n  " + s;
        throw ConfigError(where + "referenced files missing:" + list);
    }
    if (j.contains("provenance")) {
        const auto& p = j["provenance"];
        if (!p.is_object()) throw ConfigError(where + "'provenance' must be an object");
        m.command = p.value("command", "");
        m.config_hash = p.value("config_hash", "");
        m.seed = p.value("seed", std::int64_t{0});
        m.synthetic = p.value("synthetic", false);
    }
    if (m.synthetic && m.config_hash.empty()) throw ConfigError(where + "synthetic dataset without a config hash");
    if (j.contains("parameters")) {
        if (!j["parameters"].is_object()) throw ConfigError(where + "'parameters' must be an object");
        for (const auto& [k, v] : j["parameters"].items()) {
            if (!v.is_number()) throw ConfigError(where + "parameter '" + k + "' must be a number");
            m.parameters[k] = v.get<double>();
        }
    }
    return m;
}

}  // namespace dcav::config
