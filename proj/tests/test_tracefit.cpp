#include "doctest.h"

#include "dcav/lineshape.hpp"
#include "dcav/rng.hpp"
#include "dcav/synth.hpp"
#include "dcav/tracefit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

using namespace dcav;

namespace {

synth::ScanConfig trace_config(double finesse, int modes, double samples_per_fwhm = 25.0)
{
    synth::ScanConfig cfg;
    cfg.samples_per_trace = static_cast<std::size_t>(2.0 * modes * finesse * samples_per_fwhm);
    return cfg;
}

double position_in_half(double t, const synth::ScanConfig& cfg)
{
    const double x = t * 2.0 * cfg.sweep_hz;
    return x - std::floor(x);
}

}  // namespace

TEST_CASE("fundamental mode detection")
{
    SUBCASE("turnaround-adjacent modes are excluded")
    {
        const auto cfg = trace_config(1000.0, 5);
        const auto tr = synth::synthesize_trace(1000.0, 5, 0.0, 0.0, cfg, false);
        const auto det = tracefit::detect_fundamental_modes(tr);
        REQUIRE(det.ok);
        // Up ramp: x = 1.3 .. 4.3 survive, x = 0.3 (6 % into the half) does not.
        CHECK(det.peaks.size() == 8);
        for (const auto& p : det.peaks) {
            const double pos = position_in_half(p.time_s, cfg);
            CHECK(pos >= 0.1);
            CHECK(pos <= 0.9);
            const double x = synth::sweep_position(p.time_s, 5, cfg);
            CHECK(std::abs(x - 0.3) > 0.5);
        }
    }
    SUBCASE("empty and flat traces are rejected")
    {
        synth::TransmissionTrace empty;
        CHECK(!tracefit::detect_fundamental_modes(empty).ok);
        synth::TransmissionTrace flat;
        for (int i = 0; i < 5000; ++i) {
            flat.time_s.push_back(i * 1e-6);
            flat.voltage_v.push_back(0.1);
        }
        const auto det = tracefit::detect_fundamental_modes(flat);
        CHECK(!det.ok);
        CHECK(!det.reason.empty());
    }
    SUBCASE("a higher-order mode between fundamentals is excluded by the acceptance window")
    {
        const double finesse = 1000.0;
        const auto cfg = trace_config(finesse, 4);
        auto tr = synth::synthesize_trace(finesse, 4, 0.0, 0.0, cfg, false);
        const double w = 1.0 / finesse;
        for (std::size_t i = 0; i < tr.time_s.size(); ++i) {
            const double x = synth::sweep_position(tr.time_s[i], 4, cfg);
            for (int j = 0; j < 4; ++j) {
                const double d = 2.0 * (x - (j + 0.3 + 0.4)) / w;
                tr.voltage_v[i] += 0.4 / (1.0 + d * d);
            }
        }
        const double spacing = 1.0 / (2.0 * 4.0 * cfg.sweep_hz);  // one FSR in time
        const auto det = tracefit::detect_fundamental_modes(tr, {0.8 * spacing, 1.25 * spacing});
        REQUIRE(det.ok);
        for (const auto& p : det.peaks) {
            const double x = synth::sweep_position(p.time_s, 4, cfg);
            const double frac = x - 0.3 - std::floor(x - 0.3);
            CHECK((frac < 0.05 || frac > 0.95));
        }
        // Automatic acceptance finds the same fundamentals.
        const auto automatic = tracefit::detect_fundamental_modes(tr);
        REQUIRE(automatic.ok);
        CHECK(automatic.peaks.size() == det.peaks.size());
    }
}

TEST_CASE("finesse from noiseless traces")
{
    SUBCASE("finesse 9500 over five modes")
    {
        const auto cfg = trace_config(9500.0, 5, 20.0);
        const auto tr = synth::synthesize_trace(9500.0, 5, 0.0, 0.0, cfg, false);
        const auto res = tracefit::fit_finesse(tr);
        REQUIRE(res.valid);
        CHECK(res.finesse == doctest::Approx(9500.0).epsilon(1e-3));
        CHECK(res.finesse == doctest::Approx(res.mode_distance_s / res.linewidth_s));
    }
    SUBCASE("recovery across the finesse range")
    {
        for (double f : {500.0, 3000.0, 20000.0}) {
            const auto cfg = trace_config(f, 3, 20.0);
            auto c = cfg;
            c.mode_phase = 0.5;
            const auto tr = synth::synthesize_trace(f, 3, 0.0, 0.0, c, false);
            const auto res = tracefit::fit_finesse(tr);
            REQUIRE(res.valid);
            CHECK(res.finesse == doctest::Approx(f).epsilon(1e-3));
        }
    }
    SUBCASE("split fundamentals use the double Lorentzian")
    {
        auto cfg = trace_config(2000.0, 3, 25.0);
        cfg.mode_phase = 0.5;
        const double lw = 1.0;  // GHz; FSR 2000 GHz
        const auto tr = synth::synthesize_trace(2000.0, 3, 4.0, lw, cfg, false);
        const auto res = tracefit::fit_finesse(tr);
        REQUIRE(res.valid);
        CHECK(res.fits[res.chosen_peak].doublet);
        CHECK(res.finesse == doctest::Approx(2000.0).epsilon(1e-3));
    }
    SUBCASE("spacing outside the acceptance window is invalid")
    {
        const auto cfg = trace_config(1000.0, 4);
        const auto tr = synth::synthesize_trace(1000.0, 4, 0.0, 0.0, cfg, false);
        const double spacing = 1.0 / (2.0 * 4.0 * cfg.sweep_hz);
        const auto res = tracefit::fit_finesse(tr, {1.5 * spacing, 1.8 * spacing});
        CHECK(!res.valid);
        CHECK(res.reason.find("mode distance") != std::string::npos);
    }
}

TEST_CASE("finesse from noisy traces")
{
    auto cfg = trace_config(8000.0, 3, 25.0);
    cfg.mode_phase = 0.5;
    cfg.noise_rms_v = 0.02;
    int within = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        cfg.seed = 1000 + s;
        const auto tr = synth::synthesize_trace(8000.0, 3, 0.0, 0.0, cfg, false);
        const auto res = tracefit::fit_finesse(tr);
        REQUIRE(res.valid);
        if (std::abs(res.finesse / 8000.0 - 1.0) <= 0.02) ++within;
    }
    CHECK(within >= 18);
}

TEST_CASE("polarization splitting with the sideband ruler")
{
    auto cfg = trace_config(200.0, 2, 60.0);
    cfg.mode_phase = 0.5;

    SUBCASE("resolved splitting")
    {
        const auto tr = synth::synthesize_trace(200.0, 2, 14.9, 2.9, cfg, true);
        const auto res = tracefit::fit_polarization(tr, 6.0);
        REQUIRE(res.accepted);
        CHECK(res.resolved);
        CHECK(res.peaks_in_model == 6);
        CHECK(std::abs(res.splitting_ghz - 14.9) < 0.1);
        CHECK(std::abs(res.linewidth_ghz - 2.9) < 0.1);

        // The ruler cancels the sweep speed.
        auto fast = cfg;
        fast.sweep_hz *= 2.0;
        const auto res2 = tracefit::fit_polarization(synth::synthesize_trace(200.0, 2, 14.9, 2.9, fast, true), 6.0);
        CHECK(res2.splitting_ghz == doctest::Approx(res.splitting_ghz).epsilon(1e-6));
    }
    SUBCASE("no splitting")
    {
        const auto res = tracefit::fit_polarization(synth::synthesize_trace(200.0, 2, 0.0, 2.9, cfg, true), 6.0);
        CHECK(res.accepted);
        CHECK(!res.resolved);
        CHECK(res.splitting_ghz == 0.0);
        CHECK(std::abs(res.linewidth_ghz - 2.9) < 0.1);
    }
    SUBCASE("splitting below the resolvability threshold")
    {
        const auto res = tracefit::fit_polarization(synth::synthesize_trace(200.0, 2, 0.3 * 2.9, 2.9, cfg, true), 6.0);
        CHECK(!res.resolved);
        CHECK(res.splitting_ghz == 0.0);
    }
    SUBCASE("noisy trace")
    {
        cfg.noise_rms_v = 0.01;
        const auto res = tracefit::fit_polarization(synth::synthesize_trace(200.0, 2, 14.9, 2.9, cfg, true), 6.0);
        REQUIRE(res.accepted);
        CHECK(std::abs(res.splitting_ghz - 14.9) < 0.1);
        CHECK(std::abs(res.linewidth_ghz - 2.9) < 0.1);
    }
    CHECK_THROWS(tracefit::fit_polarization(synth::synthesize_trace(200.0, 2, 0.0, 2.9, cfg, true), 0.0));
}

TEST_CASE("PLE lineshape fits")
{
    synth::PleConfig fine;
    fine.step_mhz = 2.0;

    SUBCASE("Lorentzian recovery")
    {
        const auto set = synth::synthesize_ple_scans(synth::Emitter::snv, 32.0, 0.0, 1, std::nullopt, 11, fine);
        const auto& s = set.scans[0];
        const auto fit = tracefit::fit_ple_scan(s.freq_mhz, s.counts, tracefit::LineModel::lorentzian);
        CHECK(std::abs(fit.fwhm_total_mhz - 32.0) < 1.0);
        CHECK(std::abs(fit.center_mhz) < 1.0);
        CHECK(fit.r_squared > 0.9);
    }
    SUBCASE("NV Voigt with the Lorentzian floor")
    {
        const double fg = lineshape::gaussian_fwhm_for_voigt(62.0, 13.0);
        const auto set = synth::synthesize_ple_scans(synth::Emitter::nv, 13.0, fg / lineshape::kFwhmPerSigma, 1,
                                                     std::nullopt, 12, fine);
        const auto& s = set.scans[0];
        const auto fit = tracefit::fit_ple_scan(s.freq_mhz, s.counts, tracefit::LineModel::voigt, {.lorentzian_floor_mhz = 13.0});
        CHECK(std::abs(fit.fwhm_total_mhz - 62.0) < 3.0);
        CHECK(fit.fwhm_lorentzian_mhz >= 13.0);
        CHECK(fit.fwhm_lorentzian_mhz < 20.0);
        // Total width follows the standard combination of the components.
        CHECK(fit.fwhm_total_mhz == doctest::Approx(lineshape::voigt_fwhm(fit.fwhm_lorentzian_mhz, fit.fwhm_gaussian_mhz)).epsilon(0.01));
    }
    SUBCASE("pure Gaussian pins the Lorentzian part at the floor")
    {
        std::vector<double> f, y;
        for (double x = -200.0; x <= 200.0; x += 2.0) {
            f.push_back(x);
            y.push_back(3.0 + 150.0 * lineshape::gaussian(x, 4.0, 60.0));
        }
        const auto fit = tracefit::fit_ple_scan(f, y, tracefit::LineModel::voigt, {.lorentzian_floor_mhz = 13.0});
        CHECK(fit.lorentzian_at_floor);
        CHECK(fit.fwhm_lorentzian_mhz == 13.0);
    }
    SUBCASE("Voigt with zero Gaussian part is the Lorentzian fit")
    {
        const auto set = synth::synthesize_ple_scans(synth::Emitter::snv, 32.0, 0.0, 1, std::nullopt, 13, fine);
        const auto& s = set.scans[0];
        const auto lor = tracefit::fit_ple_scan(s.freq_mhz, s.counts, tracefit::LineModel::lorentzian);
        const auto voi = tracefit::fit_ple_scan(s.freq_mhz, s.counts, tracefit::LineModel::voigt,
                                                {.lorentzian_floor_mhz = 0.0, .fixed_gaussian_fwhm_mhz = 0.0});
        CHECK(voi.fwhm_lorentzian_mhz == doctest::Approx(lor.fwhm_total_mhz).epsilon(1e-6));
        CHECK(voi.center_mhz == doctest::Approx(lor.center_mhz).epsilon(1e-6));
        CHECK(voi.fwhm_gaussian_mhz == 0.0);
    }
    SUBCASE("degenerate input raises diagnostics")
    {
        std::vector<double> f(30), y(30, 5.0);
        for (int i = 0; i < 30; ++i) f[i] = i;
        CHECK_THROWS_AS(tracefit::fit_ple_scan(f, y, tracefit::LineModel::lorentzian), tracefit::FitError);
        CHECK_THROWS_AS(tracefit::fit_ple_scan({1, 2, 3}, {1, 2, 1}, tracefit::LineModel::lorentzian), tracefit::FitError);
    }
}

TEST_CASE("spectral diffusion averaging")
{
    SUBCASE("dephasing and diffusion widths")
    {
        const auto set = synth::synthesize_ple_scans(synth::Emitter::snv, 32.0, 60.0, 300, std::nullopt, 21);
        const auto res = tracefit::spectral_diffusion_average(set);
        CHECK(std::abs(res.dephasing_fit.fwhm_total_mhz - 32.0) < 2.0);
        CHECK(std::abs(res.gaussian_fit.fwhm_total_mhz / (lineshape::kFwhmPerSigma * 60.0) - 1.0) < 0.2);
        // Deconvolving the dephasing Lorentzian leaves the diffusion Gaussian.
        CHECK(std::abs(res.diffusion_fit.fwhm_gaussian_mhz / (lineshape::kFwhmPerSigma * 60.0) - 1.0) < 0.1);
        CHECK(res.diffusion_fit.fwhm_lorentzian_mhz == res.dephasing_fit.fwhm_lorentzian_mhz);
        CHECK(res.selected_count > 150);
        CHECK(res.warning.empty());

        // Selection is a pure function of each scan: reversing the order reverses the flags.
        auto reversed = set;
        std::reverse(reversed.scans.begin(), reversed.scans.end());
        const auto res_r = tracefit::spectral_diffusion_average(reversed);
        auto flags = res_r.selected;
        std::reverse(flags.begin(), flags.end());
        CHECK(flags == res.selected);
    }
    SUBCASE("no diffusion")
    {
        const auto set = synth::synthesize_ple_scans(synth::Emitter::snv, 32.0, 0.0, 50, std::nullopt, 22);
        const auto res = tracefit::spectral_diffusion_average(set);
        CHECK(std::abs(res.dephasing_fit.fwhm_total_mhz - 32.0) < 2.0);
        // A Gaussian fitted to a pure Lorentzian stays close but carries model bias.
        CHECK(std::abs(res.gaussian_fit.fwhm_total_mhz / 32.0 - 1.0) < 0.25);
        CHECK(res.selected_count == 50);
        CHECK(res.diffusion_fit.fwhm_gaussian_mhz < 10.0);
    }
    SUBCASE("bistable emitter")
    {
        const auto plain = synth::synthesize_ple_scans(synth::Emitter::snv, 32.0, 10.0, 200, std::nullopt, 23);
        const auto bi = synth::synthesize_ple_scans(synth::Emitter::snv, 32.0, 10.0, 200,
                                                    synth::Bistability{100.0, 0.1}, 23);
        const auto rp = tracefit::spectral_diffusion_average(plain);
        const auto rb = tracefit::spectral_diffusion_average(bi);
        CHECK(std::abs(rb.dephasing_fit.fwhm_total_mhz / rp.dephasing_fit.fwhm_total_mhz - 1.0) < 0.05);
        // Uncentered average: two maxima roughly 100 MHz apart.
        const auto& f = bi.scans[0].freq_mhz;
        const auto& avg = rb.average_counts;
        std::vector<double> maxima;
        for (std::size_t i = 2; i + 2 < avg.size(); ++i) {
            const double peak = *std::max_element(avg.begin(), avg.end());
            if (avg[i] > 0.2 * peak && avg[i] == *std::max_element(avg.begin() + static_cast<long>(i) - 2, avg.begin() + static_cast<long>(i) + 3))
                maxima.push_back(f[i]);
        }
        REQUIRE(maxima.size() == 2);
        CHECK(std::abs(maxima[1] - maxima[0] - 100.0) < 15.0);
    }
    SUBCASE("too few scans")
    {
        const auto set = synth::synthesize_ple_scans(synth::Emitter::snv, 32.0, 0.0, 5, std::nullopt, 1);
        CHECK_THROWS(tracefit::spectral_diffusion_average(set));
    }
}

TEST_CASE("PLE linewidth statistics")
{
    SUBCASE("golden NV fixture")
    {
        std::ifstream in(std::string(DCAV_TEST_DATA_DIR) + "/nv_linewidths.csv");
        REQUIRE(in);
        std::vector<double> values;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#' || line == "fwhm_mhz") continue;
            values.push_back(std::stod(line));
        }
        REQUIRE(values.size() == 20);
        const auto s = tracefit::ple_statistics(values);
        CHECK(s.median == 62.0);
        CHECK(s.min == 38.0);
        CHECK(s.max == 130.0);
        for (std::size_t i = 1; i < s.cdf.size(); ++i) CHECK(s.cdf[i].second > s.cdf[i - 1].second);
        CHECK(s.cdf.back().second == 1.0);
    }
    SUBCASE("single fit")
    {
        tracefit::LineshapeFit f;
        f.fwhm_total_mhz = 47.0;
        const auto s = tracefit::ple_statistics(std::vector<tracefit::LineshapeFit>{f});
        CHECK(s.median == 47.0);
        CHECK(s.min == 47.0);
        CHECK(s.max == 47.0);
    }
    SUBCASE("sample median within the binomial bound of the generator median")
    {
        // Log-normal widths with median 62 MHz; for n = 20 the order statistics
        // 6 and 15 bracket the population median with ~96 % confidence.
        int covered = 0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const rng::CounterRng gen(seed, 5);
            std::vector<double> v;
            for (int i = 0; i < 20; ++i) v.push_back(62.0 * std::exp(0.35 * gen.normal(i)));
            const auto s = tracefit::ple_statistics(v);
            std::sort(v.begin(), v.end());
            CHECK(s.median >= v[9]);
            CHECK(s.median <= v[10]);
            if (v[5] <= 62.0 && 62.0 <= v[14]) ++covered;
        }
        CHECK(covered >= 17);
    }
    CHECK_THROWS(tracefit::ple_statistics(std::vector<double>{}));
}
