#include "doctest.h"

#include "dcav/modelfit.hpp"
#include "dcav/rng.hpp"
#include "dcav/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace dcav;
using modelfit::ThicknessFinesseSample;

namespace {

const optics::MirrorSet kMirrors{};
const optics::OpticalConstants kConstants{};

std::vector<ThicknessFinesseSample> loss_samples(double sigma_nm, double l_add_ppm, double noise_rel,
                                                 std::uint64_t seed, std::size_t n = 400)
{
    const rng::CounterRng gen(seed, 100);
    std::vector<ThicknessFinesseSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = 2.0 + 0.4 * gen.uniform(i, 2);
        const double f0 = optics::effective_losses({t * 1e3, sigma_nm}, kMirrors, kConstants, l_add_ppm).finesse;
        const double f = f0 * (1.0 + noise_rel * gen.normal(i));
        // Inverse variance of the relative noise.
        out.push_back({t, f, 0.0, 0.0, 1.0 / (f0 * f0)});
    }
    return out;
}

struct MapCase {
    HeightMap height;
    FinesseMap scan;
};

MapCase wedge_map(double sigma_mean, double sigma_spread, double l_add, double noise_rel, double width = 60.0,
                  double offset_um = 0.0)
{
    auto height = synth::make_wedge_heightmap(width, width, 0.2, 2.0, 0.7);
    auto truth = height;
    for (double& t : truth.thickness_um) t += offset_um;
    const auto rough = synth::sample_roughness_field(height.grid, sigma_mean, sigma_spread, 1.0, 7);
    synth::ScanConfig cfg;
    cfg.finesse_noise_relative = noise_rel;
    cfg.seed = 11;
    return {height, synth::synthesize_finesse_map(truth, rough, kMirrors, kConstants, l_add, cfg)};
}

std::vector<ThicknessFinesseSample> all_samples(const MapCase& m)
{
    const std::size_t anchor = 0;
    return modelfit::register_heightmap(m.height, m.scan, m.height.grid.x(anchor), m.height.grid.y(anchor),
                                        m.height.thickness_um[anchor])
        .samples;
}

}  // namespace

TEST_CASE("registration recovers a constant offset")
{
    const auto m = wedge_map(0.9, 0.0, 610.0, 0.0, 20.0, 0.25);
    const std::size_t ix = 30, iy = 40;
    const double true_t = m.height.at(ix, iy) + 0.25;
    const auto reg = modelfit::register_heightmap(m.height, m.scan, m.height.grid.x(ix), m.height.grid.y(iy), true_t);
    CHECK(reg.offset_um == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(reg.samples.size() == m.scan.grid.size());
    CHECK(reg.max_displacement_um == 0.0);
    for (const auto& s : reg.samples) {
        const auto cx = static_cast<std::size_t>(std::lround(s.x_um / 0.2));
        const auto cy = static_cast<std::size_t>(std::lround(s.y_um / 0.2));
        CHECK(s.thickness_um == doctest::Approx(m.height.at(cx, cy) + 0.25).epsilon(1e-12));
    }
}

TEST_CASE("registration identity and region of interest")
{
    const auto m = wedge_map(0.9, 0.0, 610.0, 0.0, 10.0);
    const auto reg = modelfit::register_heightmap(m.height, m.scan, 0.0, 0.0, m.height.at(0, 0));
    CHECK(reg.offset_um == 0.0);
    REQUIRE(reg.samples.size() == m.height.grid.size());
    for (std::size_t i = 0; i < reg.samples.size(); ++i) {
        CHECK(reg.samples[i].thickness_um == m.height.thickness_um[i]);
        CHECK(reg.samples[i].finesse == m.scan.pixels[i].finesse);
    }

    const auto roi = modelfit::register_heightmap(m.height, m.scan, 0.0, 0.0, m.height.at(0, 0),
                                                  modelfit::Region{1.0, 1.0, 3.0, 2.0});
    CHECK(roi.samples.size() == 11 * 6);
    for (const auto& s : roi.samples) {
        CHECK(s.x_um >= 1.0 - 1e-12);
        CHECK(s.y_um <= 2.0 + 1e-12);
    }

    CHECK_THROWS_AS(modelfit::register_heightmap(m.height, m.scan, 50.0, 50.0, 2.0), std::invalid_argument);
}

TEST_CASE("registration across pitches maps every pixel to its nearest cell")
{
    const auto height = synth::make_wedge_heightmap(10.2, 10.2, 0.13, 2.0, 5.0, 0.4);
    FinesseMap scan;
    scan.grid = make_grid(10.0, 10.0, 0.2);
    scan.pixels.assign(scan.grid.size(), FinessePixel{5000.0, 1.0, 0.0, 1e-3, true});
    const auto reg = modelfit::register_heightmap(height, scan, 0.0, 0.0, height.at(0, 0));
    REQUIRE(reg.samples.size() == scan.grid.size());
    CHECK(reg.max_displacement_um < 0.1);
    for (const auto& s : reg.samples) {
        double best = 1e300, t = 0.0;
        for (std::size_t iy = 0; iy < height.grid.ny; ++iy)
            for (std::size_t ix = 0; ix < height.grid.nx; ++ix) {
                const double d = std::hypot(height.grid.x(ix) - s.x_um, height.grid.y(iy) - s.y_um);
                if (d < best - 1e-12) {
                    best = d;
                    t = height.at(ix, iy);
                }
            }
        CHECK(s.thickness_um == doctest::Approx(t).epsilon(1e-12));
    }
}

TEST_CASE("loss model round trip on synthetic maps")
{
    for (auto [sigma, l_add] : {std::pair{0.9, 610.0}, std::pair{1.2, 820.0}}) {
        CAPTURE(sigma);
        const auto samples = all_samples(wedge_map(sigma, 0.0, l_add, 0.02, 30.0));
        const auto r = modelfit::fit_loss_model(samples, kMirrors, kConstants);
        CHECK(r.converged);
        CHECK(std::abs(r.value("roughness_nm") - sigma) <= 0.1);
        CHECK(std::abs(r.value("loss_additional_ppm") - l_add) <= 50.0);
        CHECK(std::abs(r.value("thickness_shift_nm")) <= 2.0);
    }

    const auto smooth = modelfit::fit_loss_model(loss_samples(0.0, 500.0, 0.0, 1), kMirrors, kConstants);
    CHECK(smooth.value("roughness_nm") <= 0.05);
    CHECK(smooth.value("loss_additional_ppm") == doctest::Approx(500.0).epsilon(1e-4));
}

TEST_CASE("loss model recovers a thickness shift inside the bound")
{
    auto samples = loss_samples(1.0, 400.0, 0.0, 3);
    for (auto& s : samples) s.thickness_um -= 0.012;
    const auto r = modelfit::fit_loss_model(samples, kMirrors, kConstants);
    CHECK(r.value("thickness_shift_nm") == doctest::Approx(12.0).epsilon(1e-3));
    CHECK(r.value("roughness_nm") == doctest::Approx(1.0).epsilon(1e-4));

    // Maxima of the fitted curve sit at air-like thicknesses minus the shift.
    const double air_like = optics::mode_thickness_nm({15, optics::ModeKind::air_like}, kConstants);
    double best_t = 0.0, best_f = 0.0;
    for (double t = air_like - 40.0; t <= air_like + 40.0; t += 0.05) {
        const double f = modelfit::loss_model_finesse(r, t * 1e-3, kMirrors, kConstants);
        if (f > best_f) {
            best_f = f;
            best_t = t;
        }
    }
    CHECK(std::abs(best_t + r.value("thickness_shift_nm") - air_like) <= 0.1);
}

TEST_CASE("loss model rejects a short thickness span")
{
    auto samples = loss_samples(0.9, 610.0, 0.0, 2, 50);
    for (auto& s : samples) s.thickness_um = 2.0 + 0.05 * (s.thickness_um - 2.0);
    CHECK_THROWS_WITH_AS(modelfit::fit_loss_model(samples, kMirrors, kConstants),
                         doctest::Contains("insufficient thickness span"), std::invalid_argument);
}

TEST_CASE("loss model identifiability over the parameter grid")
{
    int trials = 0, covered = 0;
    std::uint64_t seed = 1000;
    for (double sigma : {0.3, 0.6, 0.9, 1.2, 1.5})
        for (double l_add : {200.0, 400.0, 600.0, 800.0, 1000.0}) {
            const auto r = modelfit::fit_loss_model(loss_samples(sigma, l_add, 0.03, ++seed), kMirrors, kConstants);
            ++trials;
            const bool ok = std::abs(r.value("roughness_nm") - sigma) <= 3.0 * r.error("roughness_nm") &&
                            std::abs(r.value("loss_additional_ppm") - l_add) <= 3.0 * r.error("loss_additional_ppm");
            if (ok) ++covered;
            else MESSAGE(sigma, " ", l_add, " -> ", r.value("roughness_nm"), " +- ", r.error("roughness_nm"), ", ",
                         r.value("loss_additional_ppm"), " +- ", r.error("loss_additional_ppm"), " shift ",
                         r.value("thickness_shift_nm"));
        }
    CHECK(covered >= 24);
    CHECK(trials == 25);
}

TEST_CASE("segment statistics")
{
    std::vector<ThicknessFinesseSample> constant;
    for (int i = 0; i < 500; ++i) constant.push_back({2.00005 + 0.0001 * i, 5000.0, 0.0, 0.0, 1.0});
    const auto cs = modelfit::segment_statistics(constant);
    CHECK(cs.size() == 5);
    for (const auto& s : cs) {
        CHECK(s.mean == 5000.0);
        CHECK(s.sigma == 0.0);
        CHECK(s.count == 100);
    }

    // Segments with fewer than 20 samples are skipped.
    std::vector<ThicknessFinesseSample> sparse(constant.begin(), constant.begin() + 119);
    CHECK(modelfit::segment_statistics(sparse).size() == 1);

    // One diamond-like segment: two roughness populations widen the spread.
    const double diamond_like = optics::mode_thickness_nm({15, optics::ModeKind::diamond_like}, kConstants);
    const double seg_lo = 10.0 * std::floor(diamond_like / 10.0);
    const rng::CounterRng gen(9, 100);
    std::vector<ThicknessFinesseSample> single, mixture;
    for (std::size_t i = 0; i < 2000; ++i) {
        const double t = (seg_lo + 10.0 * gen.uniform(i, 2)) * 1e-3;
        const double noise = 1.0 + 0.02 * gen.normal(i);
        const double f_smooth = optics::effective_losses({t * 1e3, 0.6}, kMirrors, kConstants, 400.0).finesse;
        const double f_rough = optics::effective_losses({t * 1e3, 1.4}, kMirrors, kConstants, 400.0).finesse;
        single.push_back({t, f_smooth * noise, 0.0, 0.0, 1.0});
        mixture.push_back({t, (i % 2 ? f_rough : f_smooth) * noise, 0.0, 0.0, 1.0});
    }
    const auto s1 = modelfit::segment_statistics(single);
    const auto s2 = modelfit::segment_statistics(mixture);
    REQUIRE(s1.size() == 1);
    REQUIRE(s2.size() == 1);
    CHECK(s1[0].sigma >= 0.0);
    CHECK(s2[0].sigma > 2.0 * s1[0].sigma);
    CHECK(s2[0].mean < s1[0].mean);

    auto shuffled = mixture;
    std::mt19937_64 shuffle_rng(3);
    std::shuffle(shuffled.begin(), shuffled.end(), shuffle_rng);
    const auto s3 = modelfit::segment_statistics(shuffled);
    REQUIRE(s3.size() == s2.size());
    for (std::size_t i = 0; i < s2.size(); ++i) {
        CHECK(s3[i].mean == s2[i].mean);
        CHECK(s3[i].sigma == s2[i].sigma);
        CHECK(s3[i].histogram == s2[i].histogram);
    }

    CHECK_THROWS(modelfit::segment_statistics(single, 0.0));
}

TEST_CASE("envelopes on spread roughness fields")
{
    SUBCASE("laser-cut-like")
    {
        const auto samples = all_samples(wedge_map(0.9, 0.3, 610.0, 0.01));
        const auto stats = modelfit::segment_statistics(samples);
        const auto env = modelfit::fit_envelopes(stats, kMirrors, kConstants);
        // Upper finesse envelope belongs to the smoothest areas.
        CHECK(std::abs(env.upper.value("roughness_nm") - 0.6) <= 0.1);
        CHECK(env.lower.value("roughness_nm") > env.upper.value("roughness_nm"));
        CHECK(modelfit::fraction_between_envelopes(samples, env, kMirrors, kConstants) >= 0.6);
    }
    SUBCASE("EBL-like")
    {
        const auto samples = all_samples(wedge_map(1.2, 0.1, 820.0, 0.01));
        const auto env = modelfit::fit_envelopes(modelfit::segment_statistics(samples), kMirrors, kConstants);
        CHECK(std::abs(env.upper.value("roughness_nm") - 1.1) <= 0.1);
        CHECK(modelfit::fraction_between_envelopes(samples, env, kMirrors, kConstants) >= 0.6);
    }
    SUBCASE("zero spread")
    {
        const auto samples = all_samples(wedge_map(0.9, 0.0, 610.0, 0.0));
        // Narrow segments so the thickness gradient inside a segment is negligible.
        const auto env = modelfit::fit_envelopes(modelfit::segment_statistics(samples, 1.0), kMirrors, kConstants);
        CHECK(std::abs(env.upper.value("roughness_nm") - env.lower.value("roughness_nm")) <= 0.05);
        CHECK(std::abs(env.upper.value("loss_additional_ppm") - env.lower.value("loss_additional_ppm")) <= 20.0);
    }
    std::vector<modelfit::SegmentStats> few(4);
    CHECK_THROWS(modelfit::fit_envelopes(few, kMirrors, kConstants));
}

TEST_CASE("clipping fit")
{
    std::vector<double> lengths;
    for (double l = 1.0; l <= 17.0 + 1e-9; l += 0.25) lengths.push_back(l);

    // Coating-limited finesse with the default mirrors is 2 pi / 328 ppm.
    const double l0 = optics::effective_losses({0.0, 0.0}, kMirrors, kConstants, 0.0).loss_effective_ppm;
    CHECK(l0 == doctest::Approx(328.0).epsilon(1e-3));

    for (double d : {8.0, 10.0, 12.0}) {
        CAPTURE(d);
        const optics::FiberTip fiber{17.3, d};
        const auto data = synth::synthesize_length_sweep(lengths, fiber, kMirrors, kConstants, 390.0, 0.005, 4);
        const auto rep = modelfit::fit_clipping(data, fiber, kMirrors, kConstants);
        CHECK(rep.diameter_identifiable);
        CHECK(std::abs(rep.fit.value("loss_additional_ppm") - 390.0) <= 20.0);
        CHECK(std::abs(rep.fit.value("feature_diameter_um") / d - 1.0) <= 0.02);
        CHECK(rep.plateau_finesse == doctest::Approx(2.0 * optics::kPi / 718e-6).epsilon(0.01));
        CHECK(rep.rolloff_length_um > 0.0);
        CHECK(rep.rolloff_length_um < 17.3);
        const double clip = optics::clipping_loss_ppm(rep.rolloff_length_um, {17.3, rep.fit.value("feature_diameter_um")},
                                                      kConstants);
        CHECK(clip == doctest::Approx(l0 + rep.fit.value("loss_additional_ppm")).epsilon(1e-6));
    }

    std::vector<synth::LengthSweepPoint> flat;
    for (double l : lengths) flat.push_back({l, 2.0 * optics::kPi / 718e-6});
    const auto rep = modelfit::fit_clipping(flat, {17.3, 10.0}, kMirrors, kConstants);
    CHECK_FALSE(rep.diameter_identifiable);
    CHECK(rep.fit.value("loss_additional_ppm") == doctest::Approx(390.0).epsilon(1e-3));
    CHECK(rep.fit.message.find("unidentifiable") != std::string::npos);
}

TEST_CASE("spectral line association")
{
    std::vector<modelfit::SpectralLine> lines{{0, 600.0, -1}, {0, 610.0, -1}, {1, 601.0, -1}, {1, 611.0, -1},
                                              {2, 602.0, -1}, {2, 612.0, -1}, {2, 620.0, -1}};
    CHECK(modelfit::associate_tracks(lines) == 3);
    CHECK(lines[0].track == lines[2].track);
    CHECK(lines[1].track == lines[3].track);

    // A line halfway between two predictions is ambiguous.
    std::vector<modelfit::SpectralLine> bad{{0, 600.0, -1}, {0, 602.0, -1}, {1, 601.0, -1}, {1, 640.0, -1}};
    CHECK_THROWS_WITH_AS(modelfit::associate_tracks(bad), doctest::Contains("candidate"), std::runtime_error);
}

TEST_CASE("dispersion fit recovers the diamond thickness")
{
    synth::DispersionConfig cfg;
    for (double td : {2510.0, 3310.0}) {
        CAPTURE(td);
        const auto sp = synth::synthesize_dispersion_spectra(td, kConstants, cfg);
        const auto rep = modelfit::fit_dispersion(sp, kConstants, {td - 150.0, 4300.0, 20.0});
        CHECK(std::abs(rep.fit.value("thickness_nm") - td) <= 5.0);
        CHECK(std::abs(rep.fit.value("air_gap_per_step_nm") - 20.0) <= 0.5);
        REQUIRE(rep.air_gap_nm.size() == sp.air_gap_nm.size());
        CHECK(std::abs(rep.air_gap_nm.front() - sp.air_gap_nm.front()) <= 20.0);
    }

    const auto bare = synth::synthesize_dispersion_spectra(0.0, kConstants, cfg);
    const auto rep0 = modelfit::fit_dispersion(bare, kConstants, {100.0, 3800.0, 20.0});
    CHECK(rep0.fit.value("thickness_nm") < 2.0);
}

TEST_CASE("dispersion fit is invariant under step relabeling")
{
    synth::DispersionConfig cfg;
    cfg.length_steps = 20;
    auto sp = synth::synthesize_dispersion_spectra(2510.0, kConstants, cfg);
    const auto a = modelfit::fit_dispersion(sp, kConstants, {2400.0, 4200.0, 20.0});
    for (int& l : sp.step_label) l += 37;
    const auto b = modelfit::fit_dispersion(sp, kConstants, {2400.0, 4200.0, 20.0});
    CHECK(b.fit.value("thickness_nm") == doctest::Approx(a.fit.value("thickness_nm")).epsilon(1e-9));
    CHECK(b.fit.value("air_gap_first_nm") == doctest::Approx(a.fit.value("air_gap_first_nm")).epsilon(1e-9));
    REQUIRE(a.step_labels.size() == b.step_labels.size());
    for (std::size_t i = 0; i < a.step_labels.size(); ++i) {
        CHECK(b.step_labels[i] == a.step_labels[i] + 37);
        CHECK(b.air_gap_nm[i] == doctest::Approx(a.air_gap_nm[i]).epsilon(1e-9));
    }
}

TEST_CASE("segment scatter weights")
{
    auto samples = loss_samples(0.9, 610.0, 0.03, 21, 2000);
    modelfit::weight_by_segment_scatter(samples);
    const auto stats = modelfit::segment_statistics(samples, 10.0, 100.0, 20);
    for (const auto& s : samples) CHECK(s.weight > 0.0);
    // Noisier segments (high finesse, relative noise) weigh less.
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end(),
                                              [](const auto& a, const auto& b) { return a.finesse < b.finesse; });
    CHECK(hi->weight < lo->weight);
    const auto r = modelfit::fit_loss_model(samples, kMirrors, kConstants);
    CHECK(std::abs(r.value("roughness_nm") - 0.9) <= 0.1);
    CHECK(std::abs(r.value("loss_additional_ppm") - 610.0) <= 50.0);
    CHECK(stats.size() >= 5);
}
