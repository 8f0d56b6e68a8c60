#include "doctest.h"

#include "dcav/optics.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

using namespace dcav::optics;

namespace {

const OpticalConstants kConstants{};  // 637 nm, n = 2.41, alpha = 0
const MirrorSet kMirrors{};           // 50 / 670 ppm

double diamond_like_thickness(std::uint32_t q = 0)
{
    return mode_thickness_nm({q, ModeKind::diamond_like}, kConstants);
}

double air_like_thickness(std::uint32_t q)
{
    return mode_thickness_nm({q, ModeKind::air_like}, kConstants);
}

}  // namespace

TEST_CASE("mode thicknesses")
{
    CHECK(air_like_thickness(19) == doctest::Approx(2510.995850622407).epsilon(1e-14));
    CHECK(diamond_like_thickness(0) == doctest::Approx(66.07883817427386).epsilon(1e-14));
    CHECK(air_like_thickness(0) == 0.0);
    for (std::uint32_t q = 0; q < 40; ++q) {
        const double step = diamond_like_thickness(q) - air_like_thickness(q);
        CHECK(step == doctest::Approx(kConstants.wavelength_nm / (4.0 * kConstants.n_diamond)));
    }
}

TEST_CASE("field intensity ratio at mode thicknesses")
{
    const double n = kConstants.n_diamond;
    CHECK(field_intensity_ratio(0.0, kConstants) == doctest::Approx(1.0 / n).epsilon(1e-15));
    for (std::uint32_t q = 0; q < 30; ++q) {
        CHECK(field_intensity_ratio(air_like_thickness(q), kConstants) ==
              doctest::Approx(1.0 / n).epsilon(1e-12));
        CHECK(field_intensity_ratio(diamond_like_thickness(q), kConstants) ==
              doctest::Approx(n).epsilon(1e-12));
    }
}

TEST_CASE("field intensity ratio stays within [1/n, n]")
{
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> thickness(0.0, 6000.0);
    const double n = kConstants.n_diamond;
    for (int i = 0; i < 5000; ++i) {
        const double r = field_intensity_ratio(thickness(gen), kConstants);
        CHECK(r >= 1.0 / n * (1.0 - 1e-15));
        CHECK(r <= n * (1.0 + 1e-15));
    }
}

TEST_CASE("scattering loss anchors")
{
    const double t = diamond_like_thickness();
    CHECK(scattering_loss_ppm(t, 0.6, kConstants) == doctest::Approx(394.1113351090175).epsilon(1e-12));
    CHECK(scattering_loss_ppm(t, 1.1, kConstants) == doctest::Approx(1324.651987449753).epsilon(1e-12));
    // Anchors 390 / 1330 ppm within 2 %.
    CHECK(std::abs(scattering_loss_ppm(t, 0.6, kConstants) / 390.0 - 1.0) < 0.02);
    CHECK(std::abs(scattering_loss_ppm(t, 1.1, kConstants) / 1330.0 - 1.0) < 0.02);
    for (std::uint32_t q = 0; q < 20; ++q)
        CHECK(scattering_loss_ppm(air_like_thickness(q), 1.5, kConstants) < 1e-9);
}

TEST_CASE("scattering loss is periodic in thickness and quadratic in roughness")
{
    const double period = kConstants.wavelength_nm / (2.0 * kConstants.n_diamond);
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> thickness(0.0, 3000.0);
    std::uniform_real_distribution<double> sigma(0.0, 2.0);
    for (int i = 0; i < 500; ++i) {
        const double t = thickness(gen);
        const double s = sigma(gen);
        const double base = scattering_loss_ppm(t, s, kConstants);
        CHECK(scattering_loss_ppm(t + 3.0 * period, s, kConstants) ==
              doctest::Approx(base).epsilon(1e-9).scale(1e-9));
        CHECK(scattering_loss_ppm(t, 2.0 * s, kConstants) ==
              doctest::Approx(4.0 * base).epsilon(1e-12).scale(1e-12));
    }
}

TEST_CASE("effective losses")
{
    SUBCASE("bare cavity")
    {
        const LossBreakdown b = effective_losses({0.0, 0.0}, kMirrors, kConstants, 470.0);
        CHECK(b.loss_effective_ppm == doctest::Approx(798.0082987551867).epsilon(1e-13));
        CHECK(b.finesse == doctest::Approx(7873.583917586732).epsilon(1e-12));
        CHECK(b.loss_sample_mirror_weighted_ppm == doctest::Approx(670.0 / 2.41).epsilon(1e-15));
        CHECK(b.loss_scattering_weighted_ppm == 0.0);
        CHECK(b.loss_absorption_weighted_ppm == 0.0);
    }
    SUBCASE("diamond-like, laser-cut fit parameters")
    {
        const LossBreakdown b =
            effective_losses({diamond_like_thickness(), 0.9}, kMirrors, kConstants, 610.0);
        CHECK(b.loss_effective_ppm == doctest::Approx(4411.768714628647).epsilon(1e-12));
        CHECK(b.finesse == doctest::Approx(1424.187375540710).epsilon(1e-12));
    }
    SUBCASE("single channel")
    {
        const MirrorSet only_air{100.0, 0.0, 1.0};
        const LossBreakdown b = effective_losses({0.0, 0.0}, only_air, kConstants, 0.0);
        CHECK(b.finesse == doctest::Approx(2.0 * kPi / 1e-4).epsilon(1e-14));
    }
    SUBCASE("absorption channel is weighted by the field ratio")
    {
        OpticalConstants absorbing = kConstants;
        absorbing.alpha_per_m = 10.0;
        const double t = diamond_like_thickness(10);
        const LossBreakdown b = effective_losses({t, 0.0}, kMirrors, absorbing, 0.0);
        CHECK(b.loss_absorption_weighted_ppm ==
              doctest::Approx(b.field_ratio * 2.0 * 10.0 * t * 1e-9 * 1e6));
    }
}

TEST_CASE("effective losses invariants")
{
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const DiamondSlab slab{5000.0 * u(gen), 2.0 * u(gen)};
        MirrorSet mirrors{200.0 * u(gen), 2000.0 * u(gen), 1.0};
        OpticalConstants c = kConstants;
        c.alpha_per_m = 5.0 * u(gen);
        const double add = 1000.0 * u(gen);
        const LossBreakdown b = effective_losses(slab, mirrors, c, add + 1.0);
        const double sum = b.loss_air_mirror_ppm + b.loss_sample_mirror_weighted_ppm +
                           b.loss_absorption_weighted_ppm + b.loss_scattering_weighted_ppm +
                           b.loss_additional_ppm;
        CHECK(b.loss_effective_ppm == sum);
        CHECK(b.finesse * b.loss_effective_ppm * 1e-6 == doctest::Approx(2.0 * kPi).epsilon(1e-15));

        // Monotone in each loss input.
        const double base = b.loss_effective_ppm;
        CHECK(effective_losses(slab, mirrors, c, add + 2.0).loss_effective_ppm >= base);
        CHECK(effective_losses({slab.thickness_nm, slab.roughness_nm + 0.1}, mirrors, c, add + 1.0)
                  .loss_effective_ppm >= base);
        MirrorSet more = mirrors;
        more.loss_fiber_ppm += 5.0;
        CHECK(effective_losses(slab, more, c, add + 1.0).loss_effective_ppm >= base);
        more = mirrors;
        more.loss_sample_diamond_ppm += 5.0;
        CHECK(effective_losses(slab, more, c, add + 1.0).loss_effective_ppm >= base);
        OpticalConstants hotter = c;
        hotter.alpha_per_m += 1.0;
        CHECK(effective_losses(slab, mirrors, hotter, add + 1.0).loss_effective_ppm >= base);
    }
}

TEST_CASE("outcoupling efficiency anchors")
{
    // Additional loss chosen so the total finesse is 9000 (air-like) / 2000 (diamond-like).
    const double n = kConstants.n_diamond;
    const double air_add = 2.0 * kPi / 9000.0 * 1e6 - 50.0 - 670.0 / n;
    const LossBreakdown air = effective_losses({air_like_thickness(19), 0.0}, kMirrors, kConstants, air_add);
    CHECK(air.finesse == doctest::Approx(9000.0));
    CHECK(outcoupling_efficiency(air, kMirrors) == doctest::Approx(0.3982175547071074).epsilon(1e-9));

    const double dl_add = 2.0 * kPi / 2000.0 * 1e6 - 50.0 - 670.0 * n;
    const LossBreakdown dl = effective_losses({diamond_like_thickness(19), 0.0}, kMirrors, kConstants, dl_add);
    CHECK(outcoupling_efficiency(dl, kMirrors) == doctest::Approx(0.5139749732209668).epsilon(1e-9));

    const LossBreakdown only = effective_losses({0.0, 0.0}, {0.0, 670.0, 1.0}, kConstants, 0.0);
    CHECK(outcoupling_efficiency(only, {0.0, 670.0, 1.0}) == doctest::Approx(1.0));

    LossBreakdown zero;
    CHECK_THROWS_AS(outcoupling_efficiency(zero, kMirrors), std::invalid_argument);
}

TEST_CASE("beam geometry and clipping")
{
    const FiberTip fiber{17.3, 8.0};
    const BeamGeometry g = beam_geometry(5.0, fiber, kConstants);
    CHECK(g.waist_sample_um == doctest::Approx(1.260995563924111).epsilon(1e-13));
    CHECK(g.width_fiber_um == doctest::Approx(1.495491863826534).epsilon(1e-13));
    CHECK(clipping_loss_ppm(5.0, fiber, kConstants) == doctest::Approx(0.6110440524058952).epsilon(1e-11));

    CHECK(beam_geometry(1e-9, fiber, kConstants).waist_sample_um < 1e-2);
    CHECK_THROWS_AS(beam_geometry(17.3, fiber, kConstants), std::domain_error);
    CHECK_THROWS_AS(beam_geometry(20.0, fiber, kConstants), std::domain_error);
    CHECK_THROWS_AS(beam_geometry(0.0, fiber, kConstants), std::domain_error);

    FiberTip identity = fiber;
    identity.feature_diameter_um = 2.0 * g.width_fiber_um;
    CHECK(clipping_loss_ppm(5.0, identity, kConstants) == doctest::Approx(std::exp(-2.0) * 1e6).epsilon(1e-13));

    FiberTip huge = fiber;
    huge.feature_diameter_um = 1e4;
    CHECK(clipping_loss_ppm(5.0, huge, kConstants) == 0.0);
}

TEST_CASE("clipping loss monotonicity")
{
    for (double d = 4.0; d <= 16.0; d += 2.0) {
        const FiberTip fiber{17.3, d};
        double previous = 0.0;
        for (double length = 0.5; length < 17.3; length += 0.25) {
            const double loss = clipping_loss_ppm(length, fiber, kConstants);
            CHECK(loss >= previous);
            previous = loss;
            const FiberTip wider{17.3, d + 1.0};
            CHECK(clipping_loss_ppm(length, wider, kConstants) <= loss);
        }
    }
}

TEST_CASE("hybrid resonances: closed-form limits")
{
    const WavelengthBand band{600.0, 700.0};
    SUBCASE("bare cavity")
    {
        const double gap = 4000.0;
        const auto roots = hybrid_resonances_nm({gap, 0.0}, kConstants, band);
        REQUIRE(!roots.empty());
        for (double lambda : roots) {
            const double order = 2.0 * gap / lambda;
            CHECK(std::abs(order - std::round(order)) < 1e-12);
            CHECK(lambda == doctest::Approx(2.0 * gap / std::round(order)).epsilon(1e-14));
        }
        // Orders 12 and 13 fall in the band.
        CHECK(roots.size() == 2);
    }
    SUBCASE("diamond-filled cavity")
    {
        const double t = 2510.0;
        const auto roots = hybrid_resonances_nm({0.0, t}, kConstants, band);
        REQUIRE(!roots.empty());
        for (double lambda : roots) {
            const double order = 2.0 * kConstants.n_diamond * t / lambda;
            CHECK(lambda == doctest::Approx(2.0 * kConstants.n_diamond * t / std::round(order)).epsilon(1e-14));
        }
    }
    SUBCASE("root on a band edge is kept")
    {
        const auto roots = hybrid_resonances_nm({3000.0, 0.0}, kConstants, {600.0, 700.0});
        REQUIRE(!roots.empty());
        CHECK(roots.front() == doctest::Approx(600.0).epsilon(1e-14));
    }
    SUBCASE("empty band") { CHECK(hybrid_resonances_nm({4000.0, 2510.0}, kConstants, {650.0, 650.0}).empty()); }
    SUBCASE("degenerate geometry") { CHECK_THROWS(hybrid_resonances_nm({0.0, 0.0}, kConstants, band)); }
}

TEST_CASE("hybrid resonances agree with the characteristic-matrix oracle")
{
    const double n = kConstants.n_diamond;
    auto compare = [&](double gap, double t) {
        const auto analytic = hybrid_resonances_nm({gap, t}, kConstants, {600.0, 700.0});
        const auto brute = dcav::oracle::brute_force_resonances(gap, t, n, 600.0, 700.0, 5e-3);
        REQUIRE(analytic.size() == brute.size());
        for (std::size_t i = 0; i < analytic.size(); ++i)
            CHECK(std::abs(analytic[i] / brute[i] - 1.0) < 1e-9);
    };
    compare(4000.0, 2510.0);
    compare(4000.0, 3310.0);

    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> gap(500.0, 20000.0);
    std::uniform_real_distribution<double> thickness(0.0, 5000.0);
    for (int i = 0; i < 10; ++i) compare(gap(gen), thickness(gen));
}

TEST_CASE("resonance count grows with the air gap on the scale of one order")
{
    const WavelengthBand band{600.0, 700.0};
    const double k_span = 2.0 * kPi / band.lower_nm - 2.0 * kPi / band.upper_nm;
    const double order_step = kPi / k_span;  // gap increase that adds one phase order
    for (double t : {0.0, 800.0, 2510.0}) {
        std::size_t previous = 0;
        for (double gap = 500.0; gap < 20000.0; gap += order_step) {
            const std::size_t count = hybrid_resonances_nm({gap, t}, kConstants, band).size();
            CHECK(count >= previous);
            previous = count;
        }
    }
}

TEST_CASE("Purcell estimate")
{
    const FiberTip fiber{17.3, 10.0};
    const HybridGeometry geometry{1500.0, air_like_thickness(19)};
    CHECK(purcell_estimate(0.0, geometry, fiber, kConstants) == 0.0);
    const double single = purcell_estimate(9000.0, geometry, fiber, kConstants);
    CHECK(purcell_estimate(18000.0, geometry, fiber, kConstants) == doctest::Approx(2.0 * single));
    CHECK(single > 15.0);
    CHECK(single < 60.0);
}

TEST_CASE("free spectral range")
{
    // Bare 5 um cavity: c / 2L = 29.979 THz.
    CHECK(free_spectral_range_ghz({5000.0, 0.0}, kConstants) == doctest::Approx(29979.2458));
}
