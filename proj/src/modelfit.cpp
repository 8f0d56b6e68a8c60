#include "dcav/modelfit.hpp"

#include "dcav/lsq.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dcav::modelfit {

namespace {

using optics::kPi;

std::size_t name_index(const FitReport& r, const std::string& name)
{
    for (std::size_t i = 0; i < r.names.size(); ++i)
        if (r.names[i] == name) return i;
    throw std::out_of_range("fit report has no parameter '" + name + "'");
}

FitReport make_report(std::vector<std::string> names, const lsq::Result& res, const Eigen::VectorXd& observed,
                      const std::vector<bool>& fixed)
{
    FitReport r;
    r.names = std::move(names);
    r.values.assign(res.params.data(), res.params.data() + res.params.size());
    r.std_errors.assign(res.std_errors.data(), res.std_errors.data() + res.std_errors.size());
    r.fixed = fixed.empty() ? std::vector<bool>(r.names.size(), false) : fixed;
    r.at_bound = res.at_bound;
    r.residual_rms = std::sqrt(res.sum_squares / static_cast<double>(std::max<Eigen::Index>(1, res.residuals.size())));
    r.r_squared = lsq::r_squared(observed, res.residuals);
    r.iterations = res.iterations;
    r.converged = res.converged;
    r.message = res.message;
    return r;
}

// Nearest grid cell to (x, y); false when the point lies more than half a
// pitch outside the grid.
bool nearest_cell(const GridGeometry& g, double x, double y, std::size_t& ix, std::size_t& iy)
{
    const double fx = (x - g.origin_x_um) / g.pitch_um;
    const double fy = (y - g.origin_y_um) / g.pitch_um;
    const double tol = 0.5 + 1e-9;
    if (fx < -tol || fy < -tol || fx > static_cast<double>(g.nx - 1) + tol ||
        fy > static_cast<double>(g.ny - 1) + tol)
        return false;
    ix = static_cast<std::size_t>(std::clamp<long>(std::lround(fx), 0, static_cast<long>(g.nx) - 1));
    iy = static_cast<std::size_t>(std::clamp<long>(std::lround(fy), 0, static_cast<long>(g.ny) - 1));
    return true;
}

bool inside(const GridGeometry& g, double x, double y)
{
    std::size_t ix, iy;
    return nearest_cell(g, x, y, ix, iy);
}

// Finesse of the loss model with its derivatives.
struct LossModel {
    double finesse, d_roughness, d_loss_add, d_shift;
};

LossModel loss_model(double thickness_nm, double roughness_nm, double loss_add_ppm,
                     const optics::MirrorSet& mirrors, const optics::OpticalConstants& c)
{
    const double n = c.n_diamond;
    const double lambda = c.wavelength_nm;
    const double phi = 2.0 * kPi * n * thickness_nm / lambda;
    const double s = std::sin(phi), co = std::cos(phi);
    const double ratio = 1.0 / (s * s / n + n * co * co);
    const double index_factor = (n + 1.0) * (n - 1.0) * (n - 1.0) / n;
    const double rough = 4.0 * kPi * roughness_nm / lambda;
    const double scatter = s * s * index_factor * rough * rough;
    const double mirror_d = optics::ppm_to_fraction(mirrors.loss_sample_diamond_ppm);
    const double total = optics::ppm_to_fraction(mirrors.loss_fiber_ppm) + ratio * (mirror_d + scatter) +
                         optics::ppm_to_fraction(loss_add_ppm);

    const double f = 2.0 * kPi / total;
    const double df_dl = -f / total;
    const double d_ratio_dphi = -ratio * ratio * 2.0 * s * co * (1.0 / n - n);
    const double d_scatter_dphi = 2.0 * s * co * index_factor * rough * rough;
    const double dphi_dt = 2.0 * kPi * n / lambda;
    const double dl_dt = (d_ratio_dphi * (mirror_d + scatter) + ratio * d_scatter_dphi) * dphi_dt;
    const double dl_dsigma = ratio * s * s * index_factor * 2.0 * rough * (4.0 * kPi / lambda);
    return {f, df_dl * dl_dsigma, df_dl * 1e-6, df_dl * dl_dt};
}

}  // namespace

double FitReport::value(const std::string& name) const { return values[name_index(*this, name)]; }
double FitReport::error(const std::string& name) const { return std_errors[name_index(*this, name)]; }
bool FitReport::pinned(const std::string& name) const { return at_bound[name_index(*this, name)]; }

Registration register_heightmap(const HeightMap& height, const FinesseMap& scan, double ax, double ay,
                                double dispersion_thickness_um, std::optional<Region> region)
{
    height.grid.validate();
    scan.grid.validate();
    if (height.thickness_um.size() != height.grid.size() || scan.pixels.size() != scan.grid.size())
        throw std::invalid_argument("grid data size does not match its geometry");

    std::size_t hx, hy;
    if (!nearest_cell(height.grid, ax, ay, hx, hy)) {
        std::ostringstream os;
        os << "anchor (" << ax << ", " << ay << ") um lies outside the height map";
        if (!inside(scan.grid, ax, ay)) os << " and the scan grid";
        throw std::invalid_argument(os.str());
    }

    Registration reg;
    reg.offset_um = dispersion_thickness_um - height.at(hx, hy);
    for (std::size_t iy = 0; iy < scan.grid.ny; ++iy)
        for (std::size_t ix = 0; ix < scan.grid.nx; ++ix) {
            const auto& px = scan.at(ix, iy);
            const double x = scan.grid.x(ix), y = scan.grid.y(iy);
            if (!px.valid || !(px.finesse > 0.0)) continue;
            if (region && !region->contains(x, y)) continue;
            std::size_t cx, cy;
            if (!nearest_cell(height.grid, x, y, cx, cy)) continue;
            const double t = height.at(cx, cy) + reg.offset_um;
            if (t < 0.0) continue;
            reg.max_displacement_um =
                std::max(reg.max_displacement_um, std::hypot(height.grid.x(cx) - x, height.grid.y(cy) - y));
            reg.samples.push_back({t, px.finesse, x, y, 1.0});
        }
    return reg;
}

FitReport fit_loss_model(const std::vector<ThicknessFinesseSample>& samples, const optics::MirrorSet& mirrors,
                         const optics::OpticalConstants& constants, const LossFitOptions& opt)
{
    mirrors.validate();
    constants.validate();
    if (samples.size() < 4) throw std::invalid_argument("loss-model fit needs at least 4 samples");
    double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin, fmax = 0.0;
    for (const auto& s : samples) {
        tmin = std::min(tmin, s.thickness_um);
        tmax = std::max(tmax, s.thickness_um);
        fmax = std::max(fmax, s.finesse);
    }
    const double needed_nm = constants.wavelength_nm / (4.0 * constants.n_diamond);
    if ((tmax - tmin) * 1e3 < needed_nm) {
        std::ostringstream os;
        os << "insufficient thickness span: " << (tmax - tmin) * 1e3 << " nm < " << needed_nm
           << " nm (one air-like/diamond-like alternation)";
        throw std::invalid_argument(os.str());
    }

    const auto m = samples.size();
    Eigen::VectorXd observed(static_cast<Eigen::Index>(m)), sw(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
        observed[static_cast<Eigen::Index>(i)] = samples[i].finesse;
        sw[static_cast<Eigen::Index>(i)] = std::sqrt(std::max(samples[i].weight, 0.0));
    }
    // p = roughness_nm, loss_additional_ppm, thickness_shift_nm
    const lsq::Model model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
        for (std::size_t i = 0; i < m; ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            const auto e = loss_model(samples[i].thickness_um * 1e3 + p[2], p[0], p[1], mirrors, constants);
            r[k] = sw[k] * (e.finesse - samples[i].finesse);
            if (j) {
                (*j)(k, 0) = sw[k] * e.d_roughness;
                (*j)(k, 1) = sw[k] * e.d_loss_add;
                (*j)(k, 2) = sw[k] * e.d_shift;
            }
        }
    };
    const std::vector<lsq::Bounds> bounds{{0.0, opt.roughness_max_nm},
                                          {0.0, opt.loss_additional_max_ppm},
                                          {-opt.shift_bound_nm, opt.shift_bound_nm}};
    const double bare = optics::effective_losses({0.0, 0.0}, mirrors, constants, 0.0).loss_effective_ppm;
    const double ladd0 = std::max(0.0, optics::fraction_to_ppm(2.0 * kPi / fmax) - bare);
    lsq::Options o;
    o.typical_scale = {0.1, 10.0, 1.0};

    lsq::Result best;
    bool have = false;
    for (double s0 : opt.roughness_starts_nm) {
        for (double d0 : {-0.5 * opt.shift_bound_nm, 0.0, 0.5 * opt.shift_bound_nm}) {
            auto res = lsq::solve(model, m, Eigen::Vector3d(s0, ladd0, d0), bounds, {}, o);
            if (!have || res.sum_squares < best.sum_squares) {
                best = std::move(res);
                have = true;
            }
        }
    }
    // R^2 on the unweighted finesse values.
    Eigen::VectorXd resid(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
        const auto e = loss_model(samples[i].thickness_um * 1e3 + best.params[2], best.params[0], best.params[1],
                                  mirrors, constants);
        resid[static_cast<Eigen::Index>(i)] = e.finesse - samples[i].finesse;
    }
    best.residuals = resid;
    best.sum_squares = resid.squaredNorm();
    return make_report({"roughness_nm", "loss_additional_ppm", "thickness_shift_nm"}, best, observed, {});
}

double loss_model_finesse(const FitReport& r, double thickness_um, const optics::MirrorSet& mirrors,
                          const optics::OpticalConstants& constants)
{
    return loss_model(thickness_um * 1e3 + r.value("thickness_shift_nm"), r.value("roughness_nm"),
                      r.value("loss_additional_ppm"), mirrors, constants)
        .finesse;
}

std::vector<SegmentStats> segment_statistics(const std::vector<ThicknessFinesseSample>& samples,
                                             double segment_nm, double bin, std::size_t min_samples)
{
    if (!(segment_nm > 0.0)) throw std::invalid_argument("segment width must be positive");
    if (!(bin > 0.0)) throw std::invalid_argument("histogram bin width must be positive");

    std::map<long, std::vector<double>> groups;
    for (const auto& s : samples)
        groups[static_cast<long>(std::floor(s.thickness_um * 1e3 / segment_nm))].push_back(s.finesse);

    std::vector<SegmentStats> out;
    for (auto& [idx, values] : groups) {
        if (values.size() < min_samples) continue;
        std::sort(values.begin(), values.end());
        SegmentStats st;
        st.center_nm = (static_cast<double>(idx) + 0.5) * segment_nm;
        st.count = values.size();
        const double nv = static_cast<double>(values.size());
        const double mean = std::accumulate(values.begin(), values.end(), 0.0) / nv;
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        const double sd = values.size() > 1 ? std::sqrt(var / (nv - 1.0)) : 0.0;
        st.mean = mean;
        st.sigma = sd;

        const long first = static_cast<long>(std::floor(values.front() / bin));
        const long last = static_cast<long>(std::floor(values.back() / bin));
        std::vector<std::size_t> counts(static_cast<std::size_t>(last - first + 1), 0);
        for (double v : values) counts[static_cast<std::size_t>(static_cast<long>(std::floor(v / bin)) - first)] += 1;
        std::size_t nonempty = 0;
        for (std::size_t k = 0; k < counts.size(); ++k) {
            st.histogram.emplace_back(static_cast<double>(first + static_cast<long>(k)) * bin, counts[k]);
            if (counts[k] > 0) ++nonempty;
        }

        if (nonempty >= 3) {
            const auto nb = static_cast<Eigen::Index>(counts.size());
            Eigen::VectorXd x(nb), y(nb);
            for (Eigen::Index k = 0; k < nb; ++k) {
                x[k] = (static_cast<double>(first + k) + 0.5) * bin;
                y[k] = static_cast<double>(counts[static_cast<std::size_t>(k)]);
            }
            // p = mean, sigma, peak count
            const lsq::Model model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
                for (Eigen::Index k = 0; k < nb; ++k) {
                    const double z = (x[k] - p[0]) / p[1];
                    const double g = std::exp(-0.5 * z * z);
                    r[k] = p[2] * g - y[k];
                    if (j) {
                        (*j)(k, 0) = p[2] * g * z / p[1];
                        (*j)(k, 1) = p[2] * g * z * z / p[1];
                        (*j)(k, 2) = g;
                    }
                }
            };
            const double sigma0 = std::max(sd, 0.5 * bin);
            const double peak0 = nv * bin / (sigma0 * std::sqrt(2.0 * kPi));
            lsq::Options o;
            o.typical_scale = {bin, bin, 1.0};
            const auto res = lsq::solve(model, static_cast<std::size_t>(nb), Eigen::Vector3d(mean, sigma0, peak0),
                                        {{}, {1e-3 * bin, 1e300}, {0.0, 1e300}}, {}, o);
            // A single Gaussian that misses a second population falls back to moments.
            if (res.converged && lsq::r_squared(y, res.residuals) >= 0.8 && res.params[0] >= values.front() - bin &&
                res.params[0] <= values.back() + bin) {
                st.mean = res.params[0];
                st.sigma = std::abs(res.params[1]);
                st.histogram_fit = true;
            }
        }
        out.push_back(std::move(st));
    }
    return out;
}

void weight_by_segment_scatter(std::vector<ThicknessFinesseSample>& samples, double segment_nm,
                               std::size_t min_samples)
{
    if (!(segment_nm > 0.0)) throw std::invalid_argument("segment width must be positive");
    std::map<long, std::vector<double>> groups;
    auto key = [&](const ThicknessFinesseSample& s) { return static_cast<long>(std::floor(s.thickness_um * 1e3 / segment_nm)); };
    for (const auto& s : samples) groups[key(s)].push_back(s.finesse);

    std::map<long, double> variance;
    std::vector<double> all;
    for (auto& [idx, v] : groups) {
        if (v.size() < std::max<std::size_t>(min_samples, 2)) continue;
        std::sort(v.begin(), v.end());
        const double nv = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / nv;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double var = ss / (nv - 1.0);
        if (var > 0.0) {
            variance[idx] = var;
            all.push_back(var);
        }
    }
    double fallback = 1.0;
    if (!all.empty()) {
        std::nth_element(all.begin(), all.begin() + static_cast<long>(all.size() / 2), all.end());
        fallback = all[all.size() / 2];
    }
    for (auto& s : samples) {
        const auto it = variance.find(key(s));
        s.weight = 1.0 / (it == variance.end() ? fallback : it->second);
    }
}

Envelopes fit_envelopes(const std::vector<SegmentStats>& stats, const optics::MirrorSet& mirrors,
                        const optics::OpticalConstants& constants, const LossFitOptions& options)
{
    if (stats.size() < 5) throw std::invalid_argument("envelope fits need at least 5 segments");
    std::vector<ThicknessFinesseSample> upper, lower;
    for (const auto& s : stats) {
        const double t = s.center_nm * 1e-3;
        upper.push_back({t, s.mean + s.sigma, 0.0, 0.0, 1.0});
        if (s.mean - s.sigma > 0.0) lower.push_back({t, s.mean - s.sigma, 0.0, 0.0, 1.0});
    }
    return {fit_loss_model(upper, mirrors, constants, options), fit_loss_model(lower, mirrors, constants, options)};
}

double fraction_between_envelopes(const std::vector<ThicknessFinesseSample>& samples, const Envelopes& env,
                                  const optics::MirrorSet& mirrors, const optics::OpticalConstants& constants)
{
    if (samples.empty()) return 0.0;
    std::size_t inside_count = 0;
    for (const auto& s : samples) {
        const double a = loss_model_finesse(env.upper, s.thickness_um, mirrors, constants);
        const double b = loss_model_finesse(env.lower, s.thickness_um, mirrors, constants);
        if (s.finesse >= std::min(a, b) && s.finesse <= std::max(a, b)) ++inside_count;
    }
    return static_cast<double>(inside_count) / static_cast<double>(samples.size());
}

ClippingReport fit_clipping(const std::vector<synth::LengthSweepPoint>& data, const optics::FiberTip& fiber,
                            const optics::MirrorSet& mirrors, const optics::OpticalConstants& constants)
{
    fiber.validate();
    if (data.size() < 3) throw std::invalid_argument("clipping fit needs at least 3 lengths");
    const auto m = data.size();
    const double lambda_um = constants.wavelength_nm * 1e-3;
    const double base = optics::ppm_to_fraction(
        optics::effective_losses({0.0, 0.0}, mirrors, constants, 0.0).loss_effective_ppm);

    std::vector<double> w2(m);
    Eigen::VectorXd observed(static_cast<Eigen::Index>(m));
    double fmax = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (!(data[i].length_um > 0.0 && data[i].length_um < fiber.roc_um)) {
            std::ostringstream os;
            os << "cavity length " << data[i].length_um << " um outside (0, ROC = " << fiber.roc_um << " um)";
            throw std::invalid_argument(os.str());
        }
        const double w = optics::beam_geometry(data[i].length_um, fiber, constants).width_fiber_um;
        w2[i] = w * w;
        observed[static_cast<Eigen::Index>(i)] = data[i].finesse;
        fmax = std::max(fmax, data[i].finesse);
    }

    // p = loss_additional_ppm, feature_diameter_um
    const lsq::Model model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
        for (std::size_t i = 0; i < m; ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            const double clip = std::exp(-p[1] * p[1] / (2.0 * w2[i]));
            const double total = base + optics::ppm_to_fraction(p[0]) + clip;
            const double f = 2.0 * kPi / total;
            r[k] = f - data[i].finesse;
            if (j) {
                const double df = -f / total;
                (*j)(k, 0) = df * 1e-6;
                (*j)(k, 1) = df * (-clip * p[1] / w2[i]);
            }
        }
    };
    const double ladd0 = std::max(0.0, optics::fraction_to_ppm(2.0 * kPi / fmax - base));
    // Coarse log grid for the diameter.
    double d0 = 10.0, best_ss = std::numeric_limits<double>::infinity();
    Eigen::VectorXd r(static_cast<Eigen::Index>(m));
    for (double d = 1.0; d <= 200.0; d *= 1.05) {
        model(Eigen::Vector2d(ladd0, d), r, nullptr);
        if (r.squaredNorm() < best_ss) {
            best_ss = r.squaredNorm();
            d0 = d;
        }
    }
    lsq::Options o;
    o.typical_scale = {10.0, 1.0};
    const double d_max = 1e3;
    const auto res = lsq::solve(model, m, Eigen::Vector2d(ladd0, d0), {{0.0, 1e5}, {0.1, d_max}}, {}, o);

    ClippingReport out;
    out.fit = make_report({"loss_additional_ppm", "feature_diameter_um"}, res, observed, {});
    const double plateau_loss = base + optics::ppm_to_fraction(res.params[0]);
    out.plateau_finesse = 2.0 * kPi / plateau_loss;

    double max_clip = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        max_clip = std::max(max_clip, std::exp(-res.params[1] * res.params[1] / (2.0 * w2[i])));
    out.diameter_identifiable = max_clip > 0.01 * plateau_loss && res.params[1] < d_max;
    if (!out.diameter_identifiable) out.fit.message += "; feature diameter unidentifiable (no clipping roll-off in data)";

    // Length where clipping equals the plateau loss: w_m^2 = D^2 / (-2 ln L),
    // inverted through w_m^2 = (lambda/pi) R sqrt(L/(R-L)).
    const double wm2 = res.params[1] * res.params[1] / (-2.0 * std::log(plateau_loss));
    const double s = wm2 * kPi / (lambda_um * fiber.roc_um);
    out.rolloff_length_um = fiber.roc_um * s * s / (1.0 + s * s);
    return out;
}

std::vector<SpectralLine> extract_spectral_lines(const synth::DispersionSpectra& sp, double relative_threshold)
{
    const std::size_t nw = sp.wavelength_nm.size();
    const std::size_t steps = sp.step_label.size();
    if (sp.intensity.size() != nw * steps) throw std::invalid_argument("spectra matrix size mismatch");
    std::vector<SpectralLine> out;
    for (std::size_t s = 0; s < steps; ++s) {
        double top = 0.0;
        for (std::size_t i = 0; i < nw; ++i) top = std::max(top, sp.at(s, i));
        if (!(top > 0.0)) continue;
        for (std::size_t i = 1; i + 1 < nw; ++i) {
            const double a = sp.at(s, i - 1), b = sp.at(s, i), c = sp.at(s, i + 1);
            if (!(b > relative_threshold * top && b >= a && b > c)) continue;
            double shift;
            if (a > 0.0 && c > 0.0) {
                const double la = std::log(a), lb = std::log(b), lc = std::log(c);
                shift = 0.5 * (la - lc) / (la - 2.0 * lb + lc);
            } else {
                shift = 0.5 * (a - c) / (a - 2.0 * b + c);
            }
            if (!std::isfinite(shift)) shift = 0.0;
            shift = std::clamp(shift, -0.5, 0.5);
            out.push_back({sp.step_label[s], sp.wavelength_nm[i] + shift * (sp.wavelength_nm[i + 1] - sp.wavelength_nm[i]), -1});
        }
    }
    return out;
}

int associate_tracks(std::vector<SpectralLine>& lines)
{
    std::sort(lines.begin(), lines.end(), [](const SpectralLine& a, const SpectralLine& b) {
        return a.step_label != b.step_label ? a.step_label < b.step_label : a.wavelength_nm < b.wavelength_nm;
    });
    struct Track {
        double last = 0.0, velocity = 0.0;
        int last_step = 0, length = 0;
    };
    std::vector<Track> tracks;
    std::size_t i = 0;
    int prev_step = std::numeric_limits<int>::min();
    double spacing = std::numeric_limits<double>::infinity();  // last step with two or more lines
    while (i < lines.size()) {
        const int step = lines[i].step_label;
        std::size_t j = i;
        while (j < lines.size() && lines[j].step_label == step) ++j;

        std::vector<double> gaps;
        for (std::size_t k = i + 1; k < j; ++k) gaps.push_back(lines[k].wavelength_nm - lines[k - 1].wavelength_nm);
        if (!gaps.empty()) {
            std::sort(gaps.begin(), gaps.end());
            spacing = gaps[gaps.size() / 2];
        }
        const double threshold = 0.5 * spacing;

        std::vector<int> claimed(tracks.size(), -1);
        for (std::size_t k = i; k < j; ++k) {
            std::vector<int> cands;
            for (std::size_t t = 0; t < tracks.size(); ++t) {
                if (tracks[t].last_step != prev_step) continue;
                const double predicted = tracks[t].last + tracks[t].velocity * (step - prev_step);
                if (std::abs(lines[k].wavelength_nm - predicted) < threshold) cands.push_back(static_cast<int>(t));
            }
            if (cands.size() > 1) {
                std::ostringstream os;
                os << "line association ambiguous at step " << step << ", " << lines[k].wavelength_nm
                   << " nm: candidate tracks";
                for (int t : cands) os << " #" << t << " (last " << tracks[static_cast<std::size_t>(t)].last << " nm)";
                throw std::runtime_error(os.str());
            }
            if (cands.size() == 1) {
                const auto t = static_cast<std::size_t>(cands[0]);
                if (claimed[t] >= 0) {
                    std::ostringstream os;
                    os << "line association ambiguous at step " << step << ": track #" << t << " matches "
                       << lines[static_cast<std::size_t>(claimed[t])].wavelength_nm << " nm and "
                       << lines[k].wavelength_nm << " nm";
                    throw std::runtime_error(os.str());
                }
                claimed[t] = static_cast<int>(k);
                lines[k].track = cands[0];
            } else {
                lines[k].track = static_cast<int>(tracks.size());
                tracks.push_back({lines[k].wavelength_nm, 0.0, step, 0});
            }
        }
        for (std::size_t k = i; k < j; ++k) {
            auto& t = tracks[static_cast<std::size_t>(lines[k].track)];
            if (t.length > 0) t.velocity = (lines[k].wavelength_nm - t.last) / (step - t.last_step);
            t.last = lines[k].wavelength_nm;
            t.last_step = step;
            t.length += 1;
        }
        prev_step = step;
        i = j;
    }
    return static_cast<int>(tracks.size());
}

DispersionReport fit_dispersion(const synth::DispersionSpectra& sp, const optics::OpticalConstants& c,
                                const DispersionGuess& guess)
{
    c.validate();
    DispersionReport out;
    out.lines = extract_spectral_lines(sp);
    const int n_tracks = associate_tracks(out.lines);
    if (out.lines.size() < 3) throw std::invalid_argument("dispersion fit needs at least 3 visible mode lines");
    if (sp.step_label.empty()) throw std::invalid_argument("no length steps");
    const int first_label = *std::min_element(sp.step_label.begin(), sp.step_label.end());

    const std::size_t nl = out.lines.size();
    const double n = c.n_diamond;
    std::vector<double> k(nl), ds(nl);
    double lmin = std::numeric_limits<double>::infinity(), lmax = 0.0;
    for (std::size_t i = 0; i < nl; ++i) {
        k[i] = 2.0 * kPi / out.lines[i].wavelength_nm;
        ds[i] = out.lines[i].step_label - first_label;
        lmin = std::min(lmin, out.lines[i].wavelength_nm);
        lmax = std::max(lmax, out.lines[i].wavelength_nm);
    }

    // Coarse grid on the phase mismatch with per-track integer orders.
    auto orders_and_cost = [&](const std::vector<double>& phase, std::vector<int>* orders) {
        std::vector<double> sum(static_cast<std::size_t>(n_tracks), 0.0);
        std::vector<int> cnt(static_cast<std::size_t>(n_tracks), 0);
        for (std::size_t i = 0; i < nl; ++i) {
            sum[static_cast<std::size_t>(out.lines[i].track)] += phase[i];
            cnt[static_cast<std::size_t>(out.lines[i].track)] += 1;
        }
        std::vector<int> ord(static_cast<std::size_t>(n_tracks));
        for (int t = 0; t < n_tracks; ++t)
            ord[static_cast<std::size_t>(t)] = static_cast<int>(std::lround(sum[static_cast<std::size_t>(t)] / cnt[static_cast<std::size_t>(t)]));
        double cost = 0.0;
        for (std::size_t i = 0; i < nl; ++i) {
            const double d = phase[i] - ord[static_cast<std::size_t>(out.lines[i].track)];
            cost += d * d;
        }
        if (orders) *orders = ord;
        return cost;
    };

    const double td_lo = std::max(0.0, guess.thickness_nm - guess.thickness_halfwidth_nm);
    const double td_hi = guess.thickness_nm + guess.thickness_halfwidth_nm;
    const double ta_lo = std::max(0.0, guess.air_gap_first_nm - guess.air_gap_halfwidth_nm);
    const double ta_hi = guess.air_gap_first_nm + guess.air_gap_halfwidth_nm;
    double best_cost = std::numeric_limits<double>::infinity(), best_td = guess.thickness_nm,
           best_ta = guess.air_gap_first_nm;
    std::vector<double> theta(nl), phase(nl);
    for (double td = td_lo; td <= td_hi + 1e-9; td += 4.0) {
        for (std::size_t i = 0; i < nl; ++i) theta[i] = optics::resonance_phase(k[i], 0.0, td, n);
        for (double ta = ta_lo; ta <= ta_hi + 1e-9; ta += 10.0) {
            bool ok = true;
            for (std::size_t i = 0; i < nl; ++i) {
                const double gap = ta + guess.air_gap_per_step_nm * ds[i];
                if (gap < 0.0) { ok = false; break; }
                phase[i] = (k[i] * gap + theta[i]) / kPi;
            }
            if (!ok) continue;
            const double cost = orders_and_cost(phase, nullptr);
            if (cost < best_cost) {
                best_cost = cost;
                best_td = td;
                best_ta = ta;
            }
        }
    }
    for (std::size_t i = 0; i < nl; ++i)
        phase[i] = optics::resonance_phase(k[i], best_ta + guess.air_gap_per_step_nm * ds[i], best_td, n) / kPi;
    orders_and_cost(phase, &out.track_orders);

    const double k_lo = 2.0 * kPi / (2.0 * lmax);
    const double k_hi = 2.0 * kPi / (0.5 * lmin);
    Eigen::VectorXd observed(static_cast<Eigen::Index>(nl));
    for (std::size_t i = 0; i < nl; ++i) observed[static_cast<Eigen::Index>(i)] = out.lines[i].wavelength_nm;

    // p = thickness_nm, air_gap_first_nm, air_gap_per_step_nm
    const lsq::Model model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
        for (std::size_t i = 0; i < nl; ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            const int order = out.track_orders[static_cast<std::size_t>(out.lines[i].track)];
            const optics::HybridGeometry g{p[1] + p[2] * ds[i], p[0], 1.0};
            double lambda = g.air_gap_nm >= 0.0 ? optics::resonance_wavelength_nm(order, g, c, k_lo, k_hi) : -1.0;
            if (lambda < 0.0) lambda = std::numeric_limits<double>::quiet_NaN();
            r[row] = lambda - out.lines[i].wavelength_nm;
            if (j) {
                const double kk = 2.0 * kPi / lambda;
                const auto d = optics::resonance_phase_derivatives(kk, g.air_gap_nm, g.diamond_thickness_nm, n);
                // Phi(k, p) = m pi  =>  dk/dp = -dPhi/dp / dPhi/dk, dlambda = -lambda/k dk.
                const double scale = lambda / kk / d.d_k;
                (*j)(row, 0) = scale * d.d_thickness;
                (*j)(row, 1) = scale * d.d_air_gap;
                (*j)(row, 2) = scale * d.d_air_gap * ds[i];
            }
        }
    };
    lsq::Options o;
    o.typical_scale = {100.0, 100.0, 1.0};
    const auto res = lsq::solve(model, nl, Eigen::Vector3d(best_td, best_ta, guess.air_gap_per_step_nm),
                                {{0.0, 1e7}, {0.0, 1e7}, {}}, {}, o);
    if (!res.residuals.allFinite()) throw std::runtime_error("dispersion fit lost a resonance order");

    out.fit = make_report({"thickness_nm", "air_gap_first_nm", "air_gap_per_step_nm"}, res, observed, {});
    for (int label : sp.step_label) {
        out.step_labels.push_back(label);
        out.air_gap_nm.push_back(res.params[1] + res.params[2] * (label - first_label));
    }
    return out;
}

}  // namespace dcav::modelfit
