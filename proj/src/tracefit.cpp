#include "dcav/tracefit.hpp"

#include "dcav/lineshape.hpp"
#include "dcav/lsq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace dcav::tracefit {

namespace {

constexpr double kFourLn2 = 2.772588722239781;

double median_of(std::vector<double> v)
{
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
    return 0.5 * (lo + hi);
}

double sweep_period(const synth::TransmissionTrace& tr) { return tr.sweep_hz > 0.0 ? 1.0 / tr.sweep_hz : 0.0; }

// Index of the half sweep containing t (0, 1, 2, ... counting from the start).
long half_segment(const synth::TransmissionTrace& tr, double t)
{
    const double period = sweep_period(tr);
    if (period <= 0.0) return 0;
    return static_cast<long>(std::floor((t - tr.sweep_start_s) / (0.5 * period)));
}

// Position inside the half sweep, 0..1.
double half_position(const synth::TransmissionTrace& tr, double t)
{
    const double period = sweep_period(tr);
    if (period <= 0.0) return 0.5;
    const double x = (t - tr.sweep_start_s) / (0.5 * period);
    return x - std::floor(x);
}

struct Window {
    std::size_t begin = 0, end = 0;
};

Window time_window(const synth::TransmissionTrace& tr, double lo, double hi)
{
    const auto b = std::lower_bound(tr.time_s.begin(), tr.time_s.end(), lo);
    const auto e = std::upper_bound(tr.time_s.begin(), tr.time_s.end(), hi);
    return {static_cast<std::size_t>(b - tr.time_s.begin()), static_cast<std::size_t>(e - tr.time_s.begin())};
}

// One Lorentzian term's contributions: value, d/dx0, d/dw (unit amplitude).
struct LorentzTerm {
    double value, d_x0, d_w;
};
LorentzTerm lorentz_term(double tau, double x0, double w)
{
    const double u = 2.0 * (tau - x0) / w;
    const double d = 1.0 + u * u;
    return {1.0 / d, 4.0 * u / (w * d * d), 2.0 * u * u / (w * d * d)};
}

// Samples of a window in local units tau = (t - t0) / scale.
struct LocalData {
    Eigen::VectorXd tau, y;
};
LocalData local_data(const synth::TransmissionTrace& tr, Window win, double t0, double scale)
{
    const auto m = static_cast<Eigen::Index>(win.end - win.begin);
    LocalData d{Eigen::VectorXd(m), Eigen::VectorXd(m)};
    for (Eigen::Index i = 0; i < m; ++i) {
        d.tau[i] = (tr.time_s[win.begin + static_cast<std::size_t>(i)] - t0) / scale;
        d.y[i] = tr.voltage_v[win.begin + static_cast<std::size_t>(i)];
    }
    return d;
}

double edge_baseline(const Eigen::VectorXd& y)
{
    const Eigen::Index k = std::max<Eigen::Index>(1, y.size() / 20);
    std::vector<double> edge;
    for (Eigen::Index i = 0; i < k; ++i) {
        edge.push_back(y[i]);
        edge.push_back(y[y.size() - 1 - i]);
    }
    return median_of(edge);
}

}  // namespace

std::vector<PeakWindow> find_peaks(const synth::TransmissionTrace& tr, const DetectOptions& opt,
                                   double* noise_out, double* baseline_out)
{
    std::vector<PeakWindow> out;
    const std::size_t n = tr.voltage_v.size();
    if (n < 5 || tr.time_s.size() != n) return out;
    const auto& v = tr.voltage_v;

    std::vector<double> diffs(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) diffs[i] = v[i + 1] - v[i];
    const double dmed = median_of(diffs);
    for (double& d : diffs) d = std::abs(d - dmed);
    const double noise = median_of(diffs) / 0.6744897501960817 / std::sqrt(2.0);
    const double baseline = median_of(v);
    if (noise_out) *noise_out = noise;
    if (baseline_out) *baseline_out = baseline;

    const auto imax = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    const double tallest = v[imax] - baseline;
    if (!(tallest > 0.0)) return out;

    // Half width of the tallest peak in samples sets the smoothing scale.
    std::size_t lo = imax, hi = imax;
    while (lo > 0 && v[lo] - baseline > 0.5 * tallest) --lo;
    while (hi + 1 < n && v[hi] - baseline > 0.5 * tallest) ++hi;
    const std::size_t half = (hi - lo) / 8;

    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + v[i];
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = i >= half ? i - half : 0;
        const std::size_t b = std::min(n, i + half + 1);
        s[i] = (prefix[b] - prefix[a]) / static_cast<double>(b - a);
    }

    const double threshold = std::max(opt.prominence_noise_factor * noise, opt.prominence_relative * tallest);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(s[i] > s[i - 1] && s[i] >= s[i + 1])) continue;
        if (s[i] - baseline < threshold) continue;
        double left_min = s[i];
        std::size_t j = i;
        while (j > 0 && s[j - 1] <= s[i]) left_min = std::min(left_min, s[--j]);
        double right_min = s[i];
        j = i;
        while (j + 1 < n && s[j + 1] <= s[i]) right_min = std::min(right_min, s[++j]);
        const double prominence = s[i] - std::max(left_min, right_min);
        if (prominence < threshold) continue;

        PeakWindow p;
        p.sample = i;
        p.time_s = tr.time_s[i];
        p.height_v = s[i] - baseline;
        p.prominence_v = prominence;
        const double level = baseline + 0.5 * p.height_v;
        std::size_t l = i, r = i;
        while (l > 0 && s[l] > level) --l;
        while (r + 1 < n && s[r] > level) ++r;
        auto cross = [&](std::size_t a, std::size_t b) {
            const double f = (level - s[a]) / (s[b] - s[a]);
            return tr.time_s[a] + f * (tr.time_s[b] - tr.time_s[a]);
        };
        const double tl = s[l] <= level && l < i ? cross(l, l + 1) : tr.time_s[l];
        const double trr = s[r] <= level && r > i ? cross(r - 1, r) : tr.time_s[r];
        p.fwhm_s = std::max(trr - tl, tr.time_s[std::min(i + 1, n - 1)] - tr.time_s[i]);
        p.half = static_cast<int>(half_segment(tr, p.time_s) % 2);
        out.push_back(p);
    }
    return out;
}

Detection detect_fundamental_modes(const synth::TransmissionTrace& tr, Acceptance acc,
                                   const DetectOptions& opt)
{
    Detection det;
    if (tr.time_s.empty()) {
        det.reason = "empty trace";
        return det;
    }
    auto peaks = find_peaks(tr, opt, &det.noise_v, &det.baseline_v);

    // Central part of each half sweep only.
    const double margin = 0.5 * (1.0 - opt.central_fraction);
    std::erase_if(peaks, [&](const PeakWindow& p) {
        if (tr.sweep_hz <= 0.0) return false;
        const double pos = half_position(tr, p.time_s);
        return pos < margin || pos > 1.0 - margin;
    });
    if (peaks.size() < 2) {
        det.reason = "fewer than 2 peaks in the central sweep region";
        return det;
    }

    std::vector<double> widths;
    for (const auto& p : peaks) widths.push_back(p.fwhm_s);
    const double fwhm_med = median_of(widths);

    // Merge close neighbours (polarization partners) into the stronger peak.
    const double merge = acc.automatic() ? 10.0 * fwhm_med : 0.1 * acc.min_s;
    std::vector<PeakWindow> merged;
    for (const auto& p : peaks) {
        if (!merged.empty() && p.time_s - merged.back().time_s <= merge &&
            half_segment(tr, p.time_s) == half_segment(tr, merged.back().time_s)) {
            auto& q = merged.back();
            if (p.height_v > q.height_v) {
                auto partners = q.partners;
                partners.push_back(q.sample);
                q = p;
                q.partners = partners;
            } else {
                q.partners.push_back(p.sample);
            }
            continue;
        }
        merged.push_back(p);
    }
    peaks = std::move(merged);
    if (peaks.size() < 2) {
        det.reason = "fewer than 2 separated peaks";
        return det;
    }

    if (acc.automatic()) {
        double hmax = 0.0;
        for (const auto& p : peaks) hmax = std::max(hmax, p.height_v);
        std::vector<double> spacings;
        const PeakWindow* prev = nullptr;
        for (const auto& p : peaks) {
            if (p.height_v < 0.5 * hmax) continue;
            if (prev && half_segment(tr, prev->time_s) == half_segment(tr, p.time_s))
                spacings.push_back(p.time_s - prev->time_s);
            prev = &p;
        }
        if (spacings.empty()) {
            det.reason = "mode distance: no adjacent strong peaks in one sweep half";
            return det;
        }
        const double med = median_of(spacings);
        acc = {0.8 * med, 1.25 * med};
    }
    det.acceptance = acc;

    // Union of all peak pairs with spacing inside the acceptance interval.
    const std::size_t k = peaks.size();
    std::vector<std::size_t> parent(k);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    bool any = false;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            if (half_segment(tr, peaks[i].time_s) != half_segment(tr, peaks[j].time_s)) continue;
            const double d = peaks[j].time_s - peaks[i].time_s;
            if (d >= acc.min_s && d <= acc.max_s) {
                parent[find(i)] = find(j);
                any = true;
            }
        }
    if (!any) {
        det.reason = "mode distance: no peak pair inside the acceptance interval";
        return det;
    }
    // Per sweep half, keep the connected group with the largest total height.
    struct Group {
        int size = 0;
        double height = 0.0;
    };
    std::map<std::size_t, Group> groups;
    for (std::size_t i = 0; i < k; ++i) {
        auto& g = groups[find(i)];
        g.size += 1;
        g.height += peaks[i].height_v;
    }
    std::map<long, std::size_t> best_root;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t root = find(i);
        if (groups[root].size < 2) continue;
        const long seg = half_segment(tr, peaks[i].time_s);
        const auto it = best_root.find(seg);
        if (it == best_root.end() || groups[root].height > groups[it->second].height) best_root[seg] = root;
    }
    for (std::size_t i = 0; i < k; ++i) {
        const auto it = best_root.find(half_segment(tr, peaks[i].time_s));
        if (it != best_root.end() && it->second == find(i)) det.peaks.push_back(peaks[i]);
    }
    det.ok = det.peaks.size() >= 2;
    if (!det.ok) det.reason = "mode distance: fewer than 2 accepted peaks";
    return det;
}

namespace {

PeakFit fit_single(const LocalData& d, double t0, double scale, double amp0, double base0)
{
    const auto m = static_cast<std::size_t>(d.tau.size());
    const lsq::Model model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
        for (Eigen::Index i = 0; i < d.tau.size(); ++i) {
            const auto t = lorentz_term(d.tau[i], p[0], p[1]);
            r[i] = p[3] + p[2] * t.value - d.y[i];
            if (j) {
                (*j)(i, 0) = p[2] * t.d_x0;
                (*j)(i, 1) = p[2] * t.d_w;
                (*j)(i, 2) = t.value;
                (*j)(i, 3) = 1.0;
            }
        }
    };
    lsq::Options o;
    const double a = std::max(std::abs(amp0), 1e-12);
    o.typical_scale = {1.0, 1.0, a, a};
    const std::vector<lsq::Bounds> bounds{{}, {1e-4, 1e4}, {}, {}};
    const auto res = lsq::solve(model, m, Eigen::Vector4d(0.0, 1.0, amp0, base0), bounds, {}, o);

    PeakFit f;
    f.center = t0 + res.params[0] * scale;
    f.width_fwhm = res.params[1] * scale;
    f.amplitude = res.params[2];
    f.offset = res.params[3];
    f.r_squared = lsq::r_squared(d.y, res.residuals);
    f.center_error = res.std_errors[0] * scale;
    f.width_error = res.std_errors[1] * scale;
    f.covariance = res.covariance;
    f.converged = res.converged;
    return f;
}

PeakFit fit_double(const LocalData& d, double t0, double scale, double partner_tau, double amp0,
                   double amp1, double base0)
{
    const auto m = static_cast<std::size_t>(d.tau.size());
    // p = c1, c2, w, A1, A2, offset
    const lsq::Model model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
        for (Eigen::Index i = 0; i < d.tau.size(); ++i) {
            const auto a = lorentz_term(d.tau[i], p[0], p[2]);
            const auto b = lorentz_term(d.tau[i], p[1], p[2]);
            r[i] = p[5] + p[3] * a.value + p[4] * b.value - d.y[i];
            if (j) {
                (*j)(i, 0) = p[3] * a.d_x0;
                (*j)(i, 1) = p[4] * b.d_x0;
                (*j)(i, 2) = p[3] * a.d_w + p[4] * b.d_w;
                (*j)(i, 3) = a.value;
                (*j)(i, 4) = b.value;
                (*j)(i, 5) = 1.0;
            }
        }
    };
    lsq::Options o;
    const double a = std::max(std::abs(amp0), 1e-12);
    o.typical_scale = {1.0, 1.0, 1.0, a, a, a};
    const std::vector<lsq::Bounds> bounds{{}, {}, {1e-4, 1e4}, {0.0, 1e300}, {0.0, 1e300}, {}};
    Eigen::VectorXd p0(6);
    p0 << 0.0, partner_tau, 1.0, amp0, amp1, base0;
    const auto res = lsq::solve(model, m, p0, bounds, {}, o);

    PeakFit f;
    f.doublet = true;
    f.center = t0 + 0.5 * (res.params[0] + res.params[1]) * scale;
    f.doublet_separation = std::abs(res.params[1] - res.params[0]) * scale;
    f.width_fwhm = res.params[2] * scale;
    f.amplitude = res.params[3] + res.params[4];
    f.offset = res.params[5];
    f.r_squared = lsq::r_squared(d.y, res.residuals);
    f.center_error = 0.5 * std::sqrt(res.covariance(0, 0) + res.covariance(1, 1) + 2.0 * res.covariance(0, 1)) * scale;
    f.width_error = res.std_errors[2] * scale;
    f.covariance = res.covariance;
    f.converged = res.converged;
    return f;
}

}  // namespace

PeakFit fit_lorentzian_window(const synth::TransmissionTrace& tr, std::size_t begin, std::size_t end,
                              double center_guess, double fwhm_guess)
{
    if (end > tr.time_s.size() || end < begin + 5) throw FitError("fit window needs at least 5 samples");
    if (!(fwhm_guess > 0.0)) throw FitError("initial width must be positive");
    const auto d = local_data(tr, {begin, end}, center_guess, fwhm_guess);
    const double base = edge_baseline(d.y);
    return fit_single(d, center_guess, fwhm_guess, d.y.maxCoeff() - base, base);
}

FinesseResult fit_finesse(const synth::TransmissionTrace& tr, Acceptance acceptance,
                          const FinesseOptions& opt)
{
    FinesseResult res;
    const Detection det = detect_fundamental_modes(tr, acceptance, opt.detect);
    if (!det.ok) {
        res.reason = det.reason;
        return res;
    }
    const Acceptance acc = det.acceptance;

    // Adjacent accepted pair closest to the middle of its sweep half.
    const double period = sweep_period(tr);
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < det.peaks.size(); ++i) {
        const auto& a = det.peaks[i];
        const auto& b = det.peaks[i + 1];
        const long seg = half_segment(tr, a.time_s);
        if (seg != half_segment(tr, b.time_s)) continue;
        const double d = b.time_s - a.time_s;
        if (d < acc.min_s || d > acc.max_s) continue;
        const double mid = 0.5 * (a.time_s + b.time_s);
        const double target = period > 0.0 ? tr.sweep_start_s + (static_cast<double>(seg) + 0.5) * 0.5 * period
                                            : 0.5 * (tr.time_s.front() + tr.time_s.back());
        if (std::abs(mid - target) < best_dist) {
            best_dist = std::abs(mid - target);
            best = static_cast<int>(i);
        }
    }
    if (best < 0) {
        res.reason = "mode distance: no adjacent pair inside the acceptance interval";
        return res;
    }

    for (int k = 0; k < 2; ++k) {
        const auto& p = det.peaks[static_cast<std::size_t>(best + k)];
        double lo = p.time_s - opt.window_fwhm * p.fwhm_s;
        double hi = p.time_s + opt.window_fwhm * p.fwhm_s;
        for (std::size_t s : p.partners) {
            lo = std::min(lo, tr.time_s[s] - opt.window_fwhm * p.fwhm_s);
            hi = std::max(hi, tr.time_s[s] + opt.window_fwhm * p.fwhm_s);
        }
        const Window win = time_window(tr, lo, hi);
        if (win.end < win.begin + 8) {
            res.reason = "fit window too short";
            return res;
        }
        const auto d = local_data(tr, win, p.time_s, p.fwhm_s);
        const double base = edge_baseline(d.y);
        PeakFit single = fit_single(d, p.time_s, p.fwhm_s, p.height_v + det.baseline_v - base, base);
        PeakFit chosen = single;
        for (std::size_t s : p.partners) {
            const double partner_tau = (tr.time_s[s] - p.time_s) / p.fwhm_s;
            const double partner_amp = tr.voltage_v[s] - base;
            PeakFit dbl = fit_double(d, p.time_s, p.fwhm_s, partner_tau, single.amplitude, partner_amp, base);
            if (dbl.converged && dbl.r_squared > chosen.r_squared + opt.doublet_r2_gain) chosen = dbl;
        }
        res.fits[k] = chosen;
    }

    if (!res.fits[0].converged || !res.fits[1].converged) {
        res.reason = "fit did not converge";
        return res;
    }
    res.mode_distance_s = std::abs(res.fits[1].center - res.fits[0].center);
    res.chosen_peak = res.fits[1].r_squared > res.fits[0].r_squared ? 1 : 0;
    const PeakFit& f = res.fits[res.chosen_peak];
    res.linewidth_s = f.width_fwhm;
    res.finesse = res.mode_distance_s / res.linewidth_s;
    if (res.mode_distance_s < acc.min_s || res.mode_distance_s > acc.max_s) {
        res.reason = "mode distance: fitted spacing outside the acceptance interval";
        return res;
    }
    if (f.r_squared < opt.r2_floor) {
        std::ostringstream os;
        os << "R^2 " << f.r_squared << " below floor " << opt.r2_floor;
        res.reason = os.str();
        return res;
    }
    res.valid = true;
    return res;
}

namespace {

// Sideband-ruler model in local units. p = c, Delta, w, A, r, offset[, delta, A2].
struct RulerFit {
    Eigen::VectorXd params;
    double ss = std::numeric_limits<double>::infinity();
    double r_squared = 0.0;
    bool converged = false;
};

RulerFit fit_ruler(const LocalData& d, const Eigen::VectorXd& p0)
{
    const bool six = p0.size() == 8;
    const auto m = static_cast<std::size_t>(d.tau.size());
    const lsq::Model model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
        if (j) j->setZero();
        const int modes = six ? 2 : 1;
        for (Eigen::Index i = 0; i < d.tau.size(); ++i) {
            double v = p[5];
            for (int b = 0; b < modes; ++b) {
                const double base = b == 0 ? p[0] : p[0] + p[6];
                const double amp = b == 0 ? p[3] : p[7];
                for (int s = -1; s <= 1; ++s) {
                    const double rel = s == 0 ? 1.0 : p[4];
                    const auto t = lorentz_term(d.tau[i], base + s * p[1], p[2]);
                    v += amp * rel * t.value;
                    if (!j) continue;
                    const double dx = amp * rel * t.d_x0;
                    (*j)(i, 0) += dx;
                    (*j)(i, 1) += s * dx;
                    (*j)(i, 2) += amp * rel * t.d_w;
                    if (s != 0) (*j)(i, 4) += amp * t.value;
                    if (b == 0) {
                        (*j)(i, 3) += rel * t.value;
                    } else {
                        (*j)(i, 6) += dx;
                        (*j)(i, 7) += rel * t.value;
                    }
                }
            }
            r[i] = v - d.y[i];
            if (j) (*j)(i, 5) = 1.0;
        }
    };
    std::vector<lsq::Bounds> bounds{{}, {0.5, 1e6}, {1e-3, 1e4}, {0.0, 1e300}, {0.0, 5.0}, {}};
    if (six) {
        bounds.push_back({});
        bounds.push_back({0.0, 1e300});
    }
    lsq::Options o;
    const double a = std::max(std::abs(p0[3]), 1e-12);
    o.typical_scale = {1.0, 1.0, 1.0, a, 1.0, a};
    if (six) {
        o.typical_scale.push_back(1.0);
        o.typical_scale.push_back(a);
    }
    RulerFit out;
    try {
        const auto res = lsq::solve(model, m, p0, bounds, {}, o);
        out.params = res.params;
        out.ss = res.sum_squares;
        out.r_squared = lsq::r_squared(d.y, res.residuals);
        out.converged = res.converged;
    } catch (const std::runtime_error&) {
    }
    return out;
}

}  // namespace

SplittingResult fit_polarization(const synth::TransmissionTrace& tr, double sideband_ghz,
                                 const PolarizationOptions& opt)
{
    if (!(sideband_ghz > 0.0)) throw std::invalid_argument("sideband frequency must be positive");
    SplittingResult out;
    auto peaks = find_peaks(tr, opt.detect);
    const double margin = 0.5 * (1.0 - opt.detect.central_fraction);
    std::erase_if(peaks, [&](const PeakWindow& p) {
        if (tr.sweep_hz <= 0.0) return false;
        const double pos = half_position(tr, p.time_s);
        return pos < margin || pos > 1.0 - margin;
    });
    if (peaks.empty()) {
        out.reason = "no peak in the central sweep region";
        return out;
    }
    std::size_t ip = 0;
    for (std::size_t i = 1; i < peaks.size(); ++i)
        if (peaks[i].height_v > peaks[ip].height_v) ip = i;
    const PeakWindow main = peaks[ip];

    // Chain of peaks around the strongest with gaps of at most 10 widths.
    std::size_t first = ip, last = ip;
    const double gap = 10.0 * main.fwhm_s;
    while (first > 0 && peaks[first].time_s - peaks[first - 1].time_s <= gap) --first;
    while (last + 1 < peaks.size() && peaks[last + 1].time_s - peaks[last].time_s <= gap) ++last;
    if (first == last) {
        out.reason = "no sideband peaks next to the fundamental";
        return out;
    }
    const double scale = main.fwhm_s;
    const Window win = time_window(tr, peaks[first].time_s - 8.0 * scale, peaks[last].time_s + 8.0 * scale);
    const auto d = local_data(tr, win, main.time_s, scale);
    const double base = edge_baseline(d.y);
    const double amp = d.y.maxCoeff() - base;

    std::vector<double> offsets;
    for (std::size_t i = first; i <= last; ++i)
        if (i != ip) offsets.push_back((peaks[i].time_s - main.time_s) / scale);

    RulerFit three;
    for (double o : offsets) {
        Eigen::VectorXd p0(6);
        p0 << 0.0, std::abs(o), 1.0, amp, 0.3, base;
        const auto f = fit_ruler(d, p0);
        if (f.converged && f.ss < three.ss) three = f;
    }
    if (!std::isfinite(three.ss)) {
        out.reason = "three-peak fit failed";
        return out;
    }

    RulerFit six;
    std::vector<double> deltas = offsets;
    for (double k : {-1.0, -0.5, 0.5, 1.0}) deltas.push_back(k);
    for (double o : offsets) {
        for (double dl : deltas) {
            if (std::abs(std::abs(dl) - std::abs(o)) < 0.25) continue;
            Eigen::VectorXd p0(8);
            p0 << 0.0, std::abs(o), 1.0, amp, 0.3, base, dl, 0.5 * amp;
            const auto f = fit_ruler(d, p0);
            if (f.converged && f.ss < six.ss) six = f;
        }
    }

    const RulerFit* chosen = &three;
    if (std::isfinite(six.ss) && six.r_squared > three.r_squared + opt.six_peak_r2_gain) {
        const double split = std::abs(six.params[6]);
        if (split > opt.resolvability * six.params[2]) chosen = &six;
    }
    const double ghz_per_unit = sideband_ghz / chosen->params[1];
    out.peaks_in_model = chosen == &six ? 6 : 3;
    out.r_squared = chosen->r_squared;
    out.linewidth_ghz = chosen->params[2] * ghz_per_unit;
    out.sideband_spacing_s = chosen->params[1] * scale;
    out.splitting_ghz = chosen == &six ? std::abs(chosen->params[6]) * ghz_per_unit : 0.0;
    out.resolved = chosen == &six;
    out.accepted = out.r_squared > opt.r2_floor;
    if (!out.accepted) {
        out.reason = "R^2 below floor";
        out.splitting_ghz = 0.0;
        out.resolved = false;
    } else if (!out.resolved) {
        out.reason = "splitting not resolved";
    }
    return out;
}

std::string to_string(LineModel m)
{
    switch (m) {
    case LineModel::lorentzian: return "lorentzian";
    case LineModel::gaussian: return "gaussian";
    case LineModel::voigt: return "voigt";
    }
    return "?";
}

LineModel parse_line_model(const std::string& s)
{
    if (s == "lorentzian") return LineModel::lorentzian;
    if (s == "gaussian") return LineModel::gaussian;
    if (s == "voigt") return LineModel::voigt;
    throw std::invalid_argument("unknown line model '" + s + "'");
}

LineshapeFit fit_ple_scan(const std::vector<double>& freq, const std::vector<double>& counts,
                          LineModel model, const PleFitOptions& opt)
{
    const std::size_t n = freq.size();
    if (counts.size() != n) throw FitError("frequency and count arrays differ in length");
    if (n < 20) throw FitError("scan needs at least 20 points");
    for (std::size_t i = 1; i < n; ++i)
        if (!(freq[i] > freq[i - 1])) throw FitError("frequency axis is not strictly increasing");

    // Light smoothing for the initial guesses only.
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = i > 0 ? i - 1 : 0, b = std::min(n - 1, i + 1);
        double acc = 0.0;
        for (std::size_t k = a; k <= b; ++k) acc += counts[k];
        s[i] = acc / static_cast<double>(b - a + 1);
    }
    std::vector<double> sorted = counts;
    std::sort(sorted.begin(), sorted.end());
    const double base0 = median_of({sorted.begin(), sorted.begin() + static_cast<long>(std::max<std::size_t>(1, n / 4))});
    const auto ip = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    const double amp0 = s[ip] - base0;
    if (!(amp0 > 0.0)) throw FitError("degenerate peak: no signal above the background");
    std::size_t l = ip, r = ip;
    while (l > 0 && s[l] - base0 > 0.5 * amp0) --l;
    while (r + 1 < n && s[r] - base0 > 0.5 * amp0) ++r;
    const double step = (freq.back() - freq.front()) / static_cast<double>(n - 1);
    const double w0 = std::max(freq[r] - freq[l], 2.0 * step);
    const double c0 = freq[ip];

    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = counts[i];

    LineshapeFit fit;
    fit.model = model;
    lsq::Result res;
    if (model != LineModel::voigt) {
        const bool lor = model == LineModel::lorentzian;
        const lsq::Model fn = [&](const Eigen::VectorXd& p, Eigen::VectorXd& rr, Eigen::MatrixXd* j) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto k = static_cast<Eigen::Index>(i);
                const double x = freq[i] - p[0];
                double v, dc, dw;
                if (lor) {
                    const auto t = lorentz_term(freq[i], p[0], p[1]);
                    v = t.value;
                    dc = t.d_x0;
                    dw = t.d_w;
                } else {
                    v = std::exp(-kFourLn2 * x * x / (p[1] * p[1]));
                    dc = v * 2.0 * kFourLn2 * x / (p[1] * p[1]);
                    dw = v * 2.0 * kFourLn2 * x * x / (p[1] * p[1] * p[1]);
                }
                rr[k] = p[3] + p[2] * v - counts[i];
                if (j) {
                    (*j)(k, 0) = p[2] * dc;
                    (*j)(k, 1) = p[2] * dw;
                    (*j)(k, 2) = v;
                    (*j)(k, 3) = 1.0;
                }
            }
        };
        lsq::Options o;
        o.typical_scale = {w0, w0, amp0, amp0};
        res = lsq::solve(fn, n, Eigen::Vector4d(c0, w0, amp0, base0), {{}, {1e-6 * w0, 1e300}, {}, {}}, {}, o);
        fit.center_mhz = res.params[0];
        fit.fwhm_total_mhz = res.params[1];
        fit.fwhm_total_error = res.std_errors[1];
        if (lor) {
            fit.fwhm_lorentzian_mhz = res.params[1];
            fit.fwhm_lorentzian_error = res.std_errors[1];
        } else {
            fit.fwhm_gaussian_mhz = res.params[1];
            fit.fwhm_gaussian_error = res.std_errors[1];
        }
        fit.amplitude = res.params[2];
        fit.offset = res.params[3];
    } else {
        const double floor = std::max(opt.lorentzian_floor_mhz, 0.0);
        const bool fix_g = opt.fixed_gaussian_fwhm_mhz >= 0.0;
        const bool fix_l = opt.fixed_lorentzian_fwhm_mhz >= 0.0;
        // p = center, fwhm_L, fwhm_G, area, offset
        const lsq::Model fn = [&](const Eigen::VectorXd& p, Eigen::VectorXd& rr, Eigen::MatrixXd* j) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto k = static_cast<Eigen::Index>(i);
                const auto g = lineshape::voigt_with_gradient(freq[i], p[0], p[1], p[2]);
                rr[k] = p[4] + p[3] * g.value - counts[i];
                if (j) {
                    (*j)(k, 0) = p[3] * g.d_center;
                    (*j)(k, 1) = fix_l ? 0.0 : p[3] * g.d_fwhm_lorentzian;
                    (*j)(k, 2) = fix_g ? 0.0 : p[3] * g.d_fwhm_gaussian;
                    (*j)(k, 3) = g.value;
                    (*j)(k, 4) = 1.0;
                }
            }
        };
        const double l_lower = fix_l ? 0.0 : std::max(floor, 1e-6 * w0);
        const std::vector<lsq::Bounds> bounds{{}, {l_lower, 1e300}, {0.0, 1e300}, {}, {}};
        std::vector<bool> fixed{false, fix_l, fix_g, false, false};
        std::vector<std::pair<double, double>> starts{{0.5 * w0, 0.6 * w0}, {0.9 * w0, 0.2 * w0}, {floor, w0}};
        bool have = false;
        for (auto [fl, fg] : starts) {
            fl = std::max(fl, std::max(floor, 1e-6 * w0));
            if (fix_g) fg = opt.fixed_gaussian_fwhm_mhz;
            if (fix_l) fl = opt.fixed_lorentzian_fwhm_mhz;
            const double area = amp0 / lineshape::voigt(0.0, 0.0, fl, fg);
            Eigen::VectorXd p0(5);
            p0 << c0, fl, fg, area, base0;
            lsq::Options o;
            o.typical_scale = {w0, w0, w0, std::abs(area), amp0};
            auto trial = lsq::solve(fn, n, p0, bounds, fixed, o);
            if (!have || (trial.converged && (!res.converged || trial.sum_squares < res.sum_squares))) {
                res = std::move(trial);
                have = true;
            }
        }
        fit.center_mhz = res.params[0];
        fit.fwhm_lorentzian_mhz = res.params[1];
        fit.fwhm_gaussian_mhz = res.params[2];
        fit.fwhm_total_mhz = lineshape::voigt_fwhm(res.params[1], res.params[2]);
        fit.fwhm_lorentzian_error = res.std_errors[1];
        fit.fwhm_gaussian_error = res.std_errors[2];
        // Propagate through the width combination.
        const double fl = res.params[1], fg = res.params[2];
        const double root = std::sqrt(0.2166 * fl * fl + fg * fg);
        const double dl = 0.5346 + (root > 0.0 ? 0.2166 * fl / root : std::sqrt(0.2166));
        const double dg = root > 0.0 ? fg / root : 0.0;
        const auto& cv = res.covariance;
        fit.fwhm_total_error = std::sqrt(std::max(0.0, dl * dl * cv(1, 1) + dg * dg * cv(2, 2) + 2.0 * dl * dg * cv(1, 2)));
        fit.amplitude = res.params[3] * lineshape::voigt(0.0, 0.0, fl, fg);
        fit.offset = res.params[4];
        fit.lorentzian_at_floor = res.at_bound[1] || res.params[1] <= floor * (1.0 + 1e-9);
    }
    fit.center_error = res.std_errors[0];
    fit.r_squared = lsq::r_squared(y, res.residuals);
    fit.iterations = res.iterations;

    const double rms = std::sqrt(res.sum_squares / static_cast<double>(n));
    if (!res.converged) {
        std::ostringstream os;
        os << to_string(model) << " fit did not converge after " << res.iterations
           << " iterations (" << res.message << "); residual rms " << rms << ", R^2 " << fit.r_squared;
        throw FitError(os.str());
    }
    if (!(fit.fwhm_total_mhz > 0.0) || !std::isfinite(fit.fwhm_total_mhz)) {
        std::ostringstream os;
        os << to_string(model) << " fit degenerate: width " << fit.fwhm_total_mhz << "; residual rms " << rms;
        throw FitError(os.str());
    }
    return fit;
}

DiffusionResult spectral_diffusion_average(const synth::PleScanSet& set, const DiffusionOptions& opt)
{
    if (set.scans.size() < 10) throw std::invalid_argument("spectral diffusion analysis needs at least 10 scans");
    const auto& axis = set.scans.front().freq_mhz;
    for (const auto& s : set.scans)
        if (s.freq_mhz != axis || s.counts.size() != axis.size())
            throw std::invalid_argument("all scans must share one frequency axis");
    if (axis.size() < 20) throw std::invalid_argument("scans need at least 20 points");

    DiffusionResult out;
    const double inv = 1.0 / static_cast<double>(set.scans.size());
    out.average_counts.assign(axis.size(), 0.0);
    for (const auto& s : set.scans)
        for (std::size_t i = 0; i < axis.size(); ++i) out.average_counts[i] += s.counts[i] * inv;
    out.gaussian_fit = fit_ple_scan(axis, out.average_counts, LineModel::gaussian);

    const double lo = axis.front(), hi = axis.back();
    const double step = (hi - lo) / static_cast<double>(axis.size() - 1);
    const double bin = step / opt.bins_per_step;
    std::map<long, std::pair<double, int>> bins;
    out.selected.assign(set.scans.size(), false);
    for (std::size_t k = 0; k < set.scans.size(); ++k) {
        LineshapeFit f;
        try {
            f = fit_ple_scan(axis, set.scans[k].counts, LineModel::lorentzian);
        } catch (const FitError&) {
            continue;
        }
        const double margin = opt.completeness_fwhm * f.fwhm_total_mhz;
        if (f.r_squared < opt.r2_floor || f.center_mhz - margin < lo || f.center_mhz + margin > hi) continue;
        out.selected[k] = true;
        ++out.selected_count;
        for (std::size_t i = 0; i < axis.size(); ++i) {
            auto& b = bins[std::lround((axis[i] - f.center_mhz) / bin)];
            b.first += set.scans[k].counts[i];
            b.second += 1;
        }
    }
    if (out.selected_count == 0) throw FitError("no scan passed the completeness and R^2 selection");
    const double fraction = out.selected_count * inv;
    if (fraction < opt.selection_fraction_min) {
        std::ostringstream os;
        os << "only " << out.selected_count << " of " << set.scans.size() << " scans selected";
        out.warning = os.str();
    }

    const double min_count = std::max(1.0, 0.5 * out.selected_count / opt.bins_per_step);
    std::vector<double> x, y;
    for (const auto& [idx, b] : bins) {
        if (b.second < min_count) continue;
        x.push_back(static_cast<double>(idx) * bin);
        y.push_back(b.first / b.second);
    }
    out.dephasing_fit = fit_ple_scan(x, y, LineModel::lorentzian);

    // The plain average is the dephasing Lorentzian convolved with the diffusion Gaussian.
    PleFitOptions deconvolve;
    deconvolve.fixed_lorentzian_fwhm_mhz = out.dephasing_fit.fwhm_lorentzian_mhz;
    try {
        out.diffusion_fit = fit_ple_scan(axis, out.average_counts, LineModel::voigt, deconvolve);
    } catch (const FitError& e) {
        out.warning += (out.warning.empty() ? "" : "; ") + std::string("diffusion deconvolution failed: ") + e.what();
    }
    return out;
}

PleSummary ple_statistics(std::vector<double> v)
{
    if (v.empty()) throw std::invalid_argument("linewidth statistics need at least one value");
    std::sort(v.begin(), v.end());
    PleSummary s;
    s.min = v.front();
    s.max = v.back();
    const std::size_t n = v.size();
    s.median = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    for (std::size_t i = 0; i < n; ++i)
        s.cdf.emplace_back(v[i], static_cast<double>(i + 1) / static_cast<double>(n));
    return s;
}

PleSummary ple_statistics(const std::vector<LineshapeFit>& fits)
{
    std::vector<double> v;
    v.reserve(fits.size());
    for (const auto& f : fits) v.push_back(f.fwhm_total_mhz);
    return ple_statistics(std::move(v));
}

}  // namespace dcav::tracefit
