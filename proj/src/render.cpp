#include "dcav/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dcav::render {

namespace {

// Viridis anchors at t = 0, 0.125, ..., 1.
constexpr std::array<std::array<double, 3>, 9> kAnchors{{{68, 1, 84},
                                                          {71, 44, 122},
                                                          {59, 81, 139},
                                                          {44, 113, 142},
                                                          {33, 144, 141},
                                                          {39, 173, 129},
                                                          {92, 200, 99},
                                                          {170, 220, 50},
                                                          {253, 231, 37}}};

std::string hex(Rgb c)
{
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
    return buf;
}

std::string escape(const std::string& s)
{
    std::string out;
    for (char ch : s) {
        if (ch == '<') out += "&lt;";
        else if (ch == '>') out += "&gt;";
        else if (ch == '&') out += "&amp;";
        else out += ch;
    }
    return out;
}

std::string num(double v)
{
    // Four decimals keep the SVG compact and platform independent.
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    std::string s = buf;
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s == "-0" ? "0" : s;
}

std::string label_number(double v)
{
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

}  // namespace

Rgb colormap(double t)
{
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    const double pos = t * static_cast<double>(kAnchors.size() - 1);
    const std::size_t i = std::min(static_cast<std::size_t>(pos), kAnchors.size() - 2);
    const double f = pos - static_cast<double>(i);
    auto mix = [&](int c) { return static_cast<int>(std::lround(kAnchors[i][c] + f * (kAnchors[i + 1][c] - kAnchors[i][c]))); };
    return {mix(0), mix(1), mix(2)};
}

std::vector<ColorLevel> color_scale(double lo, double hi, int levels)
{
    if (levels < 2) throw std::invalid_argument("color scale needs at least 2 levels");
    if (!(hi > lo)) hi = lo + 1.0;
    std::vector<ColorLevel> out;
    for (int k = 0; k < levels; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(levels - 1);
        out.push_back({lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(levels), colormap(t)});
    }
    return out;
}

std::string heatmap_svg(const GridGeometry& g, const std::vector<double>& values, const std::vector<bool>& valid,
                        const std::vector<ColorLevel>& scale, const std::string& title, const std::string& unit)
{
    g.validate();
    if (values.size() != g.size() || valid.size() != g.size()) throw std::invalid_argument("heatmap data size mismatch");
    if (scale.size() < 2) throw std::invalid_argument("heatmap needs a color scale");

    const double cell = std::max(1.0, std::min(4.0, 600.0 / static_cast<double>(std::max(g.nx, g.ny))));
    const double left = 60, top = 40, bar = 20;
    const double w = cell * static_cast<double>(g.nx), h = cell * static_cast<double>(g.ny);
    const double width = left + w + 30 + bar + 80, height = top + h + 50;

    auto level_of = [&](double v) {
        std::size_t k = 0;
        while (k + 1 < scale.size() && v >= scale[k + 1].value) ++k;
        return static_cast<int>(k);
    };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
       << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << escape(title)
       << "</text>\n<g shape-rendering=\"crispEdges\">\n";
    // y grows upward in the map, downward in SVG.
    for (std::size_t iy = 0; iy < g.ny; ++iy) {
        const double y = top + h - cell * static_cast<double>(iy + 1);
        std::size_t ix = 0;
        while (ix < g.nx) {
            const std::size_t i = g.index(ix, iy);
            const int level = valid[i] && std::isfinite(values[i]) ? level_of(values[i]) : -1;
            std::size_t run = ix + 1;
            while (run < g.nx) {
                const std::size_t j = g.index(run, iy);
                const int lj = valid[j] && std::isfinite(values[j]) ? level_of(values[j]) : -1;
                if (lj != level) break;
                ++run;
            }
            const std::string fill = level < 0 ? "#bdbdbd" : hex(scale[static_cast<std::size_t>(level)].color);
            os << "<rect x=\"" << num(left + cell * static_cast<double>(ix)) << "\" y=\"" << num(y) << "\" width=\""
               << num(cell * static_cast<double>(run - ix)) << "\" height=\"" << num(cell) << "\" fill=\"" << fill
               << "\"/>\n";
            ix = run;
        }
    }
    os << "</g>\n";

    const double bx = left + w + 30;
    const double step = h / static_cast<double>(scale.size());
    for (std::size_t k = 0; k < scale.size(); ++k)
        os << "<rect x=\"" << num(bx) << "\" y=\"" << num(top + h - step * static_cast<double>(k + 1)) << "\" width=\""
           << num(bar) << "\" height=\"" << num(step + 0.5) << "\" fill=\"" << hex(scale[k].color) << "\"/>\n";
    const double top_value = scale.back().value + (scale.back().value - scale.front().value) / static_cast<double>(scale.size() - 1);
    os << "<text x=\"" << num(bx + bar + 4) << "\" y=\"" << num(top + 10) << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << label_number(top_value) << ' ' << escape(unit) << "</text>\n";
    os << "<text x=\"" << num(bx + bar + 4) << "\" y=\"" << num(top + h) << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << label_number(scale.front().value) << ' ' << escape(unit) << "</text>\n";
    os << "<text x=\"" << num(left) << "\" y=\"" << num(top + h + 20) << "\" font-family=\"sans-serif\" font-size=\"11\">x "
       << label_number(g.origin_x_um) << " .. " << label_number(g.x(g.nx - 1)) << " um, y "
       << label_number(g.origin_y_um) << " .. " << label_number(g.y(g.ny - 1)) << " um, pitch "
       << label_number(g.pitch_um) << " um</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string curve_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                      const std::string& y_label)
{
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("series x/y size mismatch");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!(x1 >= x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!(x1 > x0)) x1 = x0 + 1;
    if (!(y1 > y0)) y1 = y0 + 1;
    const double left = 70, top = 40, w = 560, h = 360;
    auto px = [&](double x) { return left + w * (x - x0) / (x1 - x0); };
    auto py = [&](double y) { return top + h - h * (y - y0) / (y1 - y0); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(left + w + 160) << "\" height=\"" << num(top + h + 60)
       << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << escape(title) << "</text>\n";
    os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const std::string color = hex(colormap(series.size() > 1 ? static_cast<double>(k) / static_cast<double>(series.size() - 1) * 0.85 : 0.3));
        if (s.points) {
            os << "<g fill=\"" << color << "\">\n";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
                    os << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"1.5\"/>\n";
            os << "</g>\n";
        } else {
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
            os << "\"/>\n";
        }
        os << "<text x=\"" << num(left + w + 10) << "\" y=\"" << num(top + 14 + 16 * static_cast<double>(k))
           << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">" << escape(s.label) << "</text>\n";
    }
    os << "<text x=\"" << num(left) << "\" y=\"" << num(top + h + 16) << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << label_number(x0) << "</text>\n";
    os << "<text x=\"" << num(left + w) << "\" y=\"" << num(top + h + 16)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << label_number(x1) << "</text>\n";
    os << "<text x=\"" << num(left + w / 2) << "\" y=\"" << num(top + h + 36)
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(top + h) << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
       << label_number(y0) << "</text>\n";
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(top + 10) << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
       << label_number(y1) << "</text>\n";
    os << "<text x=\"16\" y=\"" << num(top + h / 2) << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
       << num(top + h / 2) << ")\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace dcav::render
