// Static SVG heatmaps and curves. Output depends only on the inputs.

#pragma once

#include "dcav/maps.hpp"

#include <string>
#include <vector>

namespace dcav::render {

struct Rgb {
    int r = 0, g = 0, b = 0;
};

/// Perceptual sequential colormap sampled at t in [0, 1].
Rgb colormap(double t);

struct ColorLevel {
    double value = 0.0;  // lower edge of the level
    Rgb color;
};

/// `levels` equal-width levels spanning [lo, hi].
std::vector<ColorLevel> color_scale(double lo, double hi, int levels = 64);

/// Grid heatmap; cells with valid[i] == false are drawn grey. Rows are
/// run-length merged by quantized color.
std::string heatmap_svg(const GridGeometry& grid, const std::vector<double>& values, const std::vector<bool>& valid,
                        const std::vector<ColorLevel>& scale, const std::string& title, const std::string& unit);

struct Series {
    std::vector<double> x, y;
    std::string label;
    bool points = false;  // markers instead of a polyline
};

std::string curve_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                      const std::string& y_label);

}  // namespace dcav::render
