// Lateral 2D grids shared by the synthesis, analysis and IO layers.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcav {

/// Regular grid: x = origin_x + ix * pitch, y = origin_y + iy * pitch.
/// Data are stored row-major with iy as the slow index.
struct GridGeometry {
    double origin_x_um = 0.0;
    double origin_y_um = 0.0;
    double pitch_um = 1.0;
    std::size_t nx = 0;
    std::size_t ny = 0;

    std::size_t size() const { return nx * ny; }
    std::size_t index(std::size_t ix, std::size_t iy) const { return iy * nx + ix; }
    double x(std::size_t ix) const { return origin_x_um + static_cast<double>(ix) * pitch_um; }
    double y(std::size_t iy) const { return origin_y_um + static_cast<double>(iy) * pitch_um; }

    bool operator==(const GridGeometry&) const = default;

    void validate() const
    {
        if (!(pitch_um > 0.0)) throw std::invalid_argument("grid pitch must be positive");
        if (nx == 0 || ny == 0) throw std::invalid_argument("grid must be non-empty");
    }
};

/// Grid of extent (width, height) sampled at the pitch, both edges included.
inline GridGeometry make_grid(double width_um, double height_um, double pitch_um,
                              double origin_x_um = 0.0, double origin_y_um = 0.0)
{
    if (!(width_um >= 0.0) || !(height_um >= 0.0) || !(pitch_um > 0.0))
        throw std::invalid_argument("grid extent must be >= 0 and pitch > 0");
    GridGeometry g;
    g.origin_x_um = origin_x_um;
    g.origin_y_um = origin_y_um;
    g.pitch_um = pitch_um;
    g.nx = static_cast<std::size_t>(std::llround(std::floor(width_um / pitch_um + 1e-9))) + 1;
    g.ny = static_cast<std::size_t>(std::llround(std::floor(height_um / pitch_um + 1e-9))) + 1;
    return g;
}

struct HeightMap {
    GridGeometry grid;
    std::vector<double> thickness_um;
    std::string frame;  // provenance note

    double at(std::size_t ix, std::size_t iy) const { return thickness_um[grid.index(ix, iy)]; }
};

struct RoughnessField {
    GridGeometry grid;
    std::vector<double> sigma_nm;
    double correlation_length_um = 1.0;
    std::uint64_t seed = 0;
};

struct FinessePixel {
    double finesse = 0.0;
    double linewidth_ghz = 0.0;
    double splitting_ghz = 0.0;
    double transmission = 0.0;
    bool valid = false;
};

struct FinesseMap {
    GridGeometry grid;
    std::vector<FinessePixel> pixels;

    const FinessePixel& at(std::size_t ix, std::size_t iy) const { return pixels[grid.index(ix, iy)]; }
};

}  // namespace dcav
