#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pbev/geometry.hpp"
#include "pbev/tensor.hpp"

namespace pbev::bev {

// Polar BEV discretization: M uniform angular bins x N radial bins whose
// edges grow geometrically from r_min to r_max (edge 0 sits at 0).
struct PolarGridSpec {
    int M = 0;
    int N = 0;
    double r_min = 0;
    double r_max = 0;
    std::vector<double> radial_edges;  // N+1 values: 0, r_min, ..., r_max

    int cells() const { return M * N; }
    double angular_width() const { return 2.0 * M_PI / M; }

    // Flat index (angular-major) of the cell containing (azimuth, distance),
    // or nullopt when the distance is off-grid. Radial lookup is an exact
    // edge search so that any linear-scan oracle agrees bit for bit.
    std::optional<int> cell_of(double azimuth, double distance) const;

    int angular_bin(double azimuth) const;
    int flat(int m, int n) const { return m * N + n; }

    double center_azimuth(int m) const { return (m + 0.5) * angular_width(); }
    double center_radius(int n) const { return 0.5 * (radial_edges[n] + radial_edges[n + 1]); }
    double radial_span(int n) const { return radial_edges[n + 1] - radial_edges[n]; }
};

PolarGridSpec build_polar_grid(int M, int N, double r_min, double r_max);

// Azimuth-vs-distance curve for one feature column: a = f(d), a cubic in
// normalized log-distance. The log abscissa matches the grid's radial
// spacing and is what keeps fisheye edge columns within a half degree of
// dense projections (a quadratic in raw d misses by ~1.4 degrees).
struct ColumnCurve {
    int camera = 0;
    int column = 0;
    double c0 = 0, c1 = 0, c2 = 0, c3 = 0;  // a(t) = c0 + c1 t + c2 t^2 + c3 t^3
    double x_mid = 0, x_half = 1;           // t = (log d - x_mid) / x_half
    double d_lo = 0, d_hi = 0;              // fitted distance range, meters
    bool valid = false;

    double eval(double d) const {
        double t = (std::log(d) - x_mid) / x_half;
        return c0 + t * (c1 + t * (c2 + t * c3));
    }
    bool in_range(double d) const { return valid && d >= d_lo && d <= d_hi; }
};

// Feature columns are taken at stride 8, matching the single transformed
// feature level.
inline constexpr int kFeatureStride = 8;

std::vector<ColumnCurve> fit_column_curves(const geom::CameraIntrinsics& cam,
                                           const geom::RigPose& pose,
                                           const PolarGridSpec& grid,
                                           int camera_index = 0,
                                           int rows_sampled = 16);

// Per-camera depth discretization: D bin centers growing geometrically up
// to the camera range.
struct DepthBinSpec {
    int D = 0;
    std::vector<double> centers;  // meters, strictly increasing, <= range
};

DepthBinSpec build_depth_bins(int D, double range, double first_center = 0.5);

// Index tables mapping per-camera source slots to BEV cells. For the MLP
// path a slot is (column, depth bin); for the IPM path a slot is a stride-8
// feature pixel. Sentinel -1 marks off-grid slots.
inline constexpr int32_t kOffGrid = -1;

struct CameraLut {
    int camera = 0;
    int columns = 0;  // slots_major
    int depth_bins = 0;  // slots_minor (or feature width for IPM tables)
    std::vector<int32_t> cells;  // columns * depth_bins entries, [col][bin]

    int32_t at(int col, int bin) const { return cells[size_t(col) * depth_bins + bin]; }
};

struct BevLut {
    std::vector<CameraLut> cameras;
    int grid_cells = 0;

    // CSR inverted index: for each cell, the (camera, slot) sources sorted
    // in (camera, slot) order. This drives the parallel gather and keeps
    // its per-cell accumulation order identical to the sequential scatter.
    std::vector<int32_t> cell_offsets;   // grid_cells + 1
    std::vector<uint64_t> cell_sources;  // (camera << 32) | slot

    void build_inverse();
};

BevLut build_bev_lut(const std::vector<std::vector<ColumnCurve>>& curves_per_camera,
                     const std::vector<DepthBinSpec>& bins_per_camera,
                     const PolarGridSpec& grid);

// Flat-world table: every stride-8 feature pixel is ray-cast to the ground
// plane and assigned the landing cell.
BevLut build_ipm_lut(const geom::CameraRig& rig, const PolarGridSpec& grid);

// Text dump, one line per slot: "<camera> <column> <bin> <cell>".
std::string dump_lut(const BevLut& lut);

// --- Pooling over plain tensors (the differentiable path reuses the same
// kernels; these are the reference surfaces for equivalence tests and the
// benchmark). Per-camera features are (slots_major, slots_minor, C).

// Sequential scatter in (camera, slot) order.
Tensor scatter_pool(const std::vector<Tensor>& features, const BevLut& lut, int channels);

// Parallel per-cell gather via the inverted index; bit-identical to
// scatter_pool for any thread count.
Tensor scatter_pool_gather(const std::vector<Tensor>& features, const BevLut& lut, int channels);

// On-the-fly reference: re-evaluates each curve and searches the grid per
// element instead of reading the LUT. Identical accumulation order.
Tensor naive_pool(const std::vector<Tensor>& features,
                  const std::vector<std::vector<ColumnCurve>>& curves_per_camera,
                  const std::vector<DepthBinSpec>& bins_per_camera,
                  const PolarGridSpec& grid, int channels);

}  // namespace pbev::bev
