#include "pbev/bev_transform.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pbev::bev {

PolarGridSpec build_polar_grid(int M, int N, double r_min, double r_max) {
    if (M < 4 || N < 2) throw std::invalid_argument("grid: need M >= 4 and N >= 2");
    if (!(0 < r_min && r_min < r_max))
        throw std::invalid_argument("grid: need 0 < r_min < r_max");
    PolarGridSpec g;
    g.M = M;
    g.N = N;
    g.r_min = r_min;
    g.r_max = r_max;
    g.radial_edges.resize(N + 1);
    g.radial_edges[0] = 0.0;
    double ratio = std::pow(r_max / r_min, 1.0 / (N - 1));
    for (int i = 1; i <= N; ++i)
        g.radial_edges[i] = r_min * std::pow(ratio, double(i - 1));
    g.radial_edges[N] = r_max;  // pin the last edge exactly
    return g;
}

int PolarGridSpec::angular_bin(double azimuth) const {
    int m = int(geom::wrap_angle_2pi(azimuth) / angular_width());
    return std::min(m, M - 1);
}

std::optional<int> PolarGridSpec::cell_of(double azimuth, double distance) const {
    if (!(distance >= 0) || distance >= r_max) return std::nullopt;
    auto it = std::upper_bound(radial_edges.begin(), radial_edges.end(), distance);
    int n = int(it - radial_edges.begin()) - 1;
    if (n < 0 || n >= N) return std::nullopt;
    return flat(angular_bin(azimuth), n);
}

namespace {

// Least-squares cubic through (t_i, y_i); normal equations, 4x4 Gauss with
// partial pivoting. With exactly deg+1 points this interpolates.
bool fit_cubic(const std::vector<double>& t, const std::vector<double>& y, double* c) {
    double a[4][5] = {};
    for (size_t i = 0; i < t.size(); ++i) {
        double p[4] = {1.0, t[i], t[i] * t[i], t[i] * t[i] * t[i]};
        for (int r = 0; r < 4; ++r) {
            for (int cc = 0; cc < 4; ++cc) a[r][cc] += p[r] * p[cc];
            a[r][4] += p[r] * y[i];
        }
    }
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-12) return false;
        std::swap(a[col], a[piv]);
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            double f = a[r][col] / a[col][col];
            for (int cc = col; cc < 5; ++cc) a[r][cc] -= f * a[col][cc];
        }
    }
    for (int k = 0; k < 4; ++k) c[k] = a[k][4] / a[k][k];
    return true;
}

}  // namespace

std::vector<ColumnCurve> fit_column_curves(const geom::CameraIntrinsics& cam,
                                           const geom::RigPose& pose,
                                           const PolarGridSpec& grid,
                                           int camera_index, int rows_sampled) {
    const int cols = cam.width / kFeatureStride;
    // Hits far beyond the grid are never queried and only degrade the fit;
    // keep a small margin past r_max so edge bins stay in range.
    const double d_cap = 1.5 * grid.r_max;
    std::vector<ColumnCurve> out(cols);
    for (int u = 0; u < cols; ++u) {
        ColumnCurve cc;
        cc.camera = camera_index;
        cc.column = u;
        double u_px = u * kFeatureStride + (kFeatureStride - 1) * 0.5;
        std::vector<double> ds, as;
        for (int j = 0; j < rows_sampled; ++j) {
            double v_px = (j + 0.5) * cam.height / rows_sampled;
            auto ray = cam.try_unproject(u_px, v_px);
            if (!ray) continue;
            auto hit = geom::project_to_ground(pose, *ray);
            if (!hit || hit->distance < 1e-6 || hit->distance > d_cap) continue;
            ds.push_back(hit->distance);
            as.push_back(hit->azimuth);
        }
        if (ds.size() < 4) {
            out[u] = cc;  // invalid
            continue;
        }
        // Unwrap azimuths toward their median so the 0/2pi seam cannot split
        // the sample set.
        std::vector<double> sorted_a = as;
        std::sort(sorted_a.begin(), sorted_a.end());
        double med = sorted_a[sorted_a.size() / 2];
        for (double& a : as) {
            while (a - med > M_PI) a -= 2.0 * M_PI;
            while (a - med < -M_PI) a += 2.0 * M_PI;
        }
        cc.d_lo = *std::min_element(ds.begin(), ds.end());
        cc.d_hi = *std::max_element(ds.begin(), ds.end());
        double x_lo = std::log(cc.d_lo), x_hi = std::log(cc.d_hi);
        cc.x_mid = 0.5 * (x_lo + x_hi);
        cc.x_half = std::max(0.5 * (x_hi - x_lo), 1e-9);
        std::vector<double> ts(ds.size());
        for (size_t i = 0; i < ds.size(); ++i) ts[i] = (std::log(ds[i]) - cc.x_mid) / cc.x_half;
        double coeffs[4];
        cc.valid = fit_cubic(ts, as, coeffs);
        cc.c0 = coeffs[0];
        cc.c1 = coeffs[1];
        cc.c2 = coeffs[2];
        cc.c3 = coeffs[3];
        out[u] = cc;
    }
    return out;
}

DepthBinSpec build_depth_bins(int D, double range, double first_center) {
    if (D < 2) throw std::invalid_argument("depth bins: need D >= 2");
    if (!(0 < first_center && first_center < range))
        throw std::invalid_argument("depth bins: need 0 < first_center < range");
    DepthBinSpec s;
    s.D = D;
    s.centers.resize(D);
    double ratio = std::pow(range / first_center, 1.0 / (D - 1));
    for (int i = 0; i < D; ++i) s.centers[i] = first_center * std::pow(ratio, double(i));
    s.centers[D - 1] = range;
    return s;
}

void BevLut::build_inverse() {
    cell_offsets.assign(grid_cells + 1, 0);
    size_t total = 0;
    for (const auto& c : cameras)
        for (int32_t cell : c.cells)
            if (cell != kOffGrid) {
                ++cell_offsets[cell + 1];
                ++total;
            }
    for (int i = 0; i < grid_cells; ++i) cell_offsets[i + 1] += cell_offsets[i];
    cell_sources.resize(total);
    std::vector<int32_t> cursor(cell_offsets.begin(), cell_offsets.end() - 1);
    // Enumerate in (camera, slot) order so each cell's source list is
    // already sorted the way the sequential scatter accumulates.
    for (size_t ci = 0; ci < cameras.size(); ++ci) {
        const auto& c = cameras[ci];
        for (size_t slot = 0; slot < c.cells.size(); ++slot) {
            int32_t cell = c.cells[slot];
            if (cell == kOffGrid) continue;
            cell_sources[cursor[cell]++] = (uint64_t(ci) << 32) | uint64_t(slot);
        }
    }
}

BevLut build_bev_lut(const std::vector<std::vector<ColumnCurve>>& curves_per_camera,
                     const std::vector<DepthBinSpec>& bins_per_camera,
                     const PolarGridSpec& grid) {
    if (curves_per_camera.size() != bins_per_camera.size())
        throw std::invalid_argument("lut: curves/bins camera count mismatch");
    BevLut lut;
    lut.grid_cells = grid.cells();
    for (size_t ci = 0; ci < curves_per_camera.size(); ++ci) {
        const auto& curves = curves_per_camera[ci];
        const auto& bins = bins_per_camera[ci];
        CameraLut cl;
        cl.camera = int(ci);
        cl.columns = int(curves.size());
        cl.depth_bins = bins.D;
        cl.cells.assign(size_t(cl.columns) * bins.D, kOffGrid);
        for (int u = 0; u < cl.columns; ++u) {
            const ColumnCurve& cc = curves[u];
            for (int b = 0; b < bins.D; ++b) {
                double d = bins.centers[b];
                if (!cc.in_range(d)) continue;
                auto cell = grid.cell_of(geom::wrap_angle_2pi(cc.eval(d)), d);
                if (cell) cl.cells[size_t(u) * bins.D + b] = *cell;
            }
        }
        lut.cameras.push_back(std::move(cl));
    }
    lut.build_inverse();
    return lut;
}

BevLut build_ipm_lut(const geom::CameraRig& rig, const PolarGridSpec& grid) {
    BevLut lut;
    lut.grid_cells = grid.cells();
    for (size_t ci = 0; ci < rig.cameras.size(); ++ci) {
        const auto& cam = rig.cameras[ci];
        int ws = cam.intrinsics.width / kFeatureStride;
        int hs = cam.intrinsics.height / kFeatureStride;
        CameraLut cl;
        cl.camera = int(ci);
        cl.columns = ws;       // slot = (column, row)
        cl.depth_bins = hs;
        cl.cells.assign(size_t(ws) * hs, kOffGrid);
        for (int u = 0; u < ws; ++u) {
            double u_px = u * kFeatureStride + (kFeatureStride - 1) * 0.5;
            for (int v = 0; v < hs; ++v) {
                double v_px = v * kFeatureStride + (kFeatureStride - 1) * 0.5;
                auto ray = cam.intrinsics.try_unproject(u_px, v_px);
                if (!ray) continue;
                auto hit = geom::project_to_ground(cam.pose, *ray);
                if (!hit) continue;
                auto cell = grid.cell_of(hit->azimuth, hit->distance);
                if (cell) cl.cells[size_t(u) * hs + v] = *cell;
            }
        }
        lut.cameras.push_back(std::move(cl));
    }
    lut.build_inverse();
    return lut;
}

std::string dump_lut(const BevLut& lut) {
    std::ostringstream out;
    for (const auto& c : lut.cameras)
        for (int u = 0; u < c.columns; ++u)
            for (int b = 0; b < c.depth_bins; ++b)
                out << c.camera << ' ' << u << ' ' << b << ' ' << c.at(u, b) << '\n';
    return out.str();
}

namespace {

void check_feature_shapes(const std::vector<Tensor>& features, const BevLut& lut, int channels) {
    if (features.size() != lut.cameras.size())
        throw std::invalid_argument("pool: camera count mismatch");
    for (size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        const auto& c = lut.cameras[i];
        if (f.ndim() != 3 || f.dim(0) != c.columns || f.dim(1) != c.depth_bins ||
            f.dim(2) != channels)
            throw std::invalid_argument("pool: feature tensor shape mismatch for camera " +
                                        std::to_string(i));
    }
}

}  // namespace

Tensor scatter_pool(const std::vector<Tensor>& features, const BevLut& lut, int channels) {
    check_feature_shapes(features, lut, channels);
    Tensor out = Tensor::zeros2(channels, lut.grid_cells);
    for (size_t ci = 0; ci < lut.cameras.size(); ++ci) {
        const auto& cl = lut.cameras[ci];
        const double* f = features[ci].data();
        for (size_t slot = 0; slot < cl.cells.size(); ++slot) {
            int32_t cell = cl.cells[slot];
            if (cell == kOffGrid) continue;
            const double* src = f + slot * channels;
            for (int c = 0; c < channels; ++c)
                out[size_t(c) * lut.grid_cells + cell] += src[c];
        }
    }
    return out;
}

Tensor scatter_pool_gather(const std::vector<Tensor>& features, const BevLut& lut, int channels) {
    check_feature_shapes(features, lut, channels);
    Tensor out = Tensor::zeros2(channels, lut.grid_cells);
    double* o = out.data();
    const int cells = lut.grid_cells;
#pragma omp parallel for schedule(static)
    for (int cell = 0; cell < cells; ++cell) {
        for (int32_t s = lut.cell_offsets[cell]; s < lut.cell_offsets[cell + 1]; ++s) {
            uint64_t packed = lut.cell_sources[s];
            const double* src =
                features[packed >> 32].data() + (packed & 0xffffffffULL) * channels;
            for (int c = 0; c < channels; ++c) o[size_t(c) * cells + cell] += src[c];
        }
    }
    return out;
}

Tensor naive_pool(const std::vector<Tensor>& features,
                  const std::vector<std::vector<ColumnCurve>>& curves_per_camera,
                  const std::vector<DepthBinSpec>& bins_per_camera,
                  const PolarGridSpec& grid, int channels) {
    Tensor out = Tensor::zeros2(channels, grid.cells());
    const int cells = grid.cells();
    for (size_t ci = 0; ci < curves_per_camera.size(); ++ci) {
        const auto& curves = curves_per_camera[ci];
        const auto& bins = bins_per_camera[ci];
        const double* f = features[ci].data();
        for (size_t u = 0; u < curves.size(); ++u) {
            const ColumnCurve& cc = curves[u];
            for (int b = 0; b < bins.D; ++b) {
                double d = bins.centers[b];
                if (!cc.in_range(d)) continue;
                auto cell = grid.cell_of(geom::wrap_angle_2pi(cc.eval(d)), d);
                if (!cell) continue;
                const double* src = f + (u * bins.D + b) * channels;
                for (int c = 0; c < channels; ++c)
                    out[size_t(c) * cells + *cell] += src[c];
            }
        }
    }
    return out;
}

}  // namespace pbev::bev
