#include "pbev/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace pbev::heads {

namespace ad = pbev::ad;

namespace {

constexpr double kProbEps = 1e-7;
constexpr double kLog2 = 0.6931471805599453;

double softplus_d(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }

void normalized_pair(double s, double c, double& sn, double& cn) {
    double n = std::sqrt(s * s + c * c + 1e-24);
    sn = s / n;
    cn = c / n;
}

geom::Mat3 rot_entries(double s1, double c1, double s2, double c2, double s3, double c3) {
    geom::Mat3 m;
    m.m[0][0] = c1 * c2;
    m.m[0][1] = -s1 * c3 + c1 * s2 * s3;
    m.m[0][2] = s1 * s3 + c1 * s2 * c3;
    m.m[1][0] = s1 * c2;
    m.m[1][1] = c1 * c3 + s1 * s2 * s3;
    m.m[1][2] = -c1 * s3 + s1 * s2 * c3;
    m.m[2][0] = -s2;
    m.m[2][1] = c2 * s3;
    m.m[2][2] = c2 * c3;
    return m;
}

// -(1-p)^gamma * log(p), elementwise on an already-(0,1) tensor node.
ad::NodePtr focal_to_one(const ad::NodePtr& p, double gamma) {
    auto pc = ad::clamp_v(p, kProbEps, 1.0 - kProbEps);
    auto one_minus = ad::add_const(ad::neg(pc), 1.0);
    return ad::neg(ad::mul(ad::pow_const(one_minus, gamma), ad::log_v(pc)));
}

// -p^gamma * log(1-p)
ad::NodePtr focal_to_zero(const ad::NodePtr& p, double gamma) {
    auto pc = ad::clamp_v(p, kProbEps, 1.0 - kProbEps);
    auto one_minus = ad::add_const(ad::neg(pc), 1.0);
    return ad::neg(ad::mul(ad::pow_const(pc, gamma), ad::log_v(one_minus)));
}

Tensor constant_row(const std::vector<double>& v) {
    Tensor t = Tensor::zeros2(1, int(v.size()));
    for (size_t i = 0; i < v.size(); ++i) t[i] = v[i];
    return t;
}

int to_polar_cell(const bev::PolarGridSpec& grid, double x, double y) {
    auto p = geom::to_polar(x, y);
    auto cell = grid.cell_of(p.azimuth, p.distance);
    return cell ? *cell : -1;
}

}  // namespace

// ---- decoding ----

std::vector<ObstaclePrediction> decode_obstacles(const Tensor& cls, const Tensor& pos,
                                                 const Tensor& dim, const Tensor& rot,
                                                 const Tensor& unc,
                                                 const bev::PolarGridSpec& grid) {
    const int cells = grid.cells();
    const int k = cls.dim(0) - 1;
    if (cls.dim(1) * cls.dim(2) != cells || rot.dim(0) != 6 || unc.dim(0) != 5)
        throw std::invalid_argument("decode_obstacles: head shape mismatch");
    std::vector<ObstaclePrediction> out(cells);
    for (int m = 0; m < grid.M; ++m) {
        for (int n = 0; n < grid.N; ++n) {
            int cell = grid.flat(m, n);
            ObstaclePrediction& p = out[cell];
            p.cell = cell;
            p.objectness = 1.0 / (1.0 + std::exp(-cls.at3(0, m, n)));
            p.class_probs.resize(k);
            double mx = -1e300;
            for (int c = 0; c < k; ++c) mx = std::max(mx, cls.at3(1 + c, m, n));
            double z = 0;
            for (int c = 0; c < k; ++c) z += std::exp(cls.at3(1 + c, m, n) - mx);
            for (int c = 0; c < k; ++c)
                p.class_probs[c] = std::exp(cls.at3(1 + c, m, n) - mx) / z;

            p.cuboid.r = offset_radius(grid, n, pos.at3(0, m, n));
            p.cuboid.a = offset_azimuth(grid, m, pos.at3(1, m, n));
            p.cuboid.e = pos.at3(2, m, n);
            p.cuboid.dx = softplus_d(dim.at3(0, m, n)) + 0.01;
            p.cuboid.dy = softplus_d(dim.at3(1, m, n)) + 0.01;
            p.cuboid.dz = softplus_d(dim.at3(2, m, n)) + 0.01;

            double s1, c1, s2, c2, s3, c3;
            normalized_pair(rot.at3(0, m, n), rot.at3(1, m, n), s1, c1);
            normalized_pair(rot.at3(2, m, n), rot.at3(3, m, n), s2, c2);
            normalized_pair(rot.at3(4, m, n), rot.at3(5, m, n), s3, c3);
            p.cuboid.rot =
                geom::RotationMatrix::from_matrix_unchecked(rot_entries(s1, c1, s2, c2, s3, c3));

            p.sigma_r = std::exp(unc.at3(0, m, n));
            p.sigma_a = std::exp(unc.at3(1, m, n));
            p.sigma_e = std::exp(unc.at3(2, m, n));
            p.sigma_s = std::exp(unc.at3(3, m, n));
            p.sigma_o = std::exp(unc.at3(4, m, n));
        }
    }
    return out;
}

RadialDistanceMap decode_rdm(const Tensor& out, double r_max) {
    const int n = out.dim(1);
    RadialDistanceMap rdm;
    rdm.n_bins = n;
    rdm.radius.resize(n);
    rdm.cls.resize(n);
    rdm.probs.resize(n);
    for (int i = 0; i < n; ++i) {
        rdm.radius[i] = squash_radius(out.at2(0, i), r_max);
        double mx = -1e300;
        for (int c = 0; c < kFreespaceClasses; ++c) mx = std::max(mx, out.at2(1 + c, i));
        double z = 0;
        for (int c = 0; c < kFreespaceClasses; ++c) z += std::exp(out.at2(1 + c, i) - mx);
        int best = 0;
        for (int c = 0; c < kFreespaceClasses; ++c) {
            rdm.probs[i][c] = std::exp(out.at2(1 + c, i) - mx) / z;
            if (rdm.probs[i][c] > rdm.probs[i][best]) best = c;
        }
        rdm.cls[i] = best;
    }
    return rdm;
}

std::vector<ParkingSpace> decode_parking(const Tensor& conf, const Tensor& reg,
                                         const bev::PolarGridSpec& grid) {
    const int cells = grid.cells();
    std::vector<ParkingSpace> out(cells);
    for (int m = 0; m < grid.M; ++m)
        for (int n = 0; n < grid.N; ++n) {
            int cell = grid.flat(m, n);
            ParkingSpace& p = out[cell];
            for (int c = 0; c < kParkingProfiles; ++c)
                p.profile_conf[c] = 1.0 / (1.0 + std::exp(-conf.at3(c, m, n)));
            p.profile = int(std::max_element(p.profile_conf.begin(), p.profile_conf.end()) -
                            p.profile_conf.begin());
            double r = offset_radius(grid, n, reg.at3(0, m, n));
            double a = offset_azimuth(grid, m, reg.at3(1, m, n));
            p.cx = r * std::cos(a);
            p.cy = r * std::sin(a);
            p.l = softplus_d(reg.at3(2, m, n)) + 0.01;
            p.w = softplus_d(reg.at3(3, m, n)) + 0.01;
            double th = 0.5 * std::atan2(reg.at3(4, m, n), reg.at3(5, m, n));
            if (th < 0) th += M_PI;
            if (th >= M_PI) th -= M_PI;
            p.theta = th;
        }
    return out;
}

// ---- matching ----

std::vector<int> candidate_mask(double cx, double cy, double half_x, double half_y,
                                double yaw, const bev::PolarGridSpec& grid) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    std::vector<char> base(grid.cells(), 0);
    for (int m = 0; m < grid.M; ++m)
        for (int n = 0; n < grid.N; ++n) {
            double a = grid.center_azimuth(m), r = grid.center_radius(n);
            double px = r * std::cos(a) - cx, py = r * std::sin(a) - cy;
            double lx = c * px + s * py, ly = -s * px + c * py;
            if (std::abs(lx) <= half_x && std::abs(ly) <= half_y) base[grid.flat(m, n)] = 1;
        }
    auto center = to_polar_cell(grid, cx, cy);
    if (center >= 0) base[center] = 1;
    std::vector<int> out;
    std::vector<char> seen(grid.cells(), 0);
    for (int m = 0; m < grid.M; ++m)
        for (int n = 0; n < grid.N; ++n) {
            if (!base[grid.flat(m, n)]) continue;
            for (int dm = -1; dm <= 1; ++dm)
                for (int dn = -1; dn <= 1; ++dn) {
                    int mm = (m + dm + grid.M) % grid.M;
                    int nn = n + dn;
                    if (nn < 0 || nn >= grid.N) continue;
                    int f = grid.flat(mm, nn);
                    if (!seen[f]) {
                        seen[f] = 1;
                        out.push_back(f);
                    }
                }
        }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> candidate_mask(const Cuboid& gt, const bev::PolarGridSpec& grid) {
    double x, y;
    gt.xy(x, y);
    return candidate_mask(x, y, gt.dx / 2, gt.dy / 2, gt.yaw(), grid);
}

std::vector<int> candidate_mask(const ParkingSpace& gt, const bev::PolarGridSpec& grid) {
    return candidate_mask(gt.cx, gt.cy, gt.l / 2, gt.w / 2, gt.theta, grid);
}

double match_cost(const GtObstacle& gt, const ObstaclePrediction& pred,
                  const LossConfig& cfg) {
    const Cuboid& g = gt.cuboid;
    const Cuboid& d = pred.cuboid;
    double pos = std::abs(g.r - d.r) / std::max(g.r, 1.0) + std::abs(ang_diff_2pi(g.a, d.a));
    double ratio = (std::min(g.dx, d.dx) / std::max(g.dx, d.dx)) *
                   (std::min(g.dy, d.dy) / std::max(g.dy, d.dy)) *
                   (std::min(g.dz, d.dz) / std::max(g.dz, d.dz));
    return cfg.lambda_cls * (1.0 - pred.objectness) + cfg.lambda_pos * pos +
           cfg.lambda_size * (1.0 - ratio) + cfg.lambda_rot * rotation_error(g.rot, d.rot);
}

double match_cost(const ParkingSpace& gt, const ParkingSpace& pred, const LossConfig& cfg) {
    auto gp = geom::to_polar(gt.cx, gt.cy);
    auto dp = geom::to_polar(pred.cx, pred.cy);
    double pos = std::abs(gp.distance - dp.distance) / std::max(gp.distance, 1.0) +
                 std::abs(ang_diff_2pi(gp.azimuth, dp.azimuth));
    double ratio = (std::min(gt.l, pred.l) / std::max(gt.l, pred.l)) *
                   (std::min(gt.w, pred.w) / std::max(gt.w, pred.w));
    return cfg.lambda_cls * (1.0 - pred.existence()) + cfg.lambda_pos * pos +
           cfg.lambda_size * (1.0 - ratio) +
           cfg.lambda_rot * std::abs(ang_diff_pi(gt.theta, pred.theta));
}

MatchAssignment greedy_assign(std::vector<std::tuple<double, int, int>> admissible,
                              int gt_count, int cells) {
    std::sort(admissible.begin(), admissible.end());
    MatchAssignment out;
    std::vector<char> gt_used(gt_count, 0), cell_used(cells, 0);
    for (const auto& [cost, gi, cell] : admissible) {
        if (gt_used[gi] || cell_used[cell]) continue;
        gt_used[gi] = 1;
        cell_used[cell] = 1;
        out.pairs.emplace_back(gi, cell);
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    out.negatives.reserve(cells - out.pairs.size());
    for (int c = 0; c < cells; ++c)
        if (!cell_used[c]) out.negatives.push_back(c);
    out.unmatched_gts = gt_count - int(out.pairs.size());
    return out;
}

MatchAssignment greedy_match(const std::vector<GtObstacle>& gts,
                             const std::vector<ObstaclePrediction>& preds,
                             const std::vector<std::vector<int>>& masks,
                             const LossConfig& cfg, int cells) {
    std::vector<std::tuple<double, int, int>> admissible;
    for (size_t gi = 0; gi < gts.size(); ++gi)
        for (int cell : masks[gi])
            admissible.emplace_back(match_cost(gts[gi], preds[cell], cfg), int(gi), cell);
    return greedy_assign(std::move(admissible), int(gts.size()), cells);
}

// ---- losses ----

ObstacleLossResult obstacle_loss(const ObstacleHeadOut& head,
                                 const std::vector<GtObstacle>& gts,
                                 const bev::PolarGridSpec& grid, const LossConfig& cfg) {
    const int cells = grid.cells();
    const int k = head.k;
    ObstacleLossResult res;

    auto preds = decode_obstacles(head.cls->val, head.pos->val, head.dim->val,
                                  head.rot->val, head.unc->val, grid);
    std::vector<std::vector<int>> masks(gts.size());
    for (size_t gi = 0; gi < gts.size(); ++gi) {
        masks[gi] = candidate_mask(gts[gi].cuboid, grid);
        if (masks[gi].empty()) ++res.skipped_gts;
    }
    res.assign = greedy_match(gts, preds, masks, cfg, cells);

    auto cls2 = ad::reshape(head.cls, {1 + k, cells});
    auto obj_row = ad::slice_rows(cls2, 0, 1);

    // Negatives: objectness pulled to zero.
    auto p_neg = ad::sigmoid(ad::gather_cols(obj_row, res.assign.negatives));
    ad::NodePtr loss = ad::sum_all(focal_to_zero(p_neg, cfg.gamma));

    const int K = int(res.assign.pairs.size());
    if (K > 0) {
        std::vector<int> cellidx(K);
        std::vector<double> g_r(K), g_a(K), g_e(K);
        Tensor g_dim = Tensor::zeros2(3, K), g_rot = Tensor::zeros2(9, K);
        Tensor onehot = Tensor::zeros2(k, K);
        for (int i = 0; i < K; ++i) {
            auto [gi, cell] = res.assign.pairs[i];
            const Cuboid& g = gts[gi].cuboid;
            cellidx[i] = cell;
            g_r[i] = g.r;
            g_a[i] = g.a;
            g_e[i] = g.e;
            g_dim.at2(0, i) = g.dx;
            g_dim.at2(1, i) = g.dy;
            g_dim.at2(2, i) = g.dz;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) g_rot.at2(3 * r + c, i) = g.rot.at(r, c);
            onehot.at2(gts[gi].cls, i) = 1.0;
        }

        // Objectness and class focal terms.
        auto p_pos = ad::sigmoid(ad::gather_cols(obj_row, cellidx));
        loss = ad::add(loss, ad::sum_all(focal_to_one(p_pos, cfg.gamma)));
        if (k > 0) {
            auto probs = ad::softmax0(ad::gather_cols(ad::slice_rows(cls2, 1, 1 + k), cellidx));
            auto p_true = ad::sum_rows(ad::mul(probs, ad::constant(onehot)));
            loss = ad::add(loss, ad::sum_all(focal_to_one(p_true, cfg.gamma)));
        }

        // Cell geometry constants for the offset decode.
        std::vector<double> ctr_r(K), span_r(K), ctr_a(K);
        for (int i = 0; i < K; ++i) {
            int m = cellidx[i] / grid.N, n = cellidx[i] % grid.N;
            ctr_r[i] = grid.center_radius(n);
            span_r[i] = grid.radial_span(n);
            ctr_a[i] = grid.center_azimuth(m);
        }

        auto pos_g = ad::gather_cols(ad::reshape(head.pos, {3, cells}), cellidx);
        auto unc_g = ad::gather_cols(ad::reshape(head.unc, {5, cells}), cellidx);

        auto r_hat = ad::add(ad::constant(constant_row(ctr_r)),
                             ad::mul(ad::tanh_v(ad::slice_rows(pos_g, 0, 1)),
                                     ad::constant(constant_row(span_r))));
        auto a_hat = ad::add(ad::constant(constant_row(ctr_a)),
                             ad::mul_const(ad::tanh_v(ad::slice_rows(pos_g, 1, 2)),
                                           grid.angular_width()));
        auto e_hat = ad::slice_rows(pos_g, 2, 3);

        // Wrap-corrected azimuth targets (constant shift w.r.t. gradients).
        std::vector<double> a_tgt(K), r_tgt(g_r), e_tgt(g_e);
        for (int i = 0; i < K; ++i) {
            double raw = a_hat->val.at2(0, i);
            a_tgt[i] = g_a[i] + 2.0 * M_PI * std::round((raw - g_a[i]) / (2.0 * M_PI));
        }

        auto inv = [&](int row) { return ad::exp_v(ad::neg(ad::slice_rows(unc_g, row, row + 1))); };
        auto l1 = [&](const ad::NodePtr& x, const std::vector<double>& tgt) {
            return ad::abs_v(ad::sub(x, ad::constant(constant_row(tgt))));
        };

        auto loc = ad::add(ad::add(ad::mul(l1(r_hat, r_tgt), inv(0)),
                                   ad::mul(l1(a_hat, a_tgt), inv(1))),
                           ad::mul(l1(e_hat, e_tgt), inv(2)));
        loss = ad::add(loss, ad::sum_all(loc));

        auto dims = ad::add_const(ad::softplus(ad::gather_cols(
                                      ad::reshape(head.dim, {3, cells}), cellidx)),
                                  0.01);
        auto gdims = ad::constant(g_dim);
        auto ratio = ad::div(ad::minimum(dims, gdims), ad::maximum(dims, gdims));
        auto prod = ad::mul(ad::mul(ad::slice_rows(ratio, 0, 1), ad::slice_rows(ratio, 1, 2)),
                            ad::slice_rows(ratio, 2, 3));
        auto size_term = ad::mul(ad::add_const(ad::neg(prod), 1.0), inv(3));
        loss = ad::add(loss, ad::sum_all(size_term));

        auto r9 = ad::rot_from_sincos(
            ad::gather_cols(ad::reshape(head.rot, {6, cells}), cellidx));
        auto rot_l1 = ad::sum_rows(ad::abs_v(ad::sub(r9, ad::constant(g_rot))));
        loss = ad::add(loss, ad::sum_all(ad::mul(rot_l1, inv(4))));

        // log(2 sigma) regularizers: five per match.
        loss = ad::add(loss, ad::add_const(ad::sum_all(unc_g), 5.0 * K * kLog2));
    }
    res.loss = loss;
    return res;
}

ad::NodePtr freespace_loss(const FreespaceHeadOut& head, const RadialDistanceMap& gt,
                           double r_max, const LossConfig& cfg) {
    const int n = gt.n_bins;
    if (head.out->val.dim(1) != n)
        throw std::invalid_argument("freespace_loss: bin count mismatch");

    auto r_hat = ad::mul_const(ad::tanh_v(ad::softplus(ad::slice_rows(head.out, 0, 1))), r_max);

    // Polar IoU: product of per-bin min/max ratios, in log space. Bins with
    // (near) zero ground-truth radius are skipped.
    std::vector<int> valid;
    for (int i = 0; i < n; ++i)
        if (gt.radius[i] > 1e-6) valid.push_back(i);
    ad::NodePtr loss;
    if (!valid.empty()) {
        std::vector<double> gv(valid.size());
        for (size_t i = 0; i < valid.size(); ++i) gv[i] = gt.radius[valid[i]];
        auto rp = ad::gather_cols(r_hat, valid);
        auto gn = ad::constant(constant_row(gv));
        auto lg = ad::log_v(ad::div(ad::minimum(rp, gn), ad::maximum(rp, gn)));
        loss = ad::add_const(ad::neg(ad::exp_v(ad::sum_all(lg))), 1.0);
    } else {
        loss = ad::scalar(0.0);
    }

    // Segment similarity between consecutive boundary points, circular.
    std::vector<double> ca(n), sa(n), gx(n), gy(n);
    for (int i = 0; i < n; ++i) {
        double a = RadialDistanceMap::direction(i, n);
        ca[i] = std::cos(a);
        sa[i] = std::sin(a);
        gx[i] = gt.radius[i] * ca[i];
        gy[i] = gt.radius[i] * sa[i];
    }
    std::vector<int> next(n);
    for (int i = 0; i < n; ++i) next[i] = (i + 1) % n;
    std::vector<double> glx(n), gly(n);
    for (int i = 0; i < n; ++i) {
        glx[i] = gx[next[i]] - gx[i];
        gly[i] = gy[next[i]] - gy[i];
    }
    auto px = ad::mul(r_hat, ad::constant(constant_row(ca)));
    auto py = ad::mul(r_hat, ad::constant(constant_row(sa)));
    auto lx = ad::sub(ad::gather_cols(px, next), px);
    auto ly = ad::sub(ad::gather_cols(py, next), py);
    auto dot = ad::add(ad::mul(lx, ad::constant(constant_row(glx))),
                       ad::mul(ly, ad::constant(constant_row(gly))));
    auto pred_n2 = ad::add_const(ad::add(ad::mul(lx, lx), ad::mul(ly, ly)), 1e-12);
    std::vector<double> gt_n(n);
    for (int i = 0; i < n; ++i) gt_n[i] = std::sqrt(glx[i] * glx[i] + gly[i] * gly[i] + 1e-12);
    auto denom = ad::mul(ad::pow_const(pred_n2, 0.5), ad::constant(constant_row(gt_n)));
    auto cos_sim = ad::div(dot, denom);
    loss = ad::add(loss, ad::sum_all(ad::add_const(ad::neg(cos_sim), 1.0)));

    // Focal classification over boundary classes.
    Tensor onehot = Tensor::zeros2(kFreespaceClasses, n);
    for (int i = 0; i < n; ++i) onehot.at2(gt.cls[i], i) = 1.0;
    auto probs = ad::softmax0(ad::slice_rows(head.out, 1, 1 + kFreespaceClasses));
    auto p_true = ad::sum_rows(ad::mul(probs, ad::constant(onehot)));
    loss = ad::add(loss, ad::sum_all(focal_to_one(p_true, cfg.gamma)));
    return loss;
}

ParkingLossResult parking_loss(const ParkingHeadOut& head,
                               const std::vector<ParkingSpace>& gts,
                               const bev::PolarGridSpec& grid, const LossConfig& cfg) {
    const int cells = grid.cells();
    ParkingLossResult res;

    auto preds = decode_parking(head.conf->val, head.reg->val, grid);
    std::vector<std::tuple<double, int, int>> admissible;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
        auto mask = candidate_mask(gts[gi], grid);
        if (mask.empty()) ++res.skipped_gts;
        for (int cell : mask)
            admissible.emplace_back(match_cost(gts[gi], preds[cell], cfg), int(gi), cell);
    }
    res.assign = greedy_assign(std::move(admissible), int(gts.size()), cells);

    auto conf2 = ad::reshape(head.conf, {kParkingProfiles, cells});

    // Negatives: every profile confidence pulled to zero.
    auto p_neg = ad::sigmoid(ad::gather_cols(conf2, res.assign.negatives));
    ad::NodePtr loss = ad::sum_all(focal_to_zero(p_neg, cfg.gamma));

    const int K = int(res.assign.pairs.size());
    if (K > 0) {
        std::vector<int> cellidx(K);
        Tensor onehot = Tensor::zeros2(kParkingProfiles, K);
        Tensor antihot = Tensor::zeros2(kParkingProfiles, K);
        std::vector<double> g_cx(K), g_cy(K), g_l(K), g_w(K), g_th(K);
        for (int i = 0; i < K; ++i) {
            auto [gi, cell] = res.assign.pairs[i];
            cellidx[i] = cell;
            onehot.at2(gts[gi].profile, i) = 1.0;
            for (int c = 0; c < kParkingProfiles; ++c)
                if (c != gts[gi].profile) antihot.at2(c, i) = 1.0;
            g_cx[i] = gts[gi].cx;
            g_cy[i] = gts[gi].cy;
            g_l[i] = gts[gi].l;
            g_w[i] = gts[gi].w;
            g_th[i] = gts[gi].theta;
        }
        auto p_pos = ad::sigmoid(ad::gather_cols(conf2, cellidx));
        auto hot = ad::constant(onehot);
        auto anti = ad::constant(antihot);
        loss = ad::add(loss, ad::sum_all(ad::mul(focal_to_one(p_pos, cfg.gamma), hot)));
        loss = ad::add(loss, ad::sum_all(ad::mul(focal_to_zero(p_pos, cfg.gamma), anti)));

        std::vector<double> ctr_r(K), span_r(K), ctr_a(K);
        for (int i = 0; i < K; ++i) {
            int m = cellidx[i] / grid.N, n = cellidx[i] % grid.N;
            ctr_r[i] = grid.center_radius(n);
            span_r[i] = grid.radial_span(n);
            ctr_a[i] = grid.center_azimuth(m);
        }
        auto reg_g = ad::gather_cols(ad::reshape(head.reg, {6, cells}), cellidx);
        auto r_hat = ad::add(ad::constant(constant_row(ctr_r)),
                             ad::mul(ad::tanh_v(ad::slice_rows(reg_g, 0, 1)),
                                     ad::constant(constant_row(span_r))));
        auto a_hat = ad::add(ad::constant(constant_row(ctr_a)),
                             ad::mul_const(ad::tanh_v(ad::slice_rows(reg_g, 1, 2)),
                                           grid.angular_width()));
        auto cx_hat = ad::mul(r_hat, ad::cos_v(a_hat));
        auto cy_hat = ad::mul(r_hat, ad::sin_v(a_hat));
        auto l_hat = ad::add_const(ad::softplus(ad::slice_rows(reg_g, 2, 3)), 0.01);
        auto w_hat = ad::add_const(ad::softplus(ad::slice_rows(reg_g, 3, 4)), 0.01);
        auto th_raw =
            ad::mul_const(ad::atan2v(ad::slice_rows(reg_g, 4, 5), ad::slice_rows(reg_g, 5, 6)),
                          0.5);
        std::vector<double> th_tgt(K);
        for (int i = 0; i < K; ++i) {
            double raw = th_raw->val.at2(0, i);
            th_tgt[i] = g_th[i] + M_PI * std::round((raw - g_th[i]) / M_PI);
        }
        auto sq = [](const ad::NodePtr& x) { return ad::mul(x, x); };
        auto d_cx = ad::sub(cx_hat, ad::constant(constant_row(g_cx)));
        auto d_cy = ad::sub(cy_hat, ad::constant(constant_row(g_cy)));
        auto d_l = ad::sub(l_hat, ad::constant(constant_row(g_l)));
        auto d_w = ad::sub(w_hat, ad::constant(constant_row(g_w)));
        auto d_th = ad::sub(th_raw, ad::constant(constant_row(th_tgt)));
        auto reg_loss = ad::add(
            ad::add(ad::add(sq(d_cx), sq(d_cy)), ad::add(sq(d_l), sq(d_w))), sq(d_th));
        loss = ad::add(loss, ad::sum_all(reg_loss));
    }
    res.loss = loss;
    return res;
}

// ---- RDM extraction ----

namespace {

bool origin_inside(const FreespacePolygon& poly) {
    // Crossing number along +x.
    int crossings = 0;
    const size_t n = poly.verts.size();
    for (size_t i = 0; i < n; ++i) {
        const auto& p = poly.verts[i];
        const auto& q = poly.verts[(i + 1) % n];
        if ((p[1] > 0) == (q[1] > 0)) continue;
        double x_at = p[0] + (0.0 - p[1]) / (q[1] - p[1]) * (q[0] - p[0]);
        if (x_at > 0) ++crossings;
    }
    return crossings % 2 == 1;
}

}  // namespace

RadialDistanceMap rdm_from_polygon(const FreespacePolygon& poly, int n_bins, double r_max) {
    if (poly.verts.size() < 3 || poly.edge_cls.size() != poly.verts.size())
        throw std::invalid_argument("rdm_from_polygon: malformed polygon");
    if (!origin_inside(poly))
        throw std::invalid_argument("rdm_from_polygon: origin outside polygon");
    RadialDistanceMap rdm;
    rdm.n_bins = n_bins;
    rdm.radius.assign(n_bins, r_max);
    rdm.cls.assign(n_bins, kFsOther);
    const size_t ne = poly.verts.size();
    for (int i = 0; i < n_bins; ++i) {
        double a = RadialDistanceMap::direction(i, n_bins);
        double dx = std::cos(a), dy = std::sin(a);
        double best_t = 1e300;
        int best_cls = kFsOther;
        for (size_t e = 0; e < ne; ++e) {
            const auto& p = poly.verts[e];
            const auto& q = poly.verts[(e + 1) % ne];
            double ex = q[0] - p[0], ey = q[1] - p[1];
            double det = dx * (-ey) - (-ex) * dy;  // [d, -e] columns
            if (std::abs(det) < 1e-15) continue;
            double t = (p[0] * (-ey) - (-ex) * p[1]) / det;
            double u = (dx * p[1] - dy * p[0]) / det;
            // Slack on u: rays through a vertex must not slip between the
            // two adjacent half-open edges by one ulp.
            if (t > 1e-12 && u >= -1e-9 && u < 1.0 + 1e-9 && t < best_t) {
                best_t = t;
                best_cls = poly.edge_cls[e];
            }
        }
        if (best_t < 1e300) {
            rdm.radius[i] = std::min(best_t, r_max);
            rdm.cls[i] = best_cls;
        }
    }
    return rdm;
}

// ---- oriented IoU ----

namespace {

using Pt = std::array<double, 2>;

std::vector<Pt> rect_corners(const ParkingSpace& r) {
    double c = std::cos(r.theta), s = std::sin(r.theta);
    double hx = r.l / 2, hy = r.w / 2;
    std::vector<Pt> out(4);
    // Counter-clockwise; clip_half_plane keeps the left side of each edge.
    const double sx[4] = {1, -1, -1, 1}, sy[4] = {1, 1, -1, -1};
    for (int i = 0; i < 4; ++i)
        out[i] = {r.cx + c * sx[i] * hx - s * sy[i] * hy,
                  r.cy + s * sx[i] * hx + c * sy[i] * hy};
    return out;
}

double poly_area(const std::vector<Pt>& p) {
    double a = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        const Pt& u = p[i];
        const Pt& v = p[(i + 1) % p.size()];
        a += u[0] * v[1] - v[0] * u[1];
    }
    return std::abs(a) / 2;
}

// Clip subject polygon against the half-plane left of (a -> b).
std::vector<Pt> clip_half_plane(const std::vector<Pt>& subject, const Pt& a, const Pt& b) {
    std::vector<Pt> out;
    auto side = [&](const Pt& p) {
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    };
    const size_t n = subject.size();
    for (size_t i = 0; i < n; ++i) {
        const Pt& cur = subject[i];
        const Pt& nxt = subject[(i + 1) % n];
        double sc = side(cur), sn = side(nxt);
        if (sc >= 0) out.push_back(cur);
        if ((sc > 0 && sn < 0) || (sc < 0 && sn > 0)) {
            double t = sc / (sc - sn);
            out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
        }
    }
    return out;
}

}  // namespace

double oriented_iou(const ParkingSpace& a, const ParkingSpace& b) {
    double area_a = a.l * a.w, area_b = b.l * b.w;
    if (area_a <= 0 || area_b <= 0) return 0.0;
    auto ca = rect_corners(a);
    auto cb = rect_corners(b);  // counter-clockwise by construction
    std::vector<Pt> inter = ca;
    for (int i = 0; i < 4 && !inter.empty(); ++i)
        inter = clip_half_plane(inter, cb[i], cb[(i + 1) % 4]);
    if (inter.size() < 3) return 0.0;
    double ai = poly_area(inter);
    return ai / (area_a + area_b - ai);
}

}  // namespace pbev::heads
