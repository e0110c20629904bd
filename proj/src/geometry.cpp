#include "pbev/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pbev::geom {

bool RotationMatrix::is_valid(const Mat3& m, double tol) {
    Mat3 mtm = m.transposed() * m;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double want = (i == j) ? 1.0 : 0.0;
            if (std::abs(mtm.m[i][j] - want) > tol) return false;
        }
    return std::abs(m.det() - 1.0) <= tol;
}

RotationMatrix RotationMatrix::from_matrix(const Mat3& m) {
    if (!is_valid(m)) throw std::invalid_argument("RotationMatrix: not orthonormal with det 1");
    return from_matrix_unchecked(m);
}

Mat3 rot_z(double psi) {
    Mat3 r = Mat3::identity();
    double c = std::cos(psi), s = std::sin(psi);
    r.m[0][0] = c;
    r.m[0][1] = -s;
    r.m[1][0] = s;
    r.m[1][1] = c;
    return r;
}

Mat3 rot_y(double theta) {
    Mat3 r = Mat3::identity();
    double c = std::cos(theta), s = std::sin(theta);
    r.m[0][0] = c;
    r.m[0][2] = s;
    r.m[2][0] = -s;
    r.m[2][2] = c;
    return r;
}

Mat3 rot_x(double phi) {
    Mat3 r = Mat3::identity();
    double c = std::cos(phi), s = std::sin(phi);
    r.m[1][1] = c;
    r.m[1][2] = -s;
    r.m[2][1] = s;
    r.m[2][2] = c;
    return r;
}

RotationMatrix euler_to_rotation(double yaw, double pitch, double roll) {
    return RotationMatrix::from_matrix_unchecked(rot_z(yaw) * rot_y(pitch) * rot_x(roll));
}

double rotation_error(const RotationMatrix& r_gt, const RotationMatrix& r_pred) {
    Mat3 rel = r_gt.mat().transposed() * r_pred.mat();
    double c = (rel.trace() - 1.0) / 2.0;
    c = std::clamp(c, -1.0, 1.0);
    return std::acos(c);
}

PolarPoint to_polar(double x, double y) {
    PolarPoint p;
    p.distance = std::hypot(x, y);
    p.azimuth = (p.distance == 0.0) ? 0.0 : wrap_angle_2pi(std::atan2(y, x));
    return p;
}

void to_cartesian(const PolarPoint& p, double& x, double& y) {
    x = p.distance * std::cos(p.azimuth);
    y = p.distance * std::sin(p.azimuth);
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: fx, fy must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
        throw std::invalid_argument("camera: principal point outside image");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera: empty image");
    if (!(max_range > 0)) throw std::invalid_argument("camera: max_range must be positive");
}

double CameraIntrinsics::fisheye_theta_max() const {
    // Angular validity: the equidistant image circle that fits the sensor
    // diagonal, capped just below pi (rays straight backwards are singular).
    double du = std::max(cx, width - cx);
    double dv = std::max(cy, height - cy);
    double r_px = std::hypot(du, dv);
    return std::min(r_px / std::min(fx, fy), M_PI - 1e-6);
}

namespace {

double distort_radial(const std::vector<double>& k, double r2) {
    double f = 1.0, p = r2;
    for (double ki : k) {
        f += ki * p;
        p *= r2;
    }
    return f;
}

// theta_d = theta * (1 + k1 theta^2 + ...)
double distort_theta(const std::vector<double>& k, double theta) {
    double t2 = theta * theta, f = 1.0, p = t2;
    for (double ki : k) {
        f += ki * p;
        p *= t2;
    }
    return theta * f;
}

constexpr int kInverseIters = 20;
constexpr double kInverseTol = 1e-10;

}  // namespace

std::optional<Vec3> CameraIntrinsics::try_unproject(double u, double v) const {
    if (u < 0 || u >= width || v < 0 || v >= height) return std::nullopt;
    if (model == CameraModel::Pinhole) {
        double xd = (u - cx) / fx;
        double yd = (v - cy) / fy;
        // Fixed-point inversion of x_d = x * distort(|x|^2).
        double x = xd, y = yd;
        for (int i = 0; i < kInverseIters; ++i) {
            double f = distort_radial(distortion, x * x + y * y);
            double nx = xd / f, ny = yd / f;
            if (std::abs(nx - x) < kInverseTol && std::abs(ny - y) < kInverseTol) {
                x = nx;
                y = ny;
                break;
            }
            x = nx;
            y = ny;
        }
        return Vec3{x, y, 1.0}.normalized();
    }
    // Equidistant fisheye: r_px = f * theta_d, theta_d = distort(theta).
    double xu = (u - cx) / fx;
    double yu = (v - cy) / fy;
    double rd = std::hypot(xu, yu);
    if (rd < 1e-12) return Vec3{0, 0, 1};
    double theta = rd;
    if (!distortion.empty()) {
        for (int i = 0; i < kInverseIters; ++i) {
            double d = distort_theta(distortion, theta);
            double nt = theta + (rd - d);
            if (std::abs(nt - theta) < kInverseTol) {
                theta = nt;
                break;
            }
            theta = nt;
        }
    }
    if (theta > fisheye_theta_max()) return std::nullopt;
    double s = std::sin(theta), c = std::cos(theta);
    return Vec3{s * xu / rd, s * yu / rd, c};
}

Vec3 CameraIntrinsics::unproject(double u, double v) const {
    auto r = try_unproject(u, v);
    if (!r) throw std::domain_error("unproject: pixel out of bounds or beyond model validity");
    return *r;
}

std::optional<std::array<double, 2>> CameraIntrinsics::project(const Vec3& dir) const {
    double u, v;
    if (model == CameraModel::Pinhole) {
        if (dir.z <= 1e-12) return std::nullopt;
        double x = dir.x / dir.z, y = dir.y / dir.z;
        double f = distort_radial(distortion, x * x + y * y);
        u = cx + fx * x * f;
        v = cy + fy * y * f;
    } else {
        double rxy = std::hypot(dir.x, dir.y);
        double theta = std::atan2(rxy, dir.z);
        if (theta > fisheye_theta_max()) return std::nullopt;
        double td = distortion.empty() ? theta : distort_theta(distortion, theta);
        double scale = (rxy < 1e-12) ? 0.0 : td / rxy;
        u = cx + fx * dir.x * scale;
        v = cy + fy * dir.y * scale;
    }
    if (u < 0 || u >= width || v < 0 || v >= height) return std::nullopt;
    return std::array<double, 2>{u, v};
}

std::optional<PolarPoint> project_to_ground(const RigPose& pose, const Vec3& ray_cam) {
    Vec3 d = pose.dir_to_rig(ray_cam);
    if (d.z >= -1e-9) return std::nullopt;  // at or above the horizon
    double s = -pose.translation.z / d.z;
    Vec3 p = pose.translation + d * s;
    return to_polar(p.x, p.y);
}

RotationMatrix camera_mount_rotation(double yaw, double pitch, double roll) {
    // cam x -> rig -y, cam y -> rig -z, cam z -> rig x
    Mat3 base{};
    base.m[0][2] = 1.0;
    base.m[1][0] = -1.0;
    base.m[2][1] = -1.0;
    return RotationMatrix::from_matrix_unchecked(
        (rot_z(yaw) * rot_y(pitch) * rot_x(roll)) * base);
}

const RigCamera& CameraRig::camera(const std::string& name) const {
    for (const auto& c : cameras)
        if (c.name == name) return c;
    throw std::invalid_argument("rig " + id + ": no camera named " + name);
}

namespace {

std::pair<std::string, std::string> split_kv(const std::string& tok, int line_no) {
    auto eq = tok.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("rig file line " + std::to_string(line_no) +
                                    ": expected key=value, got '" + tok + "'");
    return {tok.substr(0, eq), tok.substr(eq + 1)};
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

}  // namespace

CameraRig parse_rig(const std::string& text) {
    CameraRig rig;
    std::stringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::stringstream ls(line);
        std::string word;
        if (!(ls >> word) || word[0] == '#') continue;
        if (word == "rig") {
            ls >> rig.id;
            continue;
        }
        if (word != "camera")
            throw std::invalid_argument("rig file line " + std::to_string(line_no) +
                                        ": unknown record '" + word + "'");
        RigCamera cam;
        if (!(ls >> cam.name))
            throw std::invalid_argument("rig file line " + std::to_string(line_no) +
                                        ": camera record missing name");
        double yaw = 0, pitch = 0, roll = 0, x = 0, y = 0, z = 0;
        std::string tok;
        while (ls >> tok) {
            auto [k, val] = split_kv(tok, line_no);
            if (k == "model") {
                if (val == "pinhole")
                    cam.intrinsics.model = CameraModel::Pinhole;
                else if (val == "fisheye_equidistant")
                    cam.intrinsics.model = CameraModel::EquidistantFisheye;
                else
                    throw std::invalid_argument("rig file line " + std::to_string(line_no) +
                                                ": unknown camera model '" + val + "'");
            } else if (k == "fx")
                cam.intrinsics.fx = std::stod(val);
            else if (k == "fy")
                cam.intrinsics.fy = std::stod(val);
            else if (k == "cx")
                cam.intrinsics.cx = std::stod(val);
            else if (k == "cy")
                cam.intrinsics.cy = std::stod(val);
            else if (k == "width")
                cam.intrinsics.width = std::stoi(val);
            else if (k == "height")
                cam.intrinsics.height = std::stoi(val);
            else if (k == "dist")
                cam.intrinsics.distortion = parse_list(val);
            else if (k == "yaw")
                yaw = std::stod(val);
            else if (k == "pitch")
                pitch = std::stod(val);
            else if (k == "roll")
                roll = std::stod(val);
            else if (k == "x")
                x = std::stod(val);
            else if (k == "y")
                y = std::stod(val);
            else if (k == "z")
                z = std::stod(val);
            else if (k == "range")
                cam.intrinsics.max_range = std::stod(val);
            else
                throw std::invalid_argument("rig file line " + std::to_string(line_no) +
                                            ": unknown key '" + k + "'");
        }
        cam.intrinsics.validate();
        cam.pose.rotation = camera_mount_rotation(yaw, pitch, roll);
        cam.pose.translation = {x, y, z};
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
            throw std::invalid_argument("rig file line " + std::to_string(line_no) +
                                        ": non-finite translation");
        // Recover the euler entries for round-trip formatting.
        cam.mount_yaw = yaw;
        cam.mount_pitch = pitch;
        cam.mount_roll = roll;
        rig.cameras.push_back(std::move(cam));
    }
    if (rig.id.empty()) throw std::invalid_argument("rig file: missing 'rig <id>' record");
    if (rig.cameras.empty()) throw std::invalid_argument("rig file: no cameras");
    return rig;
}

CameraRig load_rig(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open rig file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_rig(ss.str());
}

std::string format_rig(const CameraRig& rig) {
    std::ostringstream out;
    out.precision(17);
    out << "rig " << rig.id << "\n";
    for (const auto& c : rig.cameras) {
        const auto& i = c.intrinsics;
        out << "camera " << c.name
            << " model=" << (i.model == CameraModel::Pinhole ? "pinhole" : "fisheye_equidistant")
            << " fx=" << i.fx << " fy=" << i.fy << " cx=" << i.cx << " cy=" << i.cy
            << " width=" << i.width << " height=" << i.height << " dist=";
        for (size_t j = 0; j < i.distortion.size(); ++j)
            out << (j ? "," : "") << i.distortion[j];
        out << " yaw=" << c.mount_yaw << " pitch=" << c.mount_pitch << " roll=" << c.mount_roll
            << " x=" << c.pose.translation.x << " y=" << c.pose.translation.y
            << " z=" << c.pose.translation.z << " range=" << i.max_range << "\n";
    }
    return out.str();
}

void save_rig(const CameraRig& rig, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::invalid_argument("cannot write rig file: " + path);
    f << format_rig(rig);
}

}  // namespace pbev::geom
