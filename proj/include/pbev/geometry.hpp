#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace pbev::geom {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        double n = norm();
        return {x / n, y / n, z / n};
    }
};

struct Mat3 {
    // m[row][col]
    std::array<std::array<double, 3>, 3> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
                r.m[i][j] = s;
            }
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }

    double trace() const { return m[0][0] + m[1][1] + m[2][2]; }

    double det() const {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }
};

// Proper rotation. from_matrix validates orthonormality and det=1 to 1e-9.
class RotationMatrix {
  public:
    RotationMatrix() : m_(Mat3::identity()) {}

    static RotationMatrix from_matrix(const Mat3& m);
    // Trusts the caller; used on paths that construct rotations from
    // already-valid factors.
    static RotationMatrix from_matrix_unchecked(const Mat3& m) {
        RotationMatrix r;
        r.m_ = m;
        return r;
    }

    const Mat3& mat() const { return m_; }
    double at(int i, int j) const { return m_.m[i][j]; }
    Vec3 operator*(const Vec3& v) const { return m_ * v; }
    RotationMatrix operator*(const RotationMatrix& o) const {
        return from_matrix_unchecked(m_ * o.m_);
    }
    RotationMatrix inverse() const { return from_matrix_unchecked(m_.transposed()); }

    static bool is_valid(const Mat3& m, double tol = 1e-9);

  private:
    Mat3 m_;
};

// Elementary factors about z, y and x.
Mat3 rot_z(double psi);
Mat3 rot_y(double theta);
Mat3 rot_x(double phi);

// R = Rz(yaw) * Ry(pitch) * Rx(roll).
RotationMatrix euler_to_rotation(double yaw, double pitch, double roll);

// Geodesic angle between two rotations, in [0, pi].
double rotation_error(const RotationMatrix& r_gt, const RotationMatrix& r_pred);

inline double wrap_angle_2pi(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a < 0) a += 2.0 * M_PI;
    if (a >= 2.0 * M_PI) a = 0.0;
    return a;
}

// Signed wrap to (-pi, pi].
inline double wrap_angle_pi(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a <= -M_PI) a += 2.0 * M_PI;
    if (a > M_PI) a -= 2.0 * M_PI;
    return a;
}

struct PolarPoint {
    double azimuth = 0;   // radians in [0, 2pi)
    double distance = 0;  // meters, >= 0
    double elevation = 0; // meters, optional (0 when unused)
};

PolarPoint to_polar(double x, double y);
void to_cartesian(const PolarPoint& p, double& x, double& y);

// Camera frame -> rig frame transform. The rig frame doubles as the BEV
// frame: x forward, y left, z up, origin on the ground plane.
struct RigPose {
    RotationMatrix rotation;
    Vec3 translation;

    Vec3 to_rig(const Vec3& p_cam) const { return rotation * p_cam + translation; }
    Vec3 dir_to_rig(const Vec3& d_cam) const { return rotation * d_cam; }
};

enum class CameraModel { Pinhole, EquidistantFisheye };

// Camera frame convention: +z optical axis, +x right, +y down.
struct CameraIntrinsics {
    CameraModel model = CameraModel::Pinhole;
    double fx = 1, fy = 1;
    double cx = 0, cy = 0;
    int width = 0, height = 0;
    std::vector<double> distortion;  // radial coefficients
    double max_range = 100.0;        // meters

    void validate() const;

    // Unit ray through a pixel; nullopt when the pixel is out of bounds or
    // beyond the fisheye's angular validity.
    std::optional<Vec3> try_unproject(double u, double v) const;
    // Same but throws std::domain_error instead of returning nullopt.
    Vec3 unproject(double u, double v) const;

    // Pixel for a camera-frame direction; nullopt when the direction does
    // not image (behind a pinhole, beyond fisheye validity, or outside the
    // image bounds).
    std::optional<std::array<double, 2>> project(const Vec3& dir) const;

    double fisheye_theta_max() const;
};

// Intersection of a camera-frame ray with the rig ground plane z=0,
// expressed in polar coordinates about the rig origin. Rays within 1e-9 of
// horizontal (or pointing up) return nullopt.
std::optional<PolarPoint> project_to_ground(const RigPose& pose, const Vec3& ray_cam);

struct RigCamera {
    std::string name;
    CameraIntrinsics intrinsics;
    RigPose pose;
    // Mount angles as written in the rig file, kept for round-trip output.
    double mount_yaw = 0, mount_pitch = 0, mount_roll = 0;
};

struct CameraRig {
    std::string id;
    std::vector<RigCamera> cameras;

    const RigCamera& camera(const std::string& name) const;
};

// Text format, one camera per line:
//   rig <id>
//   camera <name> model=... fx=... fy=... cx=... cy=... width=... height=...
//     dist=k1,k2 yaw=... pitch=... roll=... x=... y=... z=... range=...
CameraRig load_rig(const std::string& path);
CameraRig parse_rig(const std::string& text);
std::string format_rig(const CameraRig& rig);
void save_rig(const CameraRig& rig, const std::string& path);

// Camera-to-rig rotation for a rig-file pose entry: yaw/pitch/roll applied
// on top of the axis permutation that maps camera (+z fwd, +x right, +y
// down) onto rig (+x fwd, +y left, +z up). Positive pitch tilts the view
// toward the ground.
RotationMatrix camera_mount_rotation(double yaw, double pitch, double roll);

}  // namespace pbev::geom
