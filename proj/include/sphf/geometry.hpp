#pragma once

#include <array>
#include <cmath>
#include <numbers>

namespace sphf {

inline constexpr double kPi = std::numbers::pi;

// World space: head at the origin, +z front, +y up, +x towards the head's left.
struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr bool operator==(const Vec3&) const = default;
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) { return v / norm(v); }

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static constexpr Mat3 identity() { return {}; }
  static constexpr Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    return {{r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z}};
  }

  constexpr double operator()(int r, int c) const { return m[r * 3 + c]; }
  constexpr double& operator()(int r, int c) { return m[r * 3 + c]; }
  constexpr Vec3 row(int r) const { return {m[r * 3], m[r * 3 + 1], m[r * 3 + 2]}; }

  constexpr Vec3 operator*(const Vec3& v) const {
    return {dot(row(0), v), dot(row(1), v), dot(row(2), v)};
  }
  Mat3 operator*(const Mat3& o) const;
  Mat3 transposed() const;
  double determinant() const;
};

// Row-major 4x4 homogeneous transform.
struct Mat4 {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  constexpr double operator()(int r, int c) const { return m[r * 4 + c]; }
  constexpr double& operator()(int r, int c) { return m[r * 4 + c]; }
  Mat4 operator*(const Mat4& o) const;

  Mat3 rotation() const;
  Vec3 translation() const { return {m[3], m[7], m[11]}; }
  static Mat4 from_rotation(const Mat3& r);
  static Mat4 from_translation(const Vec3& t);
};

struct SphericalCoord {
  double r = 0.0;
  double theta = 0.0;  // from the +z polar axis, [0, pi]
  double phi = 0.0;    // atan2(y, x), [-pi, pi]
};

// phi is 0 at the origin and on the polar axis.
SphericalCoord cart_to_sph(const Vec3& p);
Vec3 sph_to_cart(const SphericalCoord& s);

enum class FrameId { A, B };

/// Rotated sphere used by one half of the dual spherical tri-plane.
///
/// Frame A has its pole on +y with phi = 0 at +z, so the face sits at the
/// centre of its weight map and the phi seam runs down the back of the head.
/// Frame B has its pole on -x with phi = 0 at -z, so its seam runs down the
/// front. The two seams are orthogonal and open in opposite directions.
struct SphereFrame {
  FrameId id = FrameId::A;
  Mat3 rotation;  // world -> frame Cartesian

  static SphereFrame a();
  static SphereFrame b();
  static SphereFrame of(FrameId id) { return id == FrameId::A ? a() : b(); }
};

SphericalCoord frame_coords(const SphereFrame& frame, const Vec3& p);

/// w(theta, phi) = (1 + cos(2 theta - pi))/2 * (1 + cos phi)/2. Peaks at (pi/2, 0),
/// vanishes on the poles and on the phi = +-pi seam.
double fusion_weight(double theta, double phi);

inline constexpr double kDefaultFocal = 4.2647;
inline constexpr double kDefaultCameraRadius = 2.7;
inline constexpr double kDefaultSceneRadius = 0.5;

struct CameraIntrinsics {
  Mat3 k = Mat3::from_rows({kDefaultFocal, 0, 0.5}, {0, kDefaultFocal, 0.5}, {0, 0, 1});

  double fx() const { return k(0, 0); }
  double fy() const { return k(1, 1); }
  double cx() const { return k(0, 2); }
  double cy() const { return k(1, 2); }
};

/// World-to-camera pose. Camera axes are (right, up, back); the camera looks
/// down its local -z, so the look-at target lands at (0, 0, -radius).
struct CameraPose {
  Mat4 extrinsic;
  double radius = kDefaultCameraRadius;

  Vec3 center() const;
  Mat3 rotation() const { return extrinsic.rotation(); }
};

struct Camera {
  CameraPose pose;
  CameraIntrinsics intrinsics;
};

/// Camera on the sphere of `radius` at spherical position (theta, phi), facing
/// the origin. Up is world +y, or +z when looking straight along the y axis.
CameraPose camera_from_view(double theta, double phi, double radius = kDefaultCameraRadius);

/// Camera from yaw (about +y, 0 = front) and pitch (towards +y), in radians.
CameraPose camera_from_yaw_pitch(double yaw, double pitch, double radius = kDefaultCameraRadius);

/// Yaw of a camera center, atan2(x, z): 0 in front, +-pi behind.
double yaw_of(const Vec3& center);

}  // namespace sphf
