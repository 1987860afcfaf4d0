#include "sphf/geometry.hpp"

#include <algorithm>

namespace sphf {

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += (*this)(r, k) * o(k, c);
      out(r, c) = acc;
    }
  }
  return out;
}

Mat3 Mat3::transposed() const {
  Mat3 out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = (*this)(c, r);
  return out;
}

double Mat3::determinant() const {
  return dot(row(0), cross(row(1), row(2)));
}

Mat4 Mat4::operator*(const Mat4& o) const {
  Mat4 out;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += (*this)(r, k) * o(k, c);
      out(r, c) = acc;
    }
  }
  return out;
}

Mat3 Mat4::rotation() const {
  Mat3 out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = (*this)(r, c);
  return out;
}

Mat4 Mat4::from_rotation(const Mat3& rot) {
  Mat4 out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = rot(r, c);
  return out;
}

Mat4 Mat4::from_translation(const Vec3& t) {
  Mat4 out;
  out(0, 3) = t.x;
  out(1, 3) = t.y;
  out(2, 3) = t.z;
  return out;
}

SphericalCoord cart_to_sph(const Vec3& p) {
  SphericalCoord s;
  s.r = norm(p);
  if (s.r == 0.0) return s;
  s.theta = std::acos(std::clamp(p.z / s.r, -1.0, 1.0));
  if (p.x != 0.0 || p.y != 0.0) s.phi = std::atan2(p.y, p.x);
  return s;
}

Vec3 sph_to_cart(const SphericalCoord& s) {
  const double st = std::sin(s.theta);
  return {s.r * st * std::cos(s.phi), s.r * st * std::sin(s.phi), s.r * std::cos(s.theta)};
}

SphereFrame SphereFrame::a() {
  // (x_A, y_A, z_A) = (z, x, y)
  return {FrameId::A, Mat3::from_rows({0, 0, 1}, {1, 0, 0}, {0, 1, 0})};
}

SphereFrame SphereFrame::b() {
  // (x_B, y_B, z_B) = (-z, -y, -x)
  return {FrameId::B, Mat3::from_rows({0, 0, -1}, {0, -1, 0}, {-1, 0, 0})};
}

SphericalCoord frame_coords(const SphereFrame& frame, const Vec3& p) {
  return cart_to_sph(frame.rotation * p);
}

double fusion_weight(double theta, double phi) {
  return 0.5 * (1.0 + std::cos(2.0 * theta - kPi)) * 0.5 * (1.0 + std::cos(phi));
}

Vec3 CameraPose::center() const {
  // c = -R^T t
  const Mat3 rt = rotation().transposed();
  return -(rt * extrinsic.translation());
}

namespace {

CameraPose look_at_origin(const Vec3& center, double radius) {
  const Vec3 back = normalized(center);
  const Vec3 forward = -back;
  Vec3 side = cross(forward, Vec3{0, 1, 0});
  if (norm(side) < 1e-9) side = cross(forward, Vec3{0, 0, 1});
  const Vec3 right = normalized(side);
  const Vec3 up = cross(right, forward);

  const Mat4 rot = Mat4::from_rotation(Mat3::from_rows(right, up, back));
  const Mat4 trans = Mat4::from_translation({0, 0, -radius});
  return {trans * rot, radius};
}

}  // namespace

CameraPose camera_from_view(double theta, double phi, double radius) {
  return look_at_origin(sph_to_cart({radius, theta, phi}), radius);
}

CameraPose camera_from_yaw_pitch(double yaw, double pitch, double radius) {
  const Vec3 dir{std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw)};
  return look_at_origin(dir * radius, radius);
}

double yaw_of(const Vec3& center) { return std::atan2(center.x, center.z); }

}  // namespace sphf
