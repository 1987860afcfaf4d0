#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "sphf/geometry.hpp"

using namespace sphf;

namespace {

bool near(const Vec3& a, const Vec3& b, double tol = 1e-12) { return norm(a - b) <= tol; }

double orthonormality_error(const Mat3& r) {
  const Mat3 p = r.transposed() * r;
  double e = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) e = std::max(e, std::abs(p(i, j) - (i == j ? 1.0 : 0.0)));
  return e;
}

}  // namespace

TEST_CASE("cart_to_sph examples") {
  auto s = cart_to_sph({0, 0, 1});
  CHECK(s.r == doctest::Approx(1.0));
  CHECK(s.theta == doctest::Approx(0.0));
  CHECK(s.phi == 0.0);

  s = cart_to_sph({1, 0, 0});
  CHECK(s.theta == doctest::Approx(kPi / 2));
  CHECK(s.phi == doctest::Approx(0.0));

  s = cart_to_sph({0, 1, 0});
  CHECK(s.theta == doctest::Approx(kPi / 2));
  CHECK(s.phi == doctest::Approx(kPi / 2));

  s = cart_to_sph({0, 0, 0});
  CHECK(s.r == 0.0);
  CHECK(s.theta == 0.0);
  CHECK(s.phi == 0.0);

  s = cart_to_sph({0, 0, -3});
  CHECK(s.theta == doctest::Approx(kPi));
  CHECK(s.phi == 0.0);
}

TEST_CASE("sph_to_cart examples") {
  CHECK(near(sph_to_cart({1, kPi / 2, kPi}), {-1, 0, 0}, 1e-12));
  CHECK(near(sph_to_cart({2, 0, 1.234}), {0, 0, 2}, 1e-12));
  CHECK(near(sph_to_cart({1, kPi / 2, -kPi / 2}), {0, -1, 0}, 1e-12));
}

TEST_CASE("spherical round trip") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> radius(0.01, 1.0), dir(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    Vec3 d{dir(rng), dir(rng), dir(rng)};
    if (norm(d) < 1e-3) continue;
    const Vec3 p = normalized(d) * radius(rng);
    worst = std::max(worst, norm(sph_to_cart(cart_to_sph(p)) - p) / norm(p));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("frames are proper rotations with orthogonal poles") {
  for (auto f : {SphereFrame::a(), SphereFrame::b()}) {
    CHECK(orthonormality_error(f.rotation) < 1e-12);
    CHECK(f.rotation.determinant() == doctest::Approx(1.0));
  }
  // The frame polar axis is the world vector mapped onto frame +z.
  const Vec3 pole_a = SphereFrame::a().rotation.transposed() * Vec3{0, 0, 1};
  const Vec3 pole_b = SphereFrame::b().rotation.transposed() * Vec3{0, 0, 1};
  CHECK(near(pole_a, {0, 1, 0}));
  CHECK(near(pole_b, {-1, 0, 0}));
  CHECK(dot(pole_a, pole_b) == 0.0);
}

TEST_CASE("frame_coords examples") {
  CHECK(frame_coords(SphereFrame::a(), {0, 1, 0}).theta == doctest::Approx(0.0));
  CHECK(frame_coords(SphereFrame::b(), {-1, 0, 0}).theta == doctest::Approx(0.0));
  CHECK(frame_coords(SphereFrame::a(), {0, 0, 1}).theta == doctest::Approx(kPi / 2));
  // Face centre sits at the middle of A's weight map; B's seam runs through it.
  CHECK(frame_coords(SphereFrame::a(), {0, 0, 1}).phi == doctest::Approx(0.0));
  CHECK(std::abs(frame_coords(SphereFrame::b(), {0, 0, 1}).phi) == doctest::Approx(kPi));
  CHECK(std::abs(frame_coords(SphereFrame::a(), {0, 0, -1}).phi) == doctest::Approx(kPi));
}

TEST_CASE("frame_coords agrees with closed forms") {
  const auto a = SphereFrame::a();
  const auto b = SphereFrame::b();
  double worst = 0.0;
  const int n = 181;
  for (int i = 1; i < n - 1; ++i) {
    const double t0 = kPi * i / (n - 1);
    if (std::abs(t0 - kPi / 2) < 1e-3) continue;
    for (int j = 0; j < 2 * n; ++j) {
      const double p0 = -kPi + 2 * kPi * j / (2 * n);
      const Vec3 p = sph_to_cart({0.3, t0, p0});
      const auto sa = frame_coords(a, p);
      const auto sb = frame_coords(b, p);
      const double ta = std::acos(std::sin(p0) * std::sin(t0));
      const double tb = std::acos(-std::cos(p0) * std::sin(t0));
      worst = std::max({worst, std::abs(sa.theta - ta), std::abs(sb.theta - tb)});
      // phi closed forms give the tangent only; compare tangents away from their poles.
      const double tan_a = std::cos(p0) * std::tan(t0);
      const double tan_b = std::sin(p0) * std::tan(t0);
      if (std::abs(std::cos(sa.phi)) > 1e-2 && std::abs(tan_a) < 1e3)
        worst = std::max(worst, std::abs(std::tan(sa.phi) - tan_a) / std::max(1.0, std::abs(tan_a)));
      if (std::abs(std::cos(sb.phi)) > 1e-2 && std::abs(tan_b) < 1e3)
        worst = std::max(worst, std::abs(std::tan(sb.phi) - tan_b) / std::max(1.0, std::abs(tan_b)));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("fusion weight") {
  CHECK(fusion_weight(kPi / 2, 0.0) == 1.0);
  for (int i = 0; i <= 64; ++i) {
    const double t = kPi * i / 64;
    const double p = -kPi + 2 * kPi * i / 64;
    CHECK(std::abs(fusion_weight(0.0, p)) < 1e-7);
    CHECK(std::abs(fusion_weight(kPi, p)) < 1e-7);
    CHECK(std::abs(fusion_weight(t, kPi)) < 1e-7);
    CHECK(std::abs(fusion_weight(t, -kPi)) < 1e-7);
    const double w = fusion_weight(t, p);
    CHECK(w >= 0.0);
    CHECK(w <= 1.0);
  }
  // Separable closed form: sin^2(theta) * cos^2(phi / 2).
  CHECK(fusion_weight(0.7, 1.1) == doctest::Approx(std::pow(std::sin(0.7), 2) * std::pow(std::cos(0.55), 2)));
}

TEST_CASE("fusion weight is C1 (finite-difference gradient continuity)") {
  const double h = 1e-6;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> th(0.05, kPi - 0.05), ph(-kPi + 0.05, kPi - 0.05);
  for (int i = 0; i < 200; ++i) {
    const double t = th(rng), p = ph(rng);
    const double dt = (fusion_weight(t + h, p) - fusion_weight(t - h, p)) / (2 * h);
    const double dp = (fusion_weight(t, p + h) - fusion_weight(t, p - h)) / (2 * h);
    const double exact_t = 2 * std::sin(t) * std::cos(t) * std::pow(std::cos(p / 2), 2);
    const double exact_p = -std::pow(std::sin(t), 2) * std::cos(p / 2) * std::sin(p / 2);
    CHECK(dt == doctest::Approx(exact_t).epsilon(1e-6));
    CHECK(dp == doctest::Approx(exact_p).epsilon(1e-6));
  }
}

TEST_CASE("camera_from_view") {
  const auto pose = camera_from_view(kPi / 2, 0.0, 2.7);
  CHECK(near(pose.center(), {2.7, 0, 0}, 1e-12));
  CHECK(near(pose.extrinsic.translation(), {0, 0, -2.7}, 1e-12));

  const CameraIntrinsics k;
  CHECK(k.fx() == 4.2647);
  CHECK(k.fy() == 4.2647);
  CHECK(k.cx() == 0.5);
  CHECK(k.cy() == 0.5);
  CHECK(k.k(2, 0) == 0.0);
  CHECK(k.k(2, 1) == 0.0);
  CHECK(k.k(2, 2) == 1.0);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> th(0.0, kPi), ph(-kPi, kPi);
  for (int i = 0; i < 1000; ++i) {
    const double t = th(rng), p = ph(rng);
    const auto c = camera_from_view(t, p, 2.7);
    CHECK(std::abs(norm(c.center()) - 2.7) < 1e-6);
    CHECK(near(c.center(), sph_to_cart({2.7, t, p}), 1e-9));
    CHECK(orthonormality_error(c.rotation()) < 1e-9);
    CHECK(c.rotation().determinant() == doctest::Approx(1.0));
    // Camera looks down -z: the origin lands on the optical axis.
    const Vec3 origin_cam = c.rotation() * Vec3{} + c.extrinsic.translation();
    CHECK(near(origin_cam, {0, 0, -2.7}, 1e-9));
  }
}

TEST_CASE("camera up fallback along the y axis") {
  for (double t : {0.0, kPi}) {
    const auto c = camera_from_view(t, 0.0, 2.7);
    const Vec3 up = c.rotation().row(1);
    CHECK(std::isfinite(up.x));
    CHECK(orthonormality_error(c.rotation()) < 1e-12);
  }
  const auto top = camera_from_yaw_pitch(0.0, kPi / 2);
  CHECK(near(top.center(), {0, 2.7, 0}, 1e-9));
  CHECK(orthonormality_error(top.rotation()) < 1e-12);
}

TEST_CASE("yaw/pitch cameras") {
  const auto front = camera_from_yaw_pitch(0.0, 0.0);
  CHECK(near(front.center(), {0, 0, 2.7}, 1e-12));
  CHECK(near(front.rotation().row(0), {1, 0, 0}, 1e-12));
  CHECK(near(front.rotation().row(1), {0, 1, 0}, 1e-12));
  const auto side = camera_from_yaw_pitch(kPi / 2, 0.0);
  CHECK(near(side.center(), {2.7, 0, 0}, 1e-12));
  CHECK(yaw_of(side.center()) == doctest::Approx(kPi / 2));
  CHECK(std::abs(yaw_of(camera_from_yaw_pitch(kPi, 0.0).center())) == doctest::Approx(kPi));
}
