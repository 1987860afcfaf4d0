#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "sphf/dataset.hpp"

using namespace sphf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("sphf_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

using M3 = std::array<std::array<double, 3>, 3>;

double det3(const M3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Area (in normalised image units) of the ellipsoid silhouette: the dual image conic
// C* = P Q* P^T with Q* = diag(a^2, b^2, c^2, -1) and P the 3x4 projection
// u = cx + fx X / -Z, v = cy + fy Y / Z.
double silhouette_area(const Vec3& radii, const Camera& cam) {
  const double fx = cam.intrinsics.fx(), fy = cam.intrinsics.fy(), cx = cam.intrinsics.cx(), cy = cam.intrinsics.cy();
  const double kp[3][3] = {{fx, 0, -cx}, {0, -fy, -cy}, {0, 0, -1}};
  double p[3][4] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 3; ++k) p[i][j] += kp[i][k] * cam.pose.extrinsic(k, j);
  const double q[4] = {radii.x * radii.x, radii.y * radii.y, radii.z * radii.z, -1.0};
  M3 dual{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) dual[i][j] += p[i][k] * q[k] * p[j][k];
  // Point conic = adjugate of the dual conic (scale is irrelevant for the area formula).
  M3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      c[i][j] = dual[r0][c0] * dual[r1][c1] - dual[r0][c1] * dual[r1][c0];
    }
  const double d2 = c[0][0] * c[1][1] - c[0][1] * c[1][0];
  return std::abs(kPi * det3(c) / std::pow(d2, 1.5));
}

}  // namespace

TEST_CASE("scene texture is deterministic and front/back distinct") {
  SyntheticHeadScene a, b;
  a.seed = b.seed = 4;
  const Vec3 d = normalized({0.3, -0.2, 0.8});
  CHECK(a.shade(d).rgb == b.shade(d).rgb);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  double front[3] = {0, 0, 0}, back[3] = {0, 0, 0};
  int nf = 0, nb = 0;
  for (int i = 0; i < 4000; ++i) {
    const Vec3 v = normalized({n(rng), n(rng), n(rng)});
    const auto s = a.shade(v);
    if (v.z > 0.3 && v.y < 0.5) {
      for (int c = 0; c < 3; ++c) front[c] += s.rgb[c];
      ++nf;
    } else if (v.z < -0.3) {
      for (int c = 0; c < 3; ++c) back[c] += s.rgb[c];
      ++nb;
    }
  }
  double dist = 0;
  for (int c = 0; c < 3; ++c) dist += std::pow(front[c] / nf - back[c] / nb, 2);
  CHECK(std::sqrt(dist) > 0.3);
}

TEST_CASE("oracle renders: front shows the face, back shows only hair") {
  SyntheticHeadScene scene;
  const auto front = oracle_render(scene, {camera_from_yaw_pitch(0, 0), {}}, 64, 64);
  const auto back = oracle_render(scene, {camera_from_yaw_pitch(kPi, 0), {}}, 64, 64);
  int front_features = 0, back_features = 0, back_skin = 0;
  for (auto l : front.parsing.data) front_features += l == kFaceFeature;
  for (auto l : back.parsing.data) {
    back_features += l == kFaceFeature;
    back_skin += l == kSkin;
  }
  CHECK(front_features > 20);
  CHECK(back_features == 0);
  CHECK(back_skin == 0);
  // The face is centred: the centre pixel is foreground skin.
  CHECK(front.parsing.data[32 * 64 + 32] == kSkin);
  CHECK(oracle_render(scene, {camera_from_yaw_pitch(0, 0), {}}, 64, 64).rgb.data == front.rgb.data);
}

TEST_CASE("mask area matches the projected ellipse") {
  SyntheticHeadScene scene;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> yaw(-kPi, kPi), pitch(-0.5, 0.5);
  for (int i = 0; i < 6; ++i) {
    const Camera cam{camera_from_yaw_pitch(yaw(rng), pitch(rng)), {}};
    const int res = 128;
    const auto v = oracle_render(scene, cam, res, res, 1);
    double area = 0;
    for (float m : v.mask.data) area += m;
    const double expect = silhouette_area(scene.radii, cam) * res * res;
    CHECK(std::abs(area - expect) / expect < 0.02);
  }
}

TEST_CASE("camera labels") {
  const auto l = camera_label(1.1, -0.4);
  CHECK(l.size() == 25);
  const double k[9] = {4.2647, 0, 0.5, 0, 4.2647, 0.5, 0, 0, 1};
  for (int i = 0; i < 9; ++i) CHECK(l[16 + i] == k[i]);
  const Camera c = camera_from_label(l);
  const Camera ref{camera_from_view(1.1, -0.4), {}};
  for (int i = 0; i < 16; ++i) CHECK(std::abs(c.pose.extrinsic.m[i] - ref.pose.extrinsic.m[i]) < 1e-6);
  CHECK(norm(c.pose.center() - ref.pose.center()) < 1e-6);
  auto bad = l;
  bad[0] = 2.0;
  CHECK_THROWS_AS(camera_from_label(bad), std::invalid_argument);
}

TEST_CASE("azimuth bins") {
  CHECK(azimuth_bin(-kPi) == 0);
  CHECK(azimuth_bin(0.0) == 18);
  CHECK(azimuth_bin(-1e-9) == 17);
  CHECK(azimuth_bin(kPi - 1e-9) == 35);
  CHECK(azimuth_bin(kPi) == 0);
}

TEST_CASE("view samplers") {
  const auto front = ViewSampler::parse("front");
  for (int i = 0; i < 2000; ++i) CHECK(std::abs(sample_view(front, 1, i).yaw) <= kPi / 4 + 1e-12);

  // Uniform yaw: chi-square over 36 bins stays below the 0.999 quantile (df 35: ~66.6).
  const auto uni = ViewSampler::parse("uniform");
  std::array<int, kAzimuthBins> counts{};
  const int n = 36000;
  for (int i = 0; i < n; ++i) counts[azimuth_bin(sample_view(uni, 2, i).yaw)]++;
  double chi2 = 0;
  for (int c : counts) chi2 += std::pow(c - n / 36.0, 2) / (n / 36.0);
  CHECK(chi2 < 66.6);

  const auto imb = ViewSampler::parse("imbalanced:0.9");
  int in_front = 0;
  for (int i = 0; i < 10000; ++i) in_front += std::abs(sample_view(imb, 3, i).yaw) <= kPi / 4;
  // 0.9 from the cone plus a quarter of the uniform remainder.
  CHECK(in_front / 10000.0 == doctest::Approx(0.9 + 0.1 * 0.25).epsilon(0.02));
  CHECK(ViewSampler::parse(imb.to_string()).front_fraction == 0.9);
  CHECK_THROWS(ViewSampler::parse("sideways"));
  CHECK_THROWS(ViewSampler::parse("imbalanced:1.5"));
  CHECK_THROWS(ViewSampler::parse("front:0.2"));
}

TEST_CASE("front-only views never show a hair-dominated back") {
  SyntheticHeadScene scene;
  DatasetSpec spec;
  spec.views = ViewSampler::parse("front");
  spec.count = 40;
  spec.resolution = 32;
  for (const auto& v : render_views(scene, spec)) {
    int hair = 0, face = 0;
    for (auto l : v.images.parsing.data) {
      hair += l == kHair;
      face += l == kSkin || l == kFaceFeature;
    }
    CHECK(hair < face);
  }
}

TEST_CASE("balance_views duplication rule") {
  auto make = [](int per_bin, int bin) {
    Manifest m;
    for (int i = 0; i < per_bin; ++i) {
      ManifestRecord r;
      r.bin = bin;
      m.push_back(r);
    }
    return m;
  };
  CHECK(balance_views(make(2000, 3), 2000)[0].dup == 1);
  CHECK(balance_views(make(500, 3), 2000)[0].dup == 4);
  CHECK(balance_views(make(600, 3), 2000)[0].dup == 4);
  CHECK(balance_views(make(2500, 3), 2000)[0].dup == 1);
  CHECK(balance_views(make(1, 3), 2000)[0].dup == 2000);

  Manifest mixed = make(500, 1);
  const Manifest other = make(7, 20);
  mixed.insert(mixed.end(), other.begin(), other.end());
  const auto b = balance_views(mixed, 2000);
  for (const auto& r : b) {
    if (r.bin == 1) CHECK(r.dup == 4);
    if (r.bin == 20) CHECK(r.dup == 286);
  }
  CHECK(expand_duplicates(b).size() == 500 * 4 + 7 * 286);
  CHECK_THROWS_AS(balance_views({}, 2000), std::invalid_argument);
}

TEST_CASE("laplacian blur score") {
  CHECK(laplacian_blur_score(Image(8, 8, 3, 0.4f)) == 0.0);
  CHECK_THROWS_AS(laplacian_blur_score(Image(1, 1, 3)), std::invalid_argument);
  CHECK_THROWS_AS(laplacian_blur_score(Image(2, 5, 1)), std::invalid_argument);

  // 3x3 grey image with one bright centre pixel: single interior response -4 * 255 -> variance 0.
  Image one(3, 3, 1, 0.0f);
  one.at(1, 1, 0) = 1.0f;
  CHECK(laplacian_blur_score(one) == 0.0);

  // Checkerboard: interior responses are +-4 * 255 * luma, variance (1020 * luma)^2.
  Image checker(16, 16, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) checker.at(x, y, c) = ((x + y) % 2) ? 1.0f : 0.0f;
  CHECK(laplacian_blur_score(checker) == doctest::Approx(1020.0 * 1020.0 * 0.25 * 4).epsilon(1e-3));

  // Box blur lowers the score by orders of magnitude.
  Image blurred(16, 16, 3, 0.5f);
  CHECK(laplacian_blur_score(blurred) < laplacian_blur_score(checker));

  // Fixture: the 64x64 front oracle view of the default scene.
  const auto front = oracle_render(SyntheticHeadScene{}, {camera_from_yaw_pitch(0, 0), {}}, 64, 64);
  const double score = laplacian_blur_score(front.rgb);
  CHECK(score > kBlurThreshold);
}

TEST_CASE("make_dataset writes images and a round-trippable manifest") {
  TempDir dir;
  DatasetSpec spec;
  spec.count = 5;
  spec.resolution = 16;
  spec.seed = 3;
  const auto m = make_dataset(SyntheticHeadScene{}, spec, dir.path.string());
  REQUIRE(m.size() == 5);
  const auto back = read_manifest((dir.path / "manifest.jsonl").string());
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(back[i].path == m[i].path);
    CHECK(back[i].label == m[i].label);
    CHECK(back[i].theta == m[i].theta);
    CHECK(back[i].phi == m[i].phi);
    CHECK(back[i].bin == m[i].bin);
    CHECK(back[i].blur == m[i].blur);
    CHECK(fs::exists(dir.path / m[i].path));
    CHECK(fs::exists(dir.path / mask_path_for(m[i].path)));
    CHECK(fs::exists(dir.path / parsing_path_for(m[i].path)));
    const Camera c = camera_from_label(m[i].label);
    CHECK(m[i].bin == azimuth_bin(yaw_of(c.pose.center())));
    const auto s = cart_to_sph(c.pose.center());
    CHECK(s.theta == doctest::Approx(m[i].theta));
  }
  const auto views = load_training_views(back, dir.path.string());
  REQUIRE(views.size() == 5);
  const auto again = oracle_render(SyntheticHeadScene{}, views[2].camera, 16, 16);
  for (std::size_t k = 0; k < again.parsing.data.size(); ++k)
    CHECK(views[2].target.parsing.data[k] == again.parsing.data[k]);

  CHECK_THROWS_AS(make_dataset(SyntheticHeadScene{}, spec, "/proc/forbidden/x"), IoError);
}

TEST_CASE("png round trip") {
  TempDir dir;
  Image img(5, 3, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = (i % 256) / 255.0f;
  write_png((dir.path / "a.png").string(), img);
  const auto back = read_png((dir.path / "a.png").string());
  CHECK(back.width == 5);
  CHECK(back.channels == 3);
  CHECK(back.data == img.data);
  LabelMap labels(4, 4);
  labels.data[5] = 3;
  write_label_png((dir.path / "l.png").string(), labels);
  CHECK(read_label_png((dir.path / "l.png").string()).data == labels.data);
  CHECK_THROWS_AS(read_png((dir.path / "missing.png").string()), IoError);
}
