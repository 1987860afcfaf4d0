#include "sphf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"
#include "sphf/parallel.hpp"
#include "sphf/rng.hpp"

namespace sphf {

namespace {

using json = nlohmann::json;

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

double angle_between(const Vec3& a, const Vec3& b) { return std::acos(std::clamp(dot(a, b), -1.0, 1.0)); }

std::array<double, 3> mix(const std::array<double, 3>& a, const std::array<double, 3>& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

const Vec3 kLeftEye = normalized({-0.33, 0.22, 0.92});
const Vec3 kRightEye = normalized({0.33, 0.22, 0.92});
const Vec3 kMark = normalized({0.55, -0.12, 0.82});

}  // namespace

SurfaceSample SyntheticHeadScene::shade(const Vec3& d) const {
  const double tone = 0.06 * (uniform01(seed, 1, 0) - 0.5);
  const double phase = 2 * kPi * uniform01(seed, 2, 0);

  // Hair covers the back and the crown; the hairline is blended over a narrow band.
  const double hair_back = smoothstep(0.0, -0.12, d.z);
  const double hair_top = smoothstep(0.56, 0.66, d.y);
  const double hair = std::max(hair_back, hair_top);

  std::array<double, 3> skin{0.92 + tone, 0.74 + tone, 0.62 + tone};
  const double shading = 1.0 - 0.08 * (1.0 - std::max(0.0, d.z));
  for (auto& c : skin) c *= shading;

  const double around = std::atan2(d.x, -d.z);
  const double stripes = 0.5 + 0.5 * std::sin(9 * around + 4 * d.y + phase);
  std::array<double, 3> hair_rgb = mix({0.30, 0.18, 0.10}, {0.52, 0.36, 0.20}, stripes);
  // A lighter patch on the -x side of the back of the head.
  hair_rgb = mix(hair_rgb, {0.70, 0.58, 0.38}, 0.8 * smoothstep(0.35, 0.2, angle_between(d, normalized({-0.5, 0.1, -0.85}))));

  std::array<double, 3> rgb = skin;
  bool feature = false;
  const double eye = std::min(angle_between(d, kLeftEye), angle_between(d, kRightEye));
  rgb = mix(rgb, {0.12, 0.12, 0.22}, smoothstep(0.15, 0.11, eye));
  feature |= eye < 0.13;
  const double mouth = std::pow(d.x / 0.26, 2) + std::pow((d.y + 0.42) / 0.09, 2);
  if (d.z > 0.0) {
    rgb = mix(rgb, {0.78, 0.22, 0.26}, smoothstep(1.3, 0.8, mouth));
    feature |= mouth < 1.05;
  }
  const double mark = angle_between(d, kMark);
  rgb = mix(rgb, {0.86, 0.16, 0.14}, smoothstep(0.2, 0.14, mark));
  feature |= mark < 0.17;

  rgb = mix(rgb, hair_rgb, hair);
  SurfaceSample s;
  for (int c = 0; c < 3; ++c) s.rgb[c] = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
  s.label = hair > 0.5 ? kHair : (feature ? kFaceFeature : kSkin);
  return s;
}

std::optional<double> SyntheticHeadScene::intersect(const Ray& ray) const {
  const Vec3 o{ray.origin.x / radii.x, ray.origin.y / radii.y, ray.origin.z / radii.z};
  const Vec3 d{ray.direction.x / radii.x, ray.direction.y / radii.y, ray.direction.z / radii.z};
  const double a = dot(d, d), b = dot(o, d), c = dot(o, o) - 1.0;
  const double disc = b * b - a * c;
  if (disc < 0.0) return std::nullopt;
  const double t = (-b - std::sqrt(disc)) / a;
  if (t < 0.0) return std::nullopt;
  return t;
}

OracleView oracle_render(const SyntheticHeadScene& scene, const Camera& camera, int width, int height,
                         int supersample) {
  if (width < 1 || height < 1 || supersample < 1) throw std::invalid_argument("oracle_render: bad size");
  OracleView out{Image(width, height, 3), Image(width, height, 1), LabelMap(width, height)};
  auto trace = [&](double u, double v, SurfaceSample& s) {
    const Ray ray = camera_ray(camera, u, v);
    const auto t = scene.intersect(ray);
    if (!t) {
      for (int c = 0; c < 3; ++c) s.rgb[c] = static_cast<float>(scene.background[c]);
      s.label = kBackground;
      return false;
    }
    const Vec3 p = ray.origin + ray.direction * *t;
    s = scene.shade(normalized({p.x / scene.radii.x, p.y / scene.radii.y, p.z / scene.radii.z}));
    return true;
  };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      SurfaceSample s;
      const bool hit = trace((x + 0.5) / width, (y + 0.5) / height, s);
      out.mask.at(x, y, 0) = hit ? 1.0f : 0.0f;
      out.parsing.data[static_cast<std::size_t>(y) * width + x] = s.label;
      double acc[3] = {0, 0, 0};
      for (int sy = 0; sy < supersample; ++sy)
        for (int sx = 0; sx < supersample; ++sx) {
          SurfaceSample sub;
          trace((x + (sx + 0.5) / supersample) / width, (y + (sy + 0.5) / supersample) / height, sub);
          for (int c = 0; c < 3; ++c) acc[c] += sub.rgb[c];
        }
      for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = static_cast<float>(acc[c] / (supersample * supersample));
    }
  return out;
}

// ---------------------------------------------------------------------------

int azimuth_bin(double yaw) {
  const double width = 2 * kPi / kAzimuthBins;
  int b = static_cast<int>(std::floor((yaw + kPi) / width));
  return ((b % kAzimuthBins) + kAzimuthBins) % kAzimuthBins;
}

CameraLabel camera_label(const Camera& camera) {
  CameraLabel l{};
  for (int i = 0; i < 16; ++i) l[i] = camera.pose.extrinsic.m[i];
  for (int i = 0; i < 9; ++i) l[16 + i] = camera.intrinsics.k.m[i];
  return l;
}

CameraLabel camera_label(double theta, double phi, double radius) {
  return camera_label(Camera{camera_from_view(theta, phi, radius), {}});
}

Camera camera_from_label(const CameraLabel& label) {
  for (double v : label)
    if (!std::isfinite(v)) throw std::invalid_argument("camera label has non-finite entries");
  Camera c;
  for (int i = 0; i < 16; ++i) c.pose.extrinsic.m[i] = label[i];
  for (int i = 0; i < 9; ++i) c.intrinsics.k.m[i] = label[16 + i];
  const Mat3 r = c.pose.rotation();
  const Mat3 p = r.transposed() * r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (std::abs(p(i, j) - (i == j ? 1.0 : 0.0)) > 1e-6)
        throw std::invalid_argument("camera label rotation is not orthonormal");
  c.pose.radius = norm(c.pose.extrinsic.translation());
  return c;
}

ViewSampler ViewSampler::parse(const std::string& text) {
  ViewSampler s;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  if (kind == "uniform") s.kind = ViewDistribution::Uniform360;
  else if (kind == "front") s.kind = ViewDistribution::FrontOnly;
  else if (kind == "imbalanced") s.kind = ViewDistribution::Imbalanced;
  else throw std::invalid_argument("unknown view distribution '" + text + "'");
  if (colon != std::string::npos) {
    if (s.kind != ViewDistribution::Imbalanced) throw std::invalid_argument("only 'imbalanced' takes a fraction");
    std::size_t used = 0;
    const std::string rest = text.substr(colon + 1);
    try {
      s.front_fraction = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != rest.size() || !(s.front_fraction >= 0.0 && s.front_fraction <= 1.0))
      throw std::invalid_argument("front fraction must be a number in [0, 1]");
  }
  return s;
}

std::string ViewSampler::to_string() const {
  switch (kind) {
    case ViewDistribution::Uniform360: return "uniform";
    case ViewDistribution::FrontOnly: return "front";
    case ViewDistribution::Imbalanced: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "imbalanced:%.10g", front_fraction);
      return buf;
    }
  }
  return "?";
}

ViewAngles sample_view(const ViewSampler& s, std::uint64_t seed, std::uint64_t index) {
  const double u0 = uniform01(seed, index, 0), u1 = uniform01(seed, index, 1), u2 = uniform01(seed, index, 2);
  ViewAngles a;
  a.pitch = s.pitch_min + (s.pitch_max - s.pitch_min) * u1;
  bool front = s.kind == ViewDistribution::FrontOnly;
  if (s.kind == ViewDistribution::Imbalanced) front = u2 < s.front_fraction;
  a.yaw = front ? (2 * u0 - 1) * s.front_half_width : -kPi + 2 * kPi * u0;
  return a;
}

std::string mask_path_for(const std::string& rgb_path) {
  const auto pos = rgb_path.rfind("_rgb.png");
  if (pos == std::string::npos) throw std::invalid_argument("'" + rgb_path + "' does not end in _rgb.png");
  return rgb_path.substr(0, pos) + "_mask.png";
}

std::string parsing_path_for(const std::string& rgb_path) {
  const auto pos = rgb_path.rfind("_rgb.png");
  if (pos == std::string::npos) throw std::invalid_argument("'" + rgb_path + "' does not end in _rgb.png");
  return rgb_path.substr(0, pos) + "_parsing.png";
}

std::string record_to_json(const ManifestRecord& r) {
  json j;
  j["path"] = r.path;
  j["label"] = r.label;
  j["theta"] = r.theta;
  j["phi"] = r.phi;
  j["bin"] = r.bin;
  j["blur"] = r.blur;
  j["dup"] = r.dup;
  return j.dump();
}

ManifestRecord record_from_json(const std::string& line) {
  ManifestRecord r;
  try {
    const json j = json::parse(line);
    r.path = j.at("path").get<std::string>();
    const auto label = j.at("label").get<std::vector<double>>();
    if (label.size() != 25) throw std::invalid_argument("manifest label must have 25 entries");
    std::copy(label.begin(), label.end(), r.label.begin());
    r.theta = j.at("theta").get<double>();
    r.phi = j.at("phi").get<double>();
    r.bin = j.at("bin").get<int>();
    r.blur = j.at("blur").get<double>();
    r.dup = j.at("dup").get<int>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad manifest record: ") + e.what());
  }
  if (r.bin < 0 || r.bin >= kAzimuthBins) throw std::invalid_argument("manifest bin out of range");
  if (r.dup < 1) throw std::invalid_argument("manifest dup must be positive");
  return r;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& r : manifest) out << record_to_json(r) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  Manifest m;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) m.push_back(record_from_json(line));
  return m;
}

std::vector<RenderedView> render_views(const SyntheticHeadScene& scene, const DatasetSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("dataset count must be >= 1");
  if (spec.resolution < 3) throw std::invalid_argument("dataset resolution must be >= 3");
  std::vector<RenderedView> views(spec.count);
  parallel_ranges(views.size(), resolve_threads(spec.threads), [&](int, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      RenderedView& v = views[i];
      v.angles = sample_view(spec.views, spec.seed, i);
      v.camera = Camera{camera_from_yaw_pitch(v.angles.yaw, v.angles.pitch), {}};
      v.images = oracle_render(scene, v.camera, spec.resolution, spec.resolution, spec.supersample);
    }
  });
  return views;
}

Manifest make_dataset(const SyntheticHeadScene& scene, const DatasetSpec& spec, const std::string& out_dir) {
  if (spec.count < 1) throw std::invalid_argument("dataset count must be >= 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory '" + out_dir + "'");

  const auto views = render_views(scene, spec);
  Manifest manifest(views.size());
  parallel_ranges(views.size(), resolve_threads(spec.threads), [&](int, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const RenderedView& v = views[i];
      char name[64];
      std::snprintf(name, sizeof name, "view_%04zu_rgb.png", i);
      ManifestRecord& r = manifest[i];
      r.path = name;
      write_png((fs::path(out_dir) / r.path).string(), v.images.rgb);
      write_png((fs::path(out_dir) / mask_path_for(r.path)).string(), v.images.mask);
      write_label_png((fs::path(out_dir) / parsing_path_for(r.path)).string(), v.images.parsing);
      r.label = camera_label(v.camera);
      const SphericalCoord s = cart_to_sph(v.camera.pose.center());
      r.theta = s.theta;
      r.phi = s.phi;
      r.bin = azimuth_bin(yaw_of(v.camera.pose.center()));
      r.blur = laplacian_blur_score(v.images.rgb);
    }
  });
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
  return manifest;
}

Manifest balance_views(const Manifest& manifest, int n_thresh) {
  if (manifest.empty()) throw std::invalid_argument("balance_views: empty manifest");
  if (n_thresh < 1) throw std::invalid_argument("balance_views: threshold must be positive");
  std::map<int, long long> counts;
  for (const auto& r : manifest) counts[r.bin]++;
  Manifest out = manifest;
  for (auto& r : out) {
    const long long n = counts[r.bin];
    r.dup = n >= n_thresh ? 1 : static_cast<int>((n_thresh + n - 1) / n);
  }
  return out;
}

Manifest expand_duplicates(const Manifest& manifest) {
  Manifest out;
  for (const auto& r : manifest)
    for (int k = 0; k < r.dup; ++k) {
      out.push_back(r);
      out.back().dup = 1;
    }
  return out;
}

double laplacian_blur_score(const Image& image) {
  if (image.width < 3 || image.height < 3) throw std::invalid_argument("blur score needs at least 3x3 pixels");
  const Image gray = to_grayscale(image);
  const int w = gray.width, h = gray.height;
  auto g = [&](int x, int y) { return 255.0 * gray.data[static_cast<std::size_t>(y) * w + x]; };
  std::vector<double> response;
  response.reserve(static_cast<std::size_t>(w - 2) * (h - 2));
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x)
      response.push_back(g(x, y - 1) + g(x - 1, y) + g(x + 1, y) + g(x, y + 1) - 4 * g(x, y));
  double mean = 0.0;
  for (double v : response) mean += v;
  mean /= response.size();
  double var = 0.0;
  for (double v : response) var += (v - mean) * (v - mean);
  return var / response.size();
}

TrainingView training_view(const Camera& camera, const OracleView& images, int dup) {
  return TrainingView{camera, ViewTarget{images.rgb, images.mask, images.parsing}, dup};
}

std::vector<TrainingView> load_training_views(const Manifest& manifest, const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<TrainingView> views;
  for (const auto& r : manifest) {
    OracleView img;
    img.rgb = read_png((fs::path(dir) / r.path).string());
    img.mask = read_png((fs::path(dir) / mask_path_for(r.path)).string());
    img.parsing = read_label_png((fs::path(dir) / parsing_path_for(r.path)).string());
    if (img.rgb.channels != 3 || img.mask.channels != 1) throw IoError("unexpected channel layout in " + r.path);
    views.push_back(training_view(camera_from_label(r.label), img, r.dup));
  }
  return views;
}

}  // namespace sphf
