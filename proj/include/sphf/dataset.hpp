#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sphf/geometry.hpp"
#include "sphf/image.hpp"
#include "sphf/optim.hpp"
#include "sphf/render.hpp"

namespace sphf {

enum ParsingClass : std::uint8_t { kBackground = 0, kSkin = 1, kFaceFeature = 2, kHair = 3 };

struct SurfaceSample {
  std::array<float, 3> rgb{};
  std::uint8_t label = kBackground;
};

/// Ellipsoid head proxy. The face (skin, eyes, mouth and a mark on the +x
/// cheek only) covers the +z side; hair covers the back and the crown.
struct SyntheticHeadScene {
  Vec3 radii{0.20, 0.24, 0.22};
  std::uint64_t seed = 0;
  std::array<double, 3> background{1.0, 1.0, 1.0};

  /// Texture at a surface direction (unit vector from the centre).
  SurfaceSample shade(const Vec3& direction) const;
  /// Nearest ray parameter where the ray enters the ellipsoid.
  std::optional<double> intersect(const Ray& ray) const;
};

struct OracleView {
  Image rgb;         // 3 channels, anti-aliased
  Image mask;        // 1 channel, hard coverage of the pixel centre
  LabelMap parsing;  // class at the pixel centre
};

/// Analytic ray-ellipsoid render; `supersample`^2 rays per pixel for rgb.
OracleView oracle_render(const SyntheticHeadScene& scene, const Camera& camera, int width, int height,
                         int supersample = 2);

// ---------------------------------------------------------------------------

inline constexpr int kAzimuthBins = 36;

/// Bin of a camera yaw (atan2(x, z) of its centre): 10 degree bins starting at -180.
int azimuth_bin(double yaw);

using CameraLabel = std::array<double, 25>;

/// 16 extrinsic entries (row-major) followed by 9 intrinsic entries.
CameraLabel camera_label(double theta, double phi, double radius = kDefaultCameraRadius);
CameraLabel camera_label(const Camera& camera);
/// Throws std::invalid_argument if the rotation block is not orthonormal.
Camera camera_from_label(const CameraLabel& label);

enum class ViewDistribution { Uniform360, FrontOnly, Imbalanced };

struct ViewSampler {
  ViewDistribution kind = ViewDistribution::Uniform360;
  double front_half_width = 45.0 * kPi / 180.0;  // yaw cone for FrontOnly / the front part of Imbalanced
  double front_fraction = 0.85;                  // Imbalanced only
  double pitch_min = -20.0 * kPi / 180.0;
  double pitch_max = 20.0 * kPi / 180.0;

  /// "uniform", "front" or "imbalanced[:fraction]".
  static ViewSampler parse(const std::string& text);
  std::string to_string() const;
};

struct ViewAngles {
  double yaw = 0.0;
  double pitch = 0.0;
};

ViewAngles sample_view(const ViewSampler& sampler, std::uint64_t seed, std::uint64_t index);

struct ManifestRecord {
  std::string path;  // rgb image, relative to the manifest directory
  CameraLabel label{};
  double theta = 0.0;  // camera centre, spherical (polar +z)
  double phi = 0.0;
  int bin = 0;
  double blur = 0.0;
  int dup = 1;
};

using Manifest = std::vector<ManifestRecord>;

/// view_0007_rgb.png -> view_0007_mask.png / view_0007_parsing.png
std::string mask_path_for(const std::string& rgb_path);
std::string parsing_path_for(const std::string& rgb_path);

std::string record_to_json(const ManifestRecord& r);
ManifestRecord record_from_json(const std::string& line);
void write_manifest(const std::string& path, const Manifest& manifest);
Manifest read_manifest(const std::string& path);

struct DatasetSpec {
  ViewSampler views;
  int count = 64;
  int resolution = 64;
  int supersample = 2;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Renders `count` oracle views into out_dir, writes out_dir/manifest.jsonl.
Manifest make_dataset(const SyntheticHeadScene& scene, const DatasetSpec& spec, const std::string& out_dir);

/// Camera and oracle images for a view, without touching the filesystem.
struct RenderedView {
  ViewAngles angles;
  Camera camera;
  OracleView images;
};
std::vector<RenderedView> render_views(const SyntheticHeadScene& scene, const DatasetSpec& spec);

/// N_dup = 1 if N_bin >= n_thresh else ceil(n_thresh / N_bin), per azimuth bin.
Manifest balance_views(const Manifest& manifest, int n_thresh = 2000);
/// Replicates every record dup times (dup reset to 1).
Manifest expand_duplicates(const Manifest& manifest);

/// Variance of the 3x3 Laplacian [0 1 0; 1 -4 1; 0 1 0] over interior pixels of
/// the luma image 0.299 R + 0.587 G + 0.114 B on a 0-255 scale.
double laplacian_blur_score(const Image& image);
inline constexpr double kBlurThreshold = 50.0;

/// Training views (images, cameras, dup) for a manifest stored in `dir`.
std::vector<TrainingView> load_training_views(const Manifest& manifest, const std::string& dir);
TrainingView training_view(const Camera& camera, const OracleView& images, int dup = 1);

}  // namespace sphf
