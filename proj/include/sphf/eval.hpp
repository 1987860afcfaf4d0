#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>

#include "sphf/dataset.hpp"
#include "sphf/field.hpp"
#include "sphf/image.hpp"
#include "sphf/render.hpp"

namespace sphf {

/// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) over all samples of two [0, 1] images of equal shape.
double psnr(const Image& a, const Image& b);

template <typename T>
Image rgb_image(const RenderOutput<T>& r);
template <typename T>
Image alpha_image(const RenderOutput<T>& r);

/// Pearson correlation of all channels over pixels where mask > 0.5.
/// Throws std::invalid_argument on an empty mask; returns 0 if either side is constant there.
double masked_pearson(const Image& a, const Image& b, const Image& mask);

/// Correlation between the back render and the mirrored front render over the
/// scene's foreground in both views. Cameras must be antipodal in yaw.
template <typename T>
double mirror_leakage(const RadianceField<T>& field, Branch branch, const SyntheticHeadScene& scene,
                      const Camera& front, const Camera& back, int resolution, const RenderSettings& settings);

struct SeamReport {
  double seam_max = 0.0;         // largest jump across a seam
  double interior_median = 0.0;  // median jump at interior phi, same delta
  double normalized = 0.0;       // seam_max / interior_median (0 when both vanish)
};

/// Feature jumps across phi = +-pi of frames A and B (half the probes each),
/// against jumps of the same angular size 0.1-0.5 rad inside the seam of the same frame.
template <typename T>
SeamReport seam_discontinuity(const NeuralField<T>& field, Branch branch, int probes, double delta = 1e-3,
                              std::uint64_t seed = 0, double r_max = kDefaultSceneRadius);

/// min of w_A + w_B over the nodal direction grid theta_i = i pi / n (i = 0..n),
/// phi_j = -pi + 2 pi j / n (j < n). Grids nest when n doubles.
double weight_cover_min(int n);

struct LeakageReport {
  std::map<std::string, double> leakage;  // per representation
  double front_psnr = 0.0;
  std::string config_digest;

  std::string to_json() const;
};

/// FNV-1a 64 of the text, as 16 hex digits.
std::string config_digest(const std::string& text);

}  // namespace sphf
