#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sphf/field.hpp"
#include "sphf/geometry.hpp"

namespace sphf {

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
  double t_near = 0.0;
  double t_far = 0.0;
};

/// Ray through normalized image coordinates (u, v) in [0, 1]^2, v pointing down.
Ray camera_ray(const Camera& camera, double u, double v);

/// One ray per pixel centre, row-major.
std::vector<Ray> generate_rays(const Camera& camera, int width, int height);

/// Entry/exit distances of the ray against the origin-centred sphere.
std::optional<std::pair<double, double>> ray_sphere_bounds(const Ray& ray, double radius);

struct RenderSettings {
  int n_samples = 48;
  bool stratified = true;
  std::uint64_t seed = 0;
  double scene_radius = kDefaultSceneRadius;
  std::array<double, 3> background{1.0, 1.0, 1.0};
  /// Logit given to the background class where the ray is not fully opaque.
  double background_logit = 10.0;
  int threads = 1;
  /// Fixed-size ray chunks reduced in order, independent of the thread count.
  bool deterministic = true;
};

template <typename T>
struct RayResult {
  std::array<T, 3> rgb{};
  T alpha = T(0);
  std::array<T, kParsingClasses> logits{};
  T depth = T(0);
};

template <typename T>
struct RayGrad {
  std::array<T, 3> rgb{};
  T alpha = T(0);
  std::array<T, kParsingClasses> logits{};
};

/// Per-ray sample positions: stratified bins of equal width over [t_near, t_far].
struct RaySampling {
  std::vector<double> t;
  double delta = 0.0;
};

RaySampling sample_ray(const Ray& ray, int n_samples, bool stratified, std::uint64_t seed, std::uint64_t ray_id);

/// Emission-absorption quadrature: alpha_i = 1 - exp(-sigma_i delta), T_i = prod_{j<i}(1 - alpha_j).
/// rgb and logits blend the background with weight (1 - sum_i T_i alpha_i).
template <typename T>
RayResult<T> composite(std::span<const FieldSample<T>> samples, const RaySampling& sampling,
                       const RenderSettings& settings);

/// Vector-Jacobian product of composite() with respect to each sample.
template <typename T>
void composite_backward(std::span<const FieldSample<T>> samples, const RaySampling& sampling,
                        const RenderSettings& settings, const RayGrad<T>& grad, std::span<FieldSample<T>> d_samples);

/// ray_ids seed the per-ray jitter streams; empty means the ray's index.
template <typename T>
std::vector<RayResult<T>> render_rays(const RadianceField<T>& field, Branch branch, std::span<const Ray> rays,
                                      const RenderSettings& settings, std::span<const std::uint64_t> ray_ids = {});

/// Re-renders each ray with caching, asks `grad_of` for d(loss)/d(ray output) and
/// accumulates parameter gradients into `grad_field` (from field.zeros_like()).
template <typename T>
using RayGradFn = std::function<RayGrad<T>(std::size_t ray_index, const RayResult<T>& result)>;

template <typename T>
void backprop_rays(const RadianceField<T>& field, Branch branch, std::span<const Ray> rays,
                   const RenderSettings& settings, const RayGradFn<T>& grad_of, RadianceField<T>& grad_field,
                   std::span<const std::uint64_t> ray_ids = {});

template <typename T>
struct RenderOutput {
  int width = 0;
  int height = 0;
  std::vector<T> rgb;      // H x W x 3
  std::vector<T> alpha;    // H x W
  std::vector<T> logits;   // H x W x K, composited
  std::vector<T> parsing;  // H x W x K, softmax of logits
  std::vector<T> depth;    // H x W, expected t over the opaque part

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
};

template <typename T>
RenderOutput<T> render_image(const RadianceField<T>& field, Branch branch, const Camera& camera, int width, int height,
                             const RenderSettings& settings);

template <typename T>
std::array<T, kParsingClasses> softmax(const std::array<T, kParsingClasses>& logits);

}  // namespace sphf
