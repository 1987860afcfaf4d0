#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sphf/geometry.hpp"

namespace sphf {

enum class WrapMode { Clamp, Wrap };

struct PlaneShape {
  int height = 0;
  int width = 0;
  int channels = 0;
  WrapMode wrap_u = WrapMode::Clamp;  // along width
  WrapMode wrap_v = WrapMode::Clamp;  // along height

  std::size_t texels() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return texels() * channels; }
};

/// Four texels and their bilinear weights. Texel index is y * width + x.
///
/// Addressing is half-texel centred: u maps to x = u * width - 0.5, so texel i
/// has its centre at u = (i + 0.5) / width. Clamp pins out-of-range indices to
/// the border texel; Wrap takes them modulo the axis length.
struct BilinearTap {
  std::array<int, 4> texel{};
  std::array<double, 4> weight{};
};

BilinearTap bilinear_tap(const PlaneShape& shape, double u, double v);

/// H x W x C grid, channel-minor.
template <typename T>
struct FeaturePlane {
  PlaneShape shape;
  std::vector<T> data;

  FeaturePlane() = default;
  explicit FeaturePlane(PlaneShape s) : shape(s), data(s.size(), T(0)) {}

  T& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels + c]; }
  T at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels + c];
  }
};

// out[c] += sum_k w_k * data[texel_k, c]
template <typename T>
inline void gather_tap(std::span<const T> data, int channels, const BilinearTap& tap, T* out, T scale = T(1)) {
  for (int k = 0; k < 4; ++k) {
    const T w = static_cast<T>(tap.weight[k]) * scale;
    if (w == T(0)) continue;
    const T* texel = data.data() + static_cast<std::size_t>(tap.texel[k]) * channels;
    for (int c = 0; c < channels; ++c) out[c] += w * texel[c];
  }
}

// grad[texel_k, c] += w_k * scale * g[c]
template <typename T>
inline void scatter_tap(std::span<T> grad, int channels, const BilinearTap& tap, const T* g, T scale = T(1)) {
  for (int k = 0; k < 4; ++k) {
    const T w = static_cast<T>(tap.weight[k]) * scale;
    if (w == T(0)) continue;
    T* texel = grad.data() + static_cast<std::size_t>(tap.texel[k]) * channels;
    for (int c = 0; c < channels; ++c) texel[c] += w * g[c];
  }
}

template <typename T>
std::vector<T> sample_bilinear(const FeaturePlane<T>& plane, double u, double v);

// ---------------------------------------------------------------------------
// Spherical tri-plane

struct SphereTaps {
  BilinearTap theta_r;
  BilinearTap phi_r;
  BilinearTap theta_phi;
};

/// uv maps: P_theta_r (theta/pi, r/r_max), P_phi_r ((phi+pi)/2pi, r/r_max),
/// P_theta_phi ((phi+pi)/2pi, theta/pi). r beyond r_max clamps.
SphereTaps sphere_taps(int resolution, WrapMode phi_wrap, const SphericalCoord& s, double r_max);

template <typename T>
struct SpherePlaneSet {
  FeaturePlane<T> theta_r;
  FeaturePlane<T> phi_r;
  FeaturePlane<T> theta_phi;
  WrapMode phi_wrap = WrapMode::Clamp;

  SpherePlaneSet() = default;
  SpherePlaneSet(int resolution, int channels, WrapMode phi_wrap = WrapMode::Clamp);

  int resolution() const { return theta_r.shape.width; }
  int channels() const { return theta_r.shape.channels; }
  SphereTaps taps(const SphericalCoord& s, double r_max) const {
    return sphere_taps(resolution(), phi_wrap, s, r_max);
  }
  void gather(const SphereTaps& t, T* out, T scale = T(1)) const;
  void scatter(const SphereTaps& t, const T* g, T scale = T(1));
};

/// F = F_theta_r + F_phi_r + F_theta_phi
template <typename T>
std::vector<T> sample_sphere_set(const SpherePlaneSet<T>& set, const SphericalCoord& s, double r_max);

// ---------------------------------------------------------------------------
// Cartesian tri-plane and tri-grid baselines

struct CartesianTaps {
  BilinearTap xy;
  BilinearTap xz;
  BilinearTap yz;
};

/// Axis a in [-h, h] maps to (a / h + 1) / 2.
CartesianTaps cartesian_taps(int resolution, const Vec3& p, double half_extent);

template <typename T>
struct CartesianPlaneSet {
  FeaturePlane<T> xy;
  FeaturePlane<T> xz;
  FeaturePlane<T> yz;

  CartesianPlaneSet() = default;
  CartesianPlaneSet(int resolution, int channels);

  int resolution() const { return xy.shape.width; }
  int channels() const { return xy.shape.channels; }
  void gather(const CartesianTaps& t, T* out) const;
  void scatter(const CartesianTaps& t, const T* g);
};

template <typename T>
std::vector<T> sample_cartesian_set(const CartesianPlaneSet<T>& set, const Vec3& p, double half_extent);

/// Bilinear in-plane tap plus linear blend between two neighbouring layers.
struct LayeredTap {
  BilinearTap plane;
  std::array<int, 2> layer{};
  std::array<double, 2> weight{};
};

struct TriGridTaps {
  LayeredTap xy;  // layers along z
  LayeredTap xz;  // layers along y
  LayeredTap yz;  // layers along x
};

/// Layers sit at linspace(-h, h, depth); a single layer ignores depth.
TriGridTaps trigrid_taps(int resolution, int depth, const Vec3& p, double half_extent);

/// Stack of `depth` parallel planes, stored layer-major.
template <typename T>
struct PlaneStack {
  PlaneShape shape;
  int depth = 0;
  std::vector<T> data;

  std::span<const T> layer(int i) const { return {data.data() + i * shape.size(), shape.size()}; }
  std::span<T> layer(int i) { return {data.data() + i * shape.size(), shape.size()}; }
};

template <typename T>
struct TriGridSet {
  PlaneStack<T> xy;
  PlaneStack<T> xz;
  PlaneStack<T> yz;

  TriGridSet() = default;
  TriGridSet(int resolution, int channels, int depth);

  int resolution() const { return xy.shape.width; }
  int channels() const { return xy.shape.channels; }
  int depth() const { return xy.depth; }
  void gather(const TriGridTaps& t, T* out) const;
  void scatter(const TriGridTaps& t, const T* g);
};

template <typename T>
std::vector<T> sample_trigrid(const TriGridSet<T>& set, const Vec3& p, double half_extent);

// ---------------------------------------------------------------------------
// Mirror-pair feature sharing

enum class RepresentationKind { TriPlane, TriGrid, Sphere, DualSphere };

struct LookupGeometry {
  int resolution = 32;
  int depth = 3;               // tri-grid layers
  double half_extent = 0.5;    // Cartesian box
  double r_max = 0.5;          // spherical radius
  WrapMode phi_wrap = WrapMode::Clamp;
};

struct LookupShareReport {
  double overall = 0.0;
  std::vector<std::pair<std::string, double>> per_plane;

  double plane(const std::string& name) const;
};

/// Fraction of plane lookups whose texel footprint (texels with nonzero
/// weight) is identical for both points of a pair. `Sphere` uses the world
/// frame (polar +z); `DualSphere` looks up in frames A and B.
LookupShareReport shared_lookup_fraction(RepresentationKind kind, const LookupGeometry& geometry,
                                         std::span<const std::pair<Vec3, Vec3>> pairs);

}  // namespace sphf
