#include "sphf/planes.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace sphf {

namespace {

int resolve(int i, int n, WrapMode mode) {
  if (mode == WrapMode::Wrap) {
    const int m = i % n;
    return m < 0 ? m + n : m;
  }
  return std::clamp(i, 0, n - 1);
}

PlaneShape square(int resolution, int channels, WrapMode wu, WrapMode wv) {
  if (resolution < 2) throw std::invalid_argument("plane resolution must be >= 2");
  if (channels < 1) throw std::invalid_argument("plane channels must be >= 1");
  return {resolution, resolution, channels, wu, wv};
}

double unit(double a, double h) { return (a / h + 1.0) * 0.5; }

}  // namespace

BilinearTap bilinear_tap(const PlaneShape& shape, double u, double v) {
  const double x = u * shape.width - 0.5;
  const double y = v * shape.height - 0.5;
  const double xf = std::floor(x);
  const double yf = std::floor(y);
  const double fx = x - xf;
  const double fy = y - yf;
  const int x0 = resolve(static_cast<int>(xf), shape.width, shape.wrap_u);
  const int x1 = resolve(static_cast<int>(xf) + 1, shape.width, shape.wrap_u);
  const int y0 = resolve(static_cast<int>(yf), shape.height, shape.wrap_v);
  const int y1 = resolve(static_cast<int>(yf) + 1, shape.height, shape.wrap_v);

  BilinearTap tap;
  tap.texel = {y0 * shape.width + x0, y0 * shape.width + x1, y1 * shape.width + x0, y1 * shape.width + x1};
  tap.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  return tap;
}

template <typename T>
std::vector<T> sample_bilinear(const FeaturePlane<T>& plane, double u, double v) {
  std::vector<T> out(plane.shape.channels, T(0));
  gather_tap<T>(plane.data, plane.shape.channels, bilinear_tap(plane.shape, u, v), out.data());
  return out;
}

// ---------------------------------------------------------------------------

SphereTaps sphere_taps(int resolution, WrapMode phi_wrap, const SphericalCoord& s, double r_max) {
  const PlaneShape theta_r{resolution, resolution, 1, WrapMode::Clamp, WrapMode::Clamp};
  const PlaneShape phi_r{resolution, resolution, 1, phi_wrap, WrapMode::Clamp};
  const PlaneShape theta_phi{resolution, resolution, 1, phi_wrap, WrapMode::Clamp};
  const double ur = std::min(s.r / r_max, 1.0);
  const double ut = s.theta / kPi;
  const double up = (s.phi + kPi) / (2.0 * kPi);
  return {bilinear_tap(theta_r, ut, ur), bilinear_tap(phi_r, up, ur), bilinear_tap(theta_phi, up, ut)};
}

template <typename T>
SpherePlaneSet<T>::SpherePlaneSet(int resolution, int channels, WrapMode wrap)
    : theta_r(square(resolution, channels, WrapMode::Clamp, WrapMode::Clamp)),
      phi_r(square(resolution, channels, wrap, WrapMode::Clamp)),
      theta_phi(square(resolution, channels, wrap, WrapMode::Clamp)),
      phi_wrap(wrap) {}

template <typename T>
void SpherePlaneSet<T>::gather(const SphereTaps& t, T* out, T scale) const {
  const int c = channels();
  gather_tap<T>(theta_r.data, c, t.theta_r, out, scale);
  gather_tap<T>(phi_r.data, c, t.phi_r, out, scale);
  gather_tap<T>(theta_phi.data, c, t.theta_phi, out, scale);
}

template <typename T>
void SpherePlaneSet<T>::scatter(const SphereTaps& t, const T* g, T scale) {
  const int c = channels();
  scatter_tap<T>(theta_r.data, c, t.theta_r, g, scale);
  scatter_tap<T>(phi_r.data, c, t.phi_r, g, scale);
  scatter_tap<T>(theta_phi.data, c, t.theta_phi, g, scale);
}

template <typename T>
std::vector<T> sample_sphere_set(const SpherePlaneSet<T>& set, const SphericalCoord& s, double r_max) {
  std::vector<T> out(set.channels(), T(0));
  set.gather(set.taps(s, r_max), out.data());
  return out;
}

// ---------------------------------------------------------------------------

CartesianTaps cartesian_taps(int resolution, const Vec3& p, double h) {
  const PlaneShape shape{resolution, resolution, 1, WrapMode::Clamp, WrapMode::Clamp};
  const double ux = unit(p.x, h), uy = unit(p.y, h), uz = unit(p.z, h);
  return {bilinear_tap(shape, ux, uy), bilinear_tap(shape, ux, uz), bilinear_tap(shape, uy, uz)};
}

template <typename T>
CartesianPlaneSet<T>::CartesianPlaneSet(int resolution, int channels)
    : xy(square(resolution, channels, WrapMode::Clamp, WrapMode::Clamp)),
      xz(square(resolution, channels, WrapMode::Clamp, WrapMode::Clamp)),
      yz(square(resolution, channels, WrapMode::Clamp, WrapMode::Clamp)) {}

template <typename T>
void CartesianPlaneSet<T>::gather(const CartesianTaps& t, T* out) const {
  const int c = channels();
  gather_tap<T>(xy.data, c, t.xy, out);
  gather_tap<T>(xz.data, c, t.xz, out);
  gather_tap<T>(yz.data, c, t.yz, out);
}

template <typename T>
void CartesianPlaneSet<T>::scatter(const CartesianTaps& t, const T* g) {
  const int c = channels();
  scatter_tap<T>(xy.data, c, t.xy, g);
  scatter_tap<T>(xz.data, c, t.xz, g);
  scatter_tap<T>(yz.data, c, t.yz, g);
}

template <typename T>
std::vector<T> sample_cartesian_set(const CartesianPlaneSet<T>& set, const Vec3& p, double half_extent) {
  std::vector<T> out(set.channels(), T(0));
  set.gather(cartesian_taps(set.resolution(), p, half_extent), out.data());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

LayeredTap layered(const PlaneShape& shape, int depth, double u, double v, double w) {
  LayeredTap t;
  t.plane = bilinear_tap(shape, u, v);
  if (depth == 1) {
    t.layer = {0, 0};
    t.weight = {1.0, 0.0};
    return t;
  }
  const double d = std::clamp(w, 0.0, 1.0) * (depth - 1);
  const int d0 = std::min(static_cast<int>(std::floor(d)), depth - 2);
  const double f = d - d0;
  t.layer = {d0, d0 + 1};
  t.weight = {1.0 - f, f};
  return t;
}

template <typename T>
void gather_layered(const PlaneStack<T>& stack, const LayeredTap& t, T* out) {
  for (int k = 0; k < 2; ++k) {
    if (t.weight[k] == 0.0) continue;
    gather_tap<T>(stack.layer(t.layer[k]), stack.shape.channels, t.plane, out, static_cast<T>(t.weight[k]));
  }
}

template <typename T>
void scatter_layered(PlaneStack<T>& stack, const LayeredTap& t, const T* g) {
  for (int k = 0; k < 2; ++k) {
    if (t.weight[k] == 0.0) continue;
    scatter_tap<T>(stack.layer(t.layer[k]), stack.shape.channels, t.plane, g, static_cast<T>(t.weight[k]));
  }
}

template <typename T>
PlaneStack<T> make_stack(int resolution, int channels, int depth) {
  if (depth < 1) throw std::invalid_argument("tri-grid depth must be >= 1");
  PlaneStack<T> s;
  s.shape = square(resolution, channels, WrapMode::Clamp, WrapMode::Clamp);
  s.depth = depth;
  s.data.assign(s.shape.size() * depth, T(0));
  return s;
}

}  // namespace

TriGridTaps trigrid_taps(int resolution, int depth, const Vec3& p, double h) {
  const PlaneShape shape{resolution, resolution, 1, WrapMode::Clamp, WrapMode::Clamp};
  const double ux = unit(p.x, h), uy = unit(p.y, h), uz = unit(p.z, h);
  return {layered(shape, depth, ux, uy, uz), layered(shape, depth, ux, uz, uy), layered(shape, depth, uy, uz, ux)};
}

template <typename T>
TriGridSet<T>::TriGridSet(int resolution, int channels, int depth)
    : xy(make_stack<T>(resolution, channels, depth)),
      xz(make_stack<T>(resolution, channels, depth)),
      yz(make_stack<T>(resolution, channels, depth)) {}

template <typename T>
void TriGridSet<T>::gather(const TriGridTaps& t, T* out) const {
  gather_layered(xy, t.xy, out);
  gather_layered(xz, t.xz, out);
  gather_layered(yz, t.yz, out);
}

template <typename T>
void TriGridSet<T>::scatter(const TriGridTaps& t, const T* g) {
  scatter_layered(xy, t.xy, g);
  scatter_layered(xz, t.xz, g);
  scatter_layered(yz, t.yz, g);
}

template <typename T>
std::vector<T> sample_trigrid(const TriGridSet<T>& set, const Vec3& p, double half_extent) {
  std::vector<T> out(set.channels(), T(0));
  set.gather(trigrid_taps(set.resolution(), set.depth(), p, half_extent), out.data());
  return out;
}

// ---------------------------------------------------------------------------

double LookupShareReport::plane(const std::string& name) const {
  for (const auto& [n, v] : per_plane)
    if (n == name) return v;
  throw std::out_of_range("no plane named " + name);
}

namespace {

using Footprint = std::set<std::int64_t>;

Footprint footprint(const BilinearTap& t, int layer = 0, double layer_weight = 1.0) {
  Footprint f;
  for (int k = 0; k < 4; ++k)
    if (t.weight[k] * layer_weight != 0.0) f.insert((static_cast<std::int64_t>(layer) << 32) | t.texel[k]);
  return f;
}

Footprint footprint(const LayeredTap& t) {
  Footprint f;
  for (int k = 0; k < 2; ++k) {
    const Footprint part = footprint(t.plane, t.layer[k], t.weight[k]);
    f.insert(part.begin(), part.end());
  }
  return f;
}

std::vector<std::pair<std::string, Footprint>> lookups(RepresentationKind kind, const LookupGeometry& g,
                                                       const Vec3& p) {
  std::vector<std::pair<std::string, Footprint>> out;
  auto add_sphere = [&](const std::string& prefix, const SphericalCoord& s) {
    const SphereTaps t = sphere_taps(g.resolution, g.phi_wrap, s, g.r_max);
    out.emplace_back(prefix + "theta_r", footprint(t.theta_r));
    out.emplace_back(prefix + "phi_r", footprint(t.phi_r));
    out.emplace_back(prefix + "theta_phi", footprint(t.theta_phi));
  };
  switch (kind) {
    case RepresentationKind::TriPlane: {
      const CartesianTaps t = cartesian_taps(g.resolution, p, g.half_extent);
      out.emplace_back("xy", footprint(t.xy));
      out.emplace_back("xz", footprint(t.xz));
      out.emplace_back("yz", footprint(t.yz));
      break;
    }
    case RepresentationKind::TriGrid: {
      const TriGridTaps t = trigrid_taps(g.resolution, g.depth, p, g.half_extent);
      out.emplace_back("xy", footprint(t.xy));
      out.emplace_back("xz", footprint(t.xz));
      out.emplace_back("yz", footprint(t.yz));
      break;
    }
    case RepresentationKind::Sphere:
      add_sphere("", cart_to_sph(p));
      break;
    case RepresentationKind::DualSphere:
      add_sphere("a.", frame_coords(SphereFrame::a(), p));
      add_sphere("b.", frame_coords(SphereFrame::b(), p));
      break;
  }
  return out;
}

}  // namespace

LookupShareReport shared_lookup_fraction(RepresentationKind kind, const LookupGeometry& geometry,
                                         std::span<const std::pair<Vec3, Vec3>> pairs) {
  LookupShareReport report;
  if (pairs.empty()) return report;
  std::vector<std::size_t> shared;
  std::size_t total_shared = 0;
  std::size_t total = 0;
  for (const auto& [p, q] : pairs) {
    const auto lp = lookups(kind, geometry, p);
    const auto lq = lookups(kind, geometry, q);
    if (report.per_plane.empty()) {
      for (const auto& [name, _] : lp) report.per_plane.emplace_back(name, 0.0);
      shared.assign(lp.size(), 0);
    }
    for (std::size_t i = 0; i < lp.size(); ++i) {
      const bool same = lp[i].second == lq[i].second;
      shared[i] += same;
      total_shared += same;
      ++total;
    }
  }
  for (std::size_t i = 0; i < shared.size(); ++i)
    report.per_plane[i].second = static_cast<double>(shared[i]) / static_cast<double>(pairs.size());
  report.overall = static_cast<double>(total_shared) / static_cast<double>(total);
  return report;
}

template std::vector<float> sample_bilinear(const FeaturePlane<float>&, double, double);
template std::vector<double> sample_bilinear(const FeaturePlane<double>&, double, double);
template struct SpherePlaneSet<float>;
template struct SpherePlaneSet<double>;
template std::vector<float> sample_sphere_set(const SpherePlaneSet<float>&, const SphericalCoord&, double);
template std::vector<double> sample_sphere_set(const SpherePlaneSet<double>&, const SphericalCoord&, double);
template struct CartesianPlaneSet<float>;
template struct CartesianPlaneSet<double>;
template std::vector<float> sample_cartesian_set(const CartesianPlaneSet<float>&, const Vec3&, double);
template std::vector<double> sample_cartesian_set(const CartesianPlaneSet<double>&, const Vec3&, double);
template struct TriGridSet<float>;
template struct TriGridSet<double>;
template std::vector<float> sample_trigrid(const TriGridSet<float>&, const Vec3&, double);
template std::vector<double> sample_trigrid(const TriGridSet<double>&, const Vec3&, double);

}  // namespace sphf
