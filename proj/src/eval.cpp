#include "sphf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "sphf/rng.hpp"
#include "json.hpp"

namespace sphf {

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument("psnr: image shapes differ");
  if (a.data.empty()) throw std::invalid_argument("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  if (se == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(static_cast<double>(a.data.size()) / se);
}

template <typename T>
Image rgb_image(const RenderOutput<T>& r) {
  Image img(r.width, r.height, 3);
  for (std::size_t i = 0; i < r.rgb.size(); ++i) img.data[i] = static_cast<float>(r.rgb[i]);
  return img;
}

template <typename T>
Image alpha_image(const RenderOutput<T>& r) {
  Image img(r.width, r.height, 1);
  for (std::size_t i = 0; i < r.alpha.size(); ++i) img.data[i] = static_cast<float>(r.alpha[i]);
  return img;
}

double masked_pearson(const Image& a, const Image& b, const Image& mask) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels || mask.width != a.width ||
      mask.height != a.height || mask.channels != 1)
    throw std::invalid_argument("masked_pearson: shape mismatch");
  const int c = a.channels;
  double n = 0, sa = 0, sb = 0;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (mask.data[p] <= 0.5f) continue;
    for (int k = 0; k < c; ++k) {
      sa += a.data[p * c + k];
      sb += b.data[p * c + k];
    }
    n += c;
  }
  if (n == 0) throw std::invalid_argument("masked_pearson: empty foreground");
  const double ma = sa / n, mb = sb / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (mask.data[p] <= 0.5f) continue;
    for (int k = 0; k < c; ++k) {
      const double da = a.data[p * c + k] - ma, db = b.data[p * c + k] - mb;
      cov += da * db;
      va += da * da;
      vb += db * db;
    }
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

template <typename T>
double mirror_leakage(const RadianceField<T>& field, Branch branch, const SyntheticHeadScene& scene,
                      const Camera& front, const Camera& back, int resolution, const RenderSettings& settings) {
  const double gap = std::remainder(yaw_of(back.pose.center()) - yaw_of(front.pose.center()) - kPi, 2 * kPi);
  if (std::abs(gap) > 1e-6) throw std::invalid_argument("mirror_leakage: cameras are not antipodal in yaw");

  const auto front_oracle = oracle_render(scene, front, resolution, resolution, 1);
  const auto back_oracle = oracle_render(scene, back, resolution, resolution, 1);
  Image mask = back_oracle.mask;
  const Image front_mask = mirror_horizontal(front_oracle.mask);
  for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = std::min(mask.data[i], front_mask.data[i]);

  const Image f = mirror_horizontal(rgb_image(render_image(field, branch, front, resolution, resolution, settings)));
  const Image b = rgb_image(render_image(field, branch, back, resolution, resolution, settings));
  return masked_pearson(b, f, mask);
}

namespace {

Vec3 frame_point(const SphereFrame& frame, double r, double theta, double phi) {
  return frame.rotation.transposed() * sph_to_cart({r, theta, phi});
}

// Jumps below a few ulps of the feature magnitude are interpolation rounding and count as 0.
template <typename T>
double jump(const NeuralField<T>& field, Branch branch, const Vec3& p, const Vec3& q) {
  const auto a = field.query(p, branch), b = field.query(q, branch);
  double s = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
    scale = std::max({scale, std::abs(static_cast<double>(a[i])), std::abs(static_cast<double>(b[i]))});
  }
  const double floor = 64.0 * std::numeric_limits<T>::epsilon() * scale * std::sqrt(static_cast<double>(a.size()));
  return std::sqrt(s) <= floor ? 0.0 : std::sqrt(s);
}

}  // namespace

template <typename T>
SeamReport seam_discontinuity(const NeuralField<T>& field, Branch branch, int probes, double delta, std::uint64_t seed,
                              double r_max) {
  if (probes < 2) throw std::invalid_argument("seam_discontinuity: need at least 2 probes");
  if (!(delta > 0.0 && delta < 0.1)) throw std::invalid_argument("seam_discontinuity: delta must be in (0, 0.1)");
  std::vector<double> seam(probes), interior(probes);
  for (int i = 0; i < probes; ++i) {
    const SphereFrame frame = SphereFrame::of(i % 2 ? FrameId::B : FrameId::A);
    const double r = r_max * (0.2 + 0.7 * uniform01(seed, i, 0));
    // Keep away from the poles, where every phi meets.
    const double theta = kPi * (0.15 + 0.7 * uniform01(seed, i, 1));
    // Interior pairs sit just inside the seam, so both jumps see the same local parameterization.
    const double kappa = 0.1 + 0.4 * uniform01(seed, i, 2);
    const double phi = uniform01(seed, i, 3) < 0.5 ? kPi - kappa : kappa - kPi;
    seam[i] = jump(field, branch, frame_point(frame, r, theta, kPi - delta / 2),
                   frame_point(frame, r, theta, -kPi + delta / 2));
    interior[i] = jump(field, branch, frame_point(frame, r, theta, phi - delta / 2),
                       frame_point(frame, r, theta, phi + delta / 2));
  }
  SeamReport rep;
  rep.seam_max = *std::max_element(seam.begin(), seam.end());
  std::nth_element(interior.begin(), interior.begin() + probes / 2, interior.end());
  rep.interior_median = interior[probes / 2];
  if (rep.interior_median > 0.0) rep.normalized = rep.seam_max / rep.interior_median;
  else rep.normalized = rep.seam_max > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return rep;
}

double weight_cover_min(int n) {
  if (n < 64) throw std::invalid_argument("weight_cover_min: grid must be at least 64");
  const SphereFrame fa = SphereFrame::a(), fb = SphereFrame::b();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    const double theta = kPi * i / n;
    for (int j = 0; j < n; ++j) {
      const Vec3 d = sph_to_cart({1.0, theta, -kPi + 2 * kPi * j / n});
      const auto a = frame_coords(fa, d), b = frame_coords(fb, d);
      best = std::min(best, fusion_weight(a.theta, a.phi) + fusion_weight(b.theta, b.phi));
    }
  }
  return best;
}

std::string LeakageReport::to_json() const {
  nlohmann::ordered_json j;
  j["leakage"] = leakage;
  j["front_psnr"] = front_psnr;
  j["config_digest"] = config_digest;
  return j.dump(2);
}

std::string config_digest(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

#define SPHF_INSTANTIATE(T)                                                                                        \
  template Image rgb_image<T>(const RenderOutput<T>&);                                                             \
  template Image alpha_image<T>(const RenderOutput<T>&);                                                           \
  template double mirror_leakage<T>(const RadianceField<T>&, Branch, const SyntheticHeadScene&, const Camera&,     \
                                    const Camera&, int, const RenderSettings&);                                    \
  template SeamReport seam_discontinuity<T>(const NeuralField<T>&, Branch, int, double, std::uint64_t, double);
SPHF_INSTANTIATE(float)
SPHF_INSTANTIATE(double)
#undef SPHF_INSTANTIATE

}  // namespace sphf
