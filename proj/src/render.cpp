#include "sphf/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "sphf/parallel.hpp"
#include "sphf/rng.hpp"

namespace sphf {

Ray camera_ray(const Camera& camera, double u, double v) {
  const CameraIntrinsics& k = camera.intrinsics;
  // Camera looks down -z with +y up; image v grows downwards.
  const Vec3 local{(u - k.cx()) / k.fx(), -(v - k.cy()) / k.fy(), -1.0};
  const Mat3 cam_to_world = camera.pose.rotation().transposed();
  Ray ray;
  ray.origin = camera.pose.center();
  ray.direction = normalized(cam_to_world * local);
  return ray;
}

std::vector<Ray> generate_rays(const Camera& camera, int width, int height) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) rays.push_back(camera_ray(camera, (x + 0.5) / width, (y + 0.5) / height));
  return rays;
}

std::optional<std::pair<double, double>> ray_sphere_bounds(const Ray& ray, double radius) {
  const double b = dot(ray.origin, ray.direction);
  const double c = dot(ray.origin, ray.origin) - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  return std::make_pair(std::max(0.0, -b - s), -b + s);
}

RaySampling sample_ray(const Ray& ray, int n_samples, bool stratified, std::uint64_t seed, std::uint64_t ray_id) {
  RaySampling s;
  s.t.resize(n_samples);
  s.delta = (ray.t_far - ray.t_near) / n_samples;
  for (int i = 0; i < n_samples; ++i) {
    const double jitter = stratified ? uniform01(seed, ray_id, static_cast<std::uint64_t>(i)) : 0.5;
    s.t[i] = ray.t_near + (i + jitter) * s.delta;
  }
  return s;
}

template <typename T>
std::array<T, kParsingClasses> softmax(const std::array<T, kParsingClasses>& logits) {
  const T m = *std::max_element(logits.begin(), logits.end());
  std::array<T, kParsingClasses> p;
  T sum = T(0);
  for (int k = 0; k < kParsingClasses; ++k) sum += p[k] = std::exp(logits[k] - m);
  for (auto& v : p) v /= sum;
  return p;
}

namespace {

template <typename T>
std::array<T, kParsingClasses> background_logits(const RenderSettings& settings) {
  std::array<T, kParsingClasses> l{};
  l[0] = static_cast<T>(settings.background_logit);
  return l;
}

template <typename T>
RayResult<T> background_result(const RenderSettings& settings, double t_far) {
  RayResult<T> r;
  for (int c = 0; c < 3; ++c) r.rgb[c] = static_cast<T>(settings.background[c]);
  r.logits = background_logits<T>(settings);
  r.depth = static_cast<T>(t_far);
  return r;
}

}  // namespace

template <typename T>
RayResult<T> composite(std::span<const FieldSample<T>> samples, const RaySampling& sampling,
                       const RenderSettings& settings) {
  RayResult<T> r;
  const T delta = static_cast<T>(sampling.delta);
  T transmittance = T(1);
  T depth = T(0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FieldSample<T>& s = samples[i];
    const T a = T(1) - std::exp(-s.density * delta);
    const T w = transmittance * a;
    for (int c = 0; c < 3; ++c) r.rgb[c] += w * s.color[c];
    for (int k = 0; k < kParsingClasses; ++k) r.logits[k] += w * s.parsing_logits[k];
    r.alpha += w;
    depth += w * static_cast<T>(sampling.t[i]);
    transmittance *= T(1) - a;
  }
  const T rest = T(1) - r.alpha;
  const auto bg_logits = background_logits<T>(settings);
  for (int c = 0; c < 3; ++c) r.rgb[c] += rest * static_cast<T>(settings.background[c]);
  for (int k = 0; k < kParsingClasses; ++k) r.logits[k] += rest * bg_logits[k];
  r.depth = r.alpha > T(1e-6) ? depth / r.alpha : static_cast<T>(sampling.t.empty() ? 0.0 : sampling.t.back());
  return r;
}

template <typename T>
void composite_backward(std::span<const FieldSample<T>> samples, const RaySampling& sampling,
                        const RenderSettings& settings, const RayGrad<T>& g, std::span<FieldSample<T>> d_samples) {
  const std::size_t n = samples.size();
  const T delta = static_cast<T>(sampling.delta);
  const auto bg_logits = background_logits<T>(settings);

  // d(loss)/d(w_i) where w_i = T_i alpha_i; the background term contributes -1 per weight.
  T bg_term = g.alpha;
  for (int c = 0; c < 3; ++c) bg_term -= g.rgb[c] * static_cast<T>(settings.background[c]);
  for (int k = 0; k < kParsingClasses; ++k) bg_term -= g.logits[k] * bg_logits[k];

  thread_local std::vector<T> alpha, trans, effect;
  alpha.resize(n);
  trans.resize(n);
  effect.resize(n);
  T t = T(1);
  for (std::size_t i = 0; i < n; ++i) {
    alpha[i] = T(1) - std::exp(-samples[i].density * delta);
    trans[i] = t;
    T e = bg_term;
    for (int c = 0; c < 3; ++c) e += g.rgb[c] * samples[i].color[c];
    for (int k = 0; k < kParsingClasses; ++k) e += g.logits[k] * samples[i].parsing_logits[k];
    effect[i] = e;
    t *= T(1) - alpha[i];
  }

  // suffix = sum_{i>k} e_i alpha_i prod_{k<j<i} (1 - alpha_j)
  T suffix = T(0);
  for (std::size_t k = n; k-- > 0;) {
    const T w = trans[k] * alpha[k];
    FieldSample<T>& d = d_samples[k];
    d.density = trans[k] * (effect[k] - suffix) * delta * (T(1) - alpha[k]);
    for (int c = 0; c < 3; ++c) d.color[c] = w * g.rgb[c];
    for (int j = 0; j < kParsingClasses; ++j) d.parsing_logits[j] = w * g.logits[j];
    suffix = effect[k] * alpha[k] + (T(1) - alpha[k]) * suffix;
  }
}

namespace {

template <typename T>
struct RayWorker {
  std::unique_ptr<FieldWorkspace> workspace;
  std::vector<Vec3> points;
  std::vector<FieldSample<T>> samples;
  std::vector<FieldSample<T>> d_samples;

  RayWorker(const RadianceField<T>& field, int n) : workspace(field.make_workspace(n)), points(n), samples(n), d_samples(n) {}

  // Returns false when the ray misses the scene.
  bool march(const RadianceField<T>& field, Branch branch, Ray ray, const RenderSettings& settings,
             std::uint64_t ray_id, RaySampling& sampling, RayResult<T>& result) {
    const auto bounds = ray_sphere_bounds(ray, settings.scene_radius);
    if (!bounds || bounds->second <= bounds->first) {
      result = background_result<T>(settings, bounds ? bounds->second : 0.0);
      return false;
    }
    ray.t_near = bounds->first;
    ray.t_far = bounds->second;
    sampling = sample_ray(ray, settings.n_samples, settings.stratified, settings.seed, ray_id);
    for (int i = 0; i < settings.n_samples; ++i) points[i] = ray.origin + ray.direction * sampling.t[i];
    field.evaluate(points, branch, workspace.get(), samples);
    result = composite<T>(samples, sampling, settings);
    return true;
  }
};

std::uint64_t id_of(std::span<const std::uint64_t> ids, std::size_t i) { return ids.empty() ? i : ids[i]; }

void check_settings(const RenderSettings& s) {
  if (s.n_samples < 2) throw std::invalid_argument("n_samples must be >= 2");
  if (!(s.scene_radius > 0.0)) throw std::invalid_argument("scene radius must be positive");
}

}  // namespace

template <typename T>
std::vector<RayResult<T>> render_rays(const RadianceField<T>& field, Branch branch, std::span<const Ray> rays,
                                      const RenderSettings& settings, std::span<const std::uint64_t> ray_ids) {
  check_settings(settings);
  std::vector<RayResult<T>> out(rays.size());
  parallel_ranges(rays.size(), resolve_threads(settings.threads), [&](int, std::size_t b, std::size_t e) {
    RayWorker<T> worker(field, settings.n_samples);
    RaySampling sampling;
    for (std::size_t i = b; i < e; ++i) worker.march(field, branch, rays[i], settings, id_of(ray_ids, i), sampling, out[i]);
  });
  return out;
}

namespace {

template <typename T>
void add_into(RadianceField<T>& dst, RadianceField<T>& src) {
  auto d = dst.parameters();
  auto s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d[i].data.size(); ++j) d[i].data[j] += s[i].data[j];
}

template <typename T>
void zero(RadianceField<T>& f) {
  for (auto& p : f.parameters()) std::fill(p.data.begin(), p.data.end(), T(0));
}

}  // namespace

template <typename T>
void backprop_rays(const RadianceField<T>& field, Branch branch, std::span<const Ray> rays,
                   const RenderSettings& settings, const RayGradFn<T>& grad_of, RadianceField<T>& grad_field,
                   std::span<const std::uint64_t> ray_ids) {
  check_settings(settings);
  if (!field.differentiable()) throw NotDifferentiable(field.kind() + " field has no vector-Jacobian rule");

  auto run = [&](std::size_t b, std::size_t e, RadianceField<T>& grads) {
    RayWorker<T> worker(field, settings.n_samples);
    RaySampling sampling;
    RayResult<T> result;
    for (std::size_t i = b; i < e; ++i) {
      const bool hit = worker.march(field, branch, rays[i], settings, id_of(ray_ids, i), sampling, result);
      const RayGrad<T> g = grad_of(i, result);
      if (!hit) continue;
      composite_backward<T>(worker.samples, sampling, settings, g, worker.d_samples);
      field.backward(worker.points, branch, *worker.workspace, worker.d_samples, grads);
    }
  };

  const int threads = resolve_threads(settings.threads);
  if (!settings.deterministic) {
    if (threads == 1) {
      run(0, rays.size(), grad_field);
      return;
    }
    std::vector<std::unique_ptr<RadianceField<T>>> partial(threads);
    for (auto& p : partial) p = field.zeros_like();
    parallel_ranges(rays.size(), threads, [&](int w, std::size_t b, std::size_t e) { run(b, e, *partial[w]); });
    for (auto& p : partial) add_into(grad_field, *p);
    return;
  }

  // Fixed 64-ray chunks, summed in chunk order.
  constexpr std::size_t kChunk = 64;
  const std::size_t n_chunks = (rays.size() + kChunk - 1) / kChunk;
  std::vector<std::unique_ptr<RadianceField<T>>> partial(std::min<std::size_t>(threads, n_chunks));
  for (auto& p : partial) p = field.zeros_like();
  for (std::size_t wave = 0; wave < n_chunks; wave += partial.size()) {
    const std::size_t count = std::min(partial.size(), n_chunks - wave);
    parallel_ranges(count, static_cast<int>(count), [&](int, std::size_t b, std::size_t e) {
      for (std::size_t c = b; c < e; ++c) {
        zero(*partial[c]);
        const std::size_t chunk = wave + c;
        run(chunk * kChunk, std::min(rays.size(), (chunk + 1) * kChunk), *partial[c]);
      }
    });
    for (std::size_t c = 0; c < count; ++c) add_into(grad_field, *partial[c]);
  }
}

template <typename T>
RenderOutput<T> render_image(const RadianceField<T>& field, Branch branch, const Camera& camera, int width, int height,
                             const RenderSettings& settings) {
  if (width < 1 || height < 1) throw std::invalid_argument("image size must be positive");
  const auto rays = generate_rays(camera, width, height);
  const auto results = render_rays<T>(field, branch, rays, settings);
  RenderOutput<T> out;
  out.width = width;
  out.height = height;
  const std::size_t n = out.pixels();
  out.rgb.resize(n * 3);
  out.alpha.resize(n);
  out.logits.resize(n * kParsingClasses);
  out.parsing.resize(n * kParsingClasses);
  out.depth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const RayResult<T>& r = results[i];
    for (int c = 0; c < 3; ++c) out.rgb[i * 3 + c] = r.rgb[c];
    out.alpha[i] = r.alpha;
    const auto p = softmax<T>(r.logits);
    for (int k = 0; k < kParsingClasses; ++k) {
      out.logits[i * kParsingClasses + k] = r.logits[k];
      out.parsing[i * kParsingClasses + k] = p[k];
    }
    out.depth[i] = r.depth;
  }
  return out;
}

#define SPHF_INSTANTIATE(T)                                                                                         \
  template std::array<T, kParsingClasses> softmax<T>(const std::array<T, kParsingClasses>&);                        \
  template RayResult<T> composite<T>(std::span<const FieldSample<T>>, const RaySampling&, const RenderSettings&);  \
  template void composite_backward<T>(std::span<const FieldSample<T>>, const RaySampling&, const RenderSettings&,  \
                                      const RayGrad<T>&, std::span<FieldSample<T>>);                                \
  template std::vector<RayResult<T>> render_rays<T>(const RadianceField<T>&, Branch, std::span<const Ray>,          \
                                                    const RenderSettings&, std::span<const std::uint64_t>);         \
  template void backprop_rays<T>(const RadianceField<T>&, Branch, std::span<const Ray>, const RenderSettings&,      \
                                 const RayGradFn<T>&, RadianceField<T>&, std::span<const std::uint64_t>);           \
  template RenderOutput<T> render_image<T>(const RadianceField<T>&, Branch, const Camera&, int, int,                \
                                           const RenderSettings&);

SPHF_INSTANTIATE(float)
SPHF_INSTANTIATE(double)
#undef SPHF_INSTANTIATE

}  // namespace sphf
