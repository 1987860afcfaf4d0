#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>

#include "sphf/optim.hpp"

namespace sphf {

namespace {

using Rng = std::mt19937_64;

std::vector<double> normals(Rng& rng, std::size_t n, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> out(n);
  for (auto& v : out) v = d(rng);
  return out;
}

Vec3 random_point(Rng& rng, double radius) {
  std::uniform_real_distribution<double> d(-radius, radius);
  for (;;) {
    const Vec3 p{d(rng), d(rng), d(rng)};
    if (norm(p) < radius) return p;
  }
}

template <typename T>
std::vector<T> cast(std::span<const double> x) {
  return std::vector<T>(x.begin(), x.end());
}

template <typename T>
double dot_accum(std::span<const T> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

template <typename T>
void write_params(RadianceField<T>& field, std::span<const double> x) {
  std::size_t k = 0;
  for (auto& p : field.parameters())
    for (auto& v : p.data) v = static_cast<T>(x[k++]);
}

template <typename T>
void read_params(RadianceField<T>& field, std::vector<double>& out) {
  out.clear();
  for (auto& p : field.parameters())
    for (auto v : p.data) out.push_back(static_cast<double>(v));
}

class Problem {
 public:
  virtual ~Problem() = default;
  std::vector<double> x0;
  virtual double eval_f64(std::span<const double> x, std::vector<double>* grad) const = 0;
  virtual double eval_f32(std::span<const double> x, std::vector<double>* grad) const = 0;
};

template <class Impl>
class ProblemOf final : public Problem {
 public:
  explicit ProblemOf(Impl i) : impl(std::move(i)) { x0 = impl.x0; }
  double eval_f64(std::span<const double> x, std::vector<double>* g) const override {
    return impl.template eval<double>(x, g);
  }
  double eval_f32(std::span<const double> x, std::vector<double>* g) const override {
    return impl.template eval<float>(x, g);
  }
  Impl impl;
};

template <class Impl>
std::unique_ptr<Problem> make(Impl i) {
  return std::make_unique<ProblemOf<Impl>>(std::move(i));
}

// y = W x + b, L = <g, y>; x0 = [W, b, x].
struct LinearOp {
  int in = 7, out = 5;
  std::vector<double> g, x0;
  explicit LinearOp(Rng& rng) : g(normals(rng, out)), x0(normals(rng, out * in + out + in)) {}

  template <typename T>
  double eval(std::span<const double> x, std::vector<double>* grad) const {
    std::vector<T> w(x.begin(), x.begin() + out * in), b(x.begin() + out * in, x.begin() + out * in + out);
    const std::vector<T> v(x.begin() + out * in + out, x.end());
    std::vector<T> y(out);
    affine(w, b, v.data(), in, out, y.data());
    if (grad) {
      std::vector<T> dw(w.size(), T(0)), db(b.size(), T(0)), dx(in), dy = cast<T>(g);
      affine_backward(w, v.data(), dy.data(), in, out, dw, db, dx.data());
      grad->assign(dw.begin(), dw.end());
      grad->insert(grad->end(), db.begin(), db.end());
      grad->insert(grad->end(), dx.begin(), dx.end());
    }
    return dot_accum<T>(y, g);
  }
};

// Plane samples at random uv (wrapped u), L = <g, samples>; x0 = plane data.
struct BilinearOp {
  PlaneShape shape{5, 7, 3, WrapMode::Wrap, WrapMode::Clamp};
  std::vector<BilinearTap> taps;
  std::vector<double> g, x0;
  explicit BilinearOp(Rng& rng) {
    std::uniform_real_distribution<double> uv(-0.2, 1.2);
    for (int i = 0; i < 8; ++i) taps.push_back(bilinear_tap(shape, uv(rng), uv(rng)));
    g = normals(rng, taps.size() * shape.channels);
    x0 = normals(rng, shape.size());
  }

  template <typename T>
  double eval(std::span<const double> x, std::vector<double>* grad) const {
    const std::vector<T> data = cast<T>(x);
    std::vector<T> out(g.size(), T(0));
    for (std::size_t i = 0; i < taps.size(); ++i) gather_tap<T>(data, shape.channels, taps[i], out.data() + i * 3);
    if (grad) {
      std::vector<T> d(data.size(), T(0)), gg = cast<T>(g);
      for (std::size_t i = 0; i < taps.size(); ++i) scatter_tap<T>(d, shape.channels, taps[i], gg.data() + i * 3);
      grad->assign(d.begin(), d.end());
    }
    return dot_accum<T>(out, g);
  }
};

// Feature lookup through a NeuralField's gather/scatter for each branch; x0 = all field parameters.
template <template <typename> class Make>
struct FeatureOp {
  std::vector<Vec3> points;
  Branch branch;
  std::vector<double> g, x0;
  FeatureOp(Rng& rng, Branch b) : branch(b) {
    auto f = Make<double>::build();
    for (int i = 0; i < 10; ++i) points.push_back(random_point(rng, 0.6));
    g = normals(rng, points.size() * f->channels());
    x0 = normals(rng, 0);
    read_params(*f, x0);
    for (auto& v : x0) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  }

  template <typename T>
  double eval(std::span<const double> x, std::vector<double>* grad) const {
    auto f = Make<T>::build();
    write_params(*f, x);
    const int c = f->channels();
    std::vector<T> out(g.size(), T(0));
    std::vector<typename NeuralField<T>::Taps> taps(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) f->gather_feature(points[i], branch, taps[i], out.data() + i * c);
    if (grad) {
      auto gf = f->zeros_like();
      auto& nf = dynamic_cast<NeuralField<T>&>(*gf);
      const std::vector<T> gg = cast<T>(g);
      for (std::size_t i = 0; i < points.size(); ++i) f->scatter_feature(taps[i], branch, gg.data() + i * c, nf);
      read_params(*gf, *grad);
    }
    return dot_accum<T>(out, g);
  }
};

template <typename T>
struct MakeDual {
  static std::unique_ptr<DualSphereField<T>> build() {
    return std::make_unique<DualSphereField<T>>(6, 3, DecoderShape{3, 4, 4}, 0.5);
  }
};
template <typename T>
struct MakeSingle {
  static std::unique_ptr<SingleSphereField<T>> build() {
    return std::make_unique<SingleSphereField<T>>(6, 3, DecoderShape{3, 4, 4}, 0.5, WrapMode::Wrap);
  }
};
template <typename T>
struct MakeTriPlane {
  static std::unique_ptr<CartesianField<T>> build() {
    return std::make_unique<CartesianField<T>>(BaselineKind::TriPlane, 6, 3, DecoderShape{3, 4, 4}, 0.5);
  }
};
template <typename T>
struct MakeTriGrid {
  static std::unique_ptr<CartesianField<T>> build() {
    return std::make_unique<CartesianField<T>>(BaselineKind::TriGrid, 6, 3, DecoderShape{3, 4, 4}, 0.5, 3);
  }
};

// Decoder + output activations; x0 = [decoder weights, feature].
struct DecoderOp {
  DecoderShape shape{5, 7, 6};
  std::vector<double> g, x0;
  explicit DecoderOp(Rng& rng) {
    g = normals(rng, kDecoderOutputs);
    Decoder<double> d(shape);
    d.init_random(rng(), -0.5);
    ParamSet<double> ps;
    d.append_parameters(ps, "");
    for (auto& p : ps) x0.insert(x0.end(), p.data.begin(), p.data.end());
    auto f = normals(rng, shape.input);
    x0.insert(x0.end(), f.begin(), f.end());
  }

  template <typename T>
  double eval(std::span<const double> x, std::vector<double>* grad) const {
    Decoder<T> d(shape);
    ParamSet<T> ps;
    d.append_parameters(ps, "");
    std::size_t k = 0;
    for (auto& p : ps)
      for (auto& v : p.data) v = static_cast<T>(x[k++]);
    const std::vector<T> feature(x.begin() + k, x.end());
    std::vector<T> cache(d.cache_size()), raw(kDecoderOutputs);
    d.forward(feature.data(), cache.data(), raw.data());
    const FieldSample<T> s = activate<T>(raw.data());
    double loss = g[0] * s.density;
    for (int c = 0; c < 3; ++c) loss += g[1 + c] * s.color[c];
    for (int j = 0; j < kParsingClasses; ++j) loss += g[4 + j] * s.parsing_logits[j];
    if (grad) {
      FieldSample<T> gs;
      gs.density = static_cast<T>(g[0]);
      for (int c = 0; c < 3; ++c) gs.color[c] = static_cast<T>(g[1 + c]);
      for (int j = 0; j < kParsingClasses; ++j) gs.parsing_logits[j] = static_cast<T>(g[4 + j]);
      std::vector<T> d_raw(kDecoderOutputs), d_feature(shape.input);
      activate_backward<T>(raw.data(), gs, d_raw.data());
      Decoder<T> gd(shape);
      d.backward(cache.data(), d_raw.data(), gd, d_feature.data());
      ParamSet<T> gps;
      gd.append_parameters(gps, "");
      grad->clear();
      for (auto& p : gps) grad->insert(grad->end(), p.data.begin(), p.data.end());
      grad->insert(grad->end(), d_feature.begin(), d_feature.end());
    }
    return loss;
  }
};

// Compositing of N samples; x0 = [densities, colours, logits].
struct CompositeOp {
  static constexpr int n = 8;
  RaySampling sampling;
  RenderSettings settings;
  std::vector<double> g, x0;
  explicit CompositeOp(Rng& rng) {
    sampling.delta = 0.15;
    for (int i = 0; i < n; ++i) sampling.t.push_back(2.2 + (i + 0.5) * sampling.delta);
    g = normals(rng, 3 + 1 + kParsingClasses);
    std::uniform_real_distribution<double> sigma(0.0, 6.0), unit(0.0, 1.0);
    for (int i = 0; i < n; ++i) x0.push_back(sigma(rng));
    for (int i = 0; i < 3 * n; ++i) x0.push_back(unit(rng));
    auto l = normals(rng, kParsingClasses * n);
    x0.insert(x0.end(), l.begin(), l.end());
  }

  template <typename T>
  double eval(std::span<const double> x, std::vector<double>* grad) const {
    std::vector<FieldSample<T>> s(n);
    for (int i = 0; i < n; ++i) {
      s[i].density = static_cast<T>(x[i]);
      for (int c = 0; c < 3; ++c) s[i].color[c] = static_cast<T>(x[n + 3 * i + c]);
      for (int k = 0; k < kParsingClasses; ++k) s[i].parsing_logits[k] = static_cast<T>(x[4 * n + kParsingClasses * i + k]);
    }
    const RayResult<T> r = composite<T>(s, sampling, settings);
    double loss = g[3] * r.alpha;
    for (int c = 0; c < 3; ++c) loss += g[c] * r.rgb[c];
    for (int k = 0; k < kParsingClasses; ++k) loss += g[4 + k] * r.logits[k];
    if (grad) {
      RayGrad<T> rg;
      for (int c = 0; c < 3; ++c) rg.rgb[c] = static_cast<T>(g[c]);
      rg.alpha = static_cast<T>(g[3]);
      for (int k = 0; k < kParsingClasses; ++k) rg.logits[k] = static_cast<T>(g[4 + k]);
      std::vector<FieldSample<T>> d(n);
      composite_backward<T>(s, sampling, settings, rg, d);
      grad->assign(x.size(), 0.0);
      for (int i = 0; i < n; ++i) {
        (*grad)[i] = d[i].density;
        for (int c = 0; c < 3; ++c) (*grad)[n + 3 * i + c] = d[i].color[c];
        for (int k = 0; k < kParsingClasses; ++k) (*grad)[4 * n + kParsingClasses * i + k] = d[i].parsing_logits[k];
      }
    }
    return loss;
  }
};

ViewTarget random_target(Rng& rng, int w, int h) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, kParsingClasses - 1);
  ViewTarget t{Image(w, h, 3), Image(w, h, 1), LabelMap(w, h)};
  for (auto& v : t.rgb.data) v = static_cast<float>(unit(rng));
  for (auto& v : t.mask.data) v = static_cast<float>(unit(rng) > 0.5);
  for (auto& v : t.parsing.data) v = static_cast<std::uint8_t>(cls(rng));
  return t;
}

// loss_l2 on a 4x4 rendered image; x0 = [rgb, alpha, logits].
struct LossOp {
  static constexpr int w = 4, h = 4, n = w * h;
  ViewTarget target;
  LossWeights weights;
  std::vector<double> x0;
  LossOp(Rng& rng, int levels) : target(random_target(rng, w, h)) {
    weights = {0.8, 0.6, 0.3, levels};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 4 * n; ++i) x0.push_back(unit(rng));
    auto l = normals(rng, kParsingClasses * n, 2.0);
    x0.insert(x0.end(), l.begin(), l.end());
  }

  template <typename T>
  double eval(std::span<const double> x, std::vector<double>* grad) const {
    RenderOutput<T> r;
    r.width = w;
    r.height = h;
    r.rgb.assign(x.begin(), x.begin() + 3 * n);
    r.alpha.assign(x.begin() + 3 * n, x.begin() + 4 * n);
    r.logits.assign(x.begin() + 4 * n, x.end());
    r.parsing = r.logits;
    const double loss = loss_l2<T>(r, target, weights).total;
    if (grad) {
      const auto gs = loss_l2_backward<T>(r, target, weights);
      grad->assign(x.size(), 0.0);
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) (*grad)[3 * i + c] = gs[i].rgb[c];
        (*grad)[3 * n + i] = gs[i].alpha;
        for (int k = 0; k < kParsingClasses; ++k) (*grad)[4 * n + kParsingClasses * i + k] = gs[i].logits[k];
      }
    }
    return loss;
  }
};

// End-to-end: 8x8 render of a small field, loss_l2 against a random target; x0 = all field parameters.
template <template <typename> class Make>
struct RenderLossOp {
  static constexpr int size = 8;
  Camera camera;
  Branch branch;
  RenderSettings settings;
  ViewTarget target;
  LossWeights weights{1.0, 1.0, 0.1, 1};
  std::vector<double> x0;
  RenderLossOp(Rng& rng, Branch b) : branch(b), target(random_target(rng, size, size)) {
    std::uniform_real_distribution<double> th(0.3, kPi - 0.3), ph(-kPi, kPi);
    camera.pose = camera_from_view(th(rng), ph(rng));
    settings.n_samples = 12;
    settings.seed = rng();
    auto f = Make<double>::build();
    f->init_random({.seed = rng(), .plane_std = 0.5, .density_bias = 0.0});
    read_params(*f, x0);
  }

  template <typename T>
  double eval(std::span<const double> x, std::vector<double>* grad) const {
    auto f = Make<T>::build();
    write_params(*f, x);
    const auto out = render_image<T>(*f, branch, camera, size, size, settings);
    const double loss = loss_l2<T>(out, target, weights).total;
    if (grad) {
      const auto pixel_grads = loss_l2_backward<T>(out, target, weights);
      const auto rays = generate_rays(camera, size, size);
      auto gf = f->zeros_like();
      backprop_rays<T>(
          *f, branch, rays, settings, [&](std::size_t i, const RayResult<T>&) { return pixel_grads[i]; }, *gf);
      read_params(*gf, *grad);
    }
    return loss;
  }
};

std::unique_ptr<Problem> build_problem(const std::string& op, Rng& rng, int trial) {
  const Branch branches[] = {Branch::A, Branch::B, Branch::Fused};
  const Branch b = branches[trial % 3];
  if (op == "linear") return make(LinearOp(rng));
  if (op == "bilinear") return make(BilinearOp(rng));
  if (op == "sphere_set") return make(FeatureOp<MakeSingle>(rng, b));
  if (op == "fusion") return make(FeatureOp<MakeDual>(rng, b));
  if (op == "cartesian_set") return make(FeatureOp<MakeTriPlane>(rng, b));
  if (op == "trigrid") return make(FeatureOp<MakeTriGrid>(rng, b));
  if (op == "decoder") return make(DecoderOp(rng));
  if (op == "composite") return make(CompositeOp(rng));
  if (op == "loss") return make(LossOp(rng, 1 + trial % 2));
  if (op == "render_loss") return make(RenderLossOp<MakeDual>(rng, b));
  if (op == "render_loss_single") return make(RenderLossOp<MakeSingle>(rng, b));
  if (op == "render_loss_triplane") return make(RenderLossOp<MakeTriPlane>(rng, b));
  if (op == "render_loss_trigrid") return make(RenderLossOp<MakeTriGrid>(rng, b));
  throw std::invalid_argument("unknown gradcheck op '" + op + "'");
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  return {"linear",   "bilinear",  "sphere_set", "fusion",      "cartesian_set",      "trigrid",
          "decoder",  "composite", "loss",       "render_loss", "render_loss_single", "render_loss_triplane",
          "render_loss_trigrid"};
}

GradcheckResult finite_difference_check(const std::string& op, int trials, double tolerance, Precision precision,
                                        std::uint64_t seed) {
  GradcheckResult result;
  result.op = op;
  result.precision = precision;
  result.tolerance = tolerance;
  constexpr std::size_t kMaxCoords = 600;
  constexpr double kStep = 1e-5;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(seed * 1000003ULL + trial);
    auto problem = build_problem(op, rng, trial);
    std::vector<double> x = problem->x0;
    if (precision == Precision::F32)
      for (auto& v : x) v = static_cast<float>(v);

    std::vector<double> analytic;
    if (precision == Precision::F32) problem->eval_f32(x, &analytic);
    else problem->eval_f64(x, &analytic);
    if (analytic.size() != x.size()) throw std::logic_error("gradcheck: gradient size mismatch for " + op);

    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > kMaxCoords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(kMaxCoords);
    }
    std::vector<double> numeric(coords.size());
    double scale = 0.0;
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const std::size_t i = coords[k];
      const double h = kStep * std::max(1.0, std::abs(x[i]));
      const double saved = x[i];
      x[i] = saved + h;
      const double up = problem->eval_f64(x, nullptr);
      x[i] = saved - h;
      const double down = problem->eval_f64(x, nullptr);
      x[i] = saved;
      numeric[k] = (up - down) / (2 * h);
      scale = std::max(scale, std::abs(numeric[k]));
    }
    const double floor = std::max(1e-3 * scale, 1e-300);
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const double a = analytic[coords[k]], n = numeric[k];
      const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
      result.max_rel_error = std::max(result.max_rel_error, err);
    }
    result.checked += coords.size();
  }
  result.passed = result.max_rel_error < tolerance;
  return result;
}

}  // namespace sphf
