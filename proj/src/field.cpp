#include "sphf/field.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sphf {

namespace {

constexpr int kMaxWidth = 512;

template <typename T>
T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

std::vector<std::uint32_t> dims(std::initializer_list<int> d) {
  std::vector<std::uint32_t> out;
  for (int v : d) out.push_back(static_cast<std::uint32_t>(v));
  return out;
}

template <typename T>
void append_plane(ParamSet<T>& out, const std::string& name, FeaturePlane<T>& p) {
  out.push_back({name, dims({p.shape.height, p.shape.width, p.shape.channels}), std::span<T>(p.data)});
}

template <typename T>
void append_stack(ParamSet<T>& out, const std::string& name, PlaneStack<T>& s) {
  out.push_back({name, dims({s.depth, s.shape.height, s.shape.width, s.shape.channels}), std::span<T>(s.data)});
}

template <typename T>
void fill_normal(std::span<T> data, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : data) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_params(ParamSet<T> params, const FieldInit& init, Decoder<T>& decoder) {
  std::mt19937_64 rng(init.seed);
  for (auto& p : params)
    if (!p.name.starts_with("decoder.")) fill_normal(p.data, rng, init.plane_std);
  decoder.init_random(init.seed ^ 0x9e3779b97f4a7c15ULL, static_cast<T>(init.density_bias));
}

DecoderShape with_input(DecoderShape s, int channels) {
  s.input = channels;
  return s;
}

}  // namespace

std::string to_string(Branch b) {
  switch (b) {
    case Branch::A: return "A";
    case Branch::B: return "B";
    case Branch::Fused: return "fused";
  }
  return "?";
}

Branch branch_from_string(const std::string& s) {
  if (s == "A" || s == "a") return Branch::A;
  if (s == "B" || s == "b") return Branch::B;
  if (s == "fused" || s == "F" || s == "f") return Branch::Fused;
  throw std::invalid_argument("unknown branch '" + s + "'");
}

// ---------------------------------------------------------------------------

template <typename T>
Decoder<T>::Decoder(DecoderShape s) : shape(s) {
  if (s.input < 1 || s.hidden1 < 1 || s.hidden2 < 1 || s.input > kMaxWidth || s.hidden1 > kMaxWidth ||
      s.hidden2 > kMaxWidth)
    throw std::invalid_argument("decoder widths must be in [1, 512]");
  w1.assign(static_cast<std::size_t>(s.hidden1) * s.input, T(0));
  b1.assign(s.hidden1, T(0));
  w2.assign(static_cast<std::size_t>(s.hidden2) * s.hidden1, T(0));
  b2.assign(s.hidden2, T(0));
  w3.assign(static_cast<std::size_t>(kDecoderOutputs) * s.hidden2, T(0));
  b3.assign(kDecoderOutputs, T(0));
}

template <typename T>
void Decoder<T>::forward(const T* feature, T* cache, T* raw) const {
  T* f = cache;
  T* z1 = f + shape.input;
  T* z2 = z1 + shape.hidden1;
  std::copy(feature, feature + shape.input, f);

  std::array<T, kMaxWidth> h;
  affine(w1, b1, f, shape.input, shape.hidden1, z1);
  for (int i = 0; i < shape.hidden1; ++i) h[i] = softplus(z1[i]);
  affine(w2, b2, h.data(), shape.hidden1, shape.hidden2, z2);
  for (int i = 0; i < shape.hidden2; ++i) h[i] = softplus(z2[i]);
  affine(w3, b3, h.data(), shape.hidden2, kDecoderOutputs, raw);
}

template <typename T>
void Decoder<T>::backward(const T* cache, const T* d_raw, Decoder& grad, T* d_feature) const {
  const T* f = cache;
  const T* z1 = f + shape.input;
  const T* z2 = z1 + shape.hidden1;

  std::array<T, kMaxWidth> h1, h2, dh2, dh1;
  for (int i = 0; i < shape.hidden1; ++i) h1[i] = softplus(z1[i]);
  for (int i = 0; i < shape.hidden2; ++i) h2[i] = softplus(z2[i]);

  affine_backward(w3, h2.data(), d_raw, shape.hidden2, kDecoderOutputs, grad.w3, grad.b3, dh2.data());
  for (int i = 0; i < shape.hidden2; ++i) dh2[i] *= sigmoid(z2[i]);
  affine_backward(w2, h1.data(), dh2.data(), shape.hidden1, shape.hidden2, grad.w2, grad.b2, dh1.data());
  for (int i = 0; i < shape.hidden1; ++i) dh1[i] *= sigmoid(z1[i]);
  affine_backward(w1, f, dh1.data(), shape.input, shape.hidden1, grad.w1, grad.b1, d_feature);
}

template <typename T>
void Decoder<T>::append_parameters(ParamSet<T>& out, const std::string& prefix) {
  out.push_back({prefix + "w1", dims({shape.hidden1, shape.input}), std::span<T>(w1)});
  out.push_back({prefix + "b1", dims({shape.hidden1}), std::span<T>(b1)});
  out.push_back({prefix + "w2", dims({shape.hidden2, shape.hidden1}), std::span<T>(w2)});
  out.push_back({prefix + "b2", dims({shape.hidden2}), std::span<T>(b2)});
  out.push_back({prefix + "w3", dims({kDecoderOutputs, shape.hidden2}), std::span<T>(w3)});
  out.push_back({prefix + "b3", dims({kDecoderOutputs}), std::span<T>(b3)});
}

template <typename T>
void Decoder<T>::init_random(std::uint64_t seed, T density_bias) {
  std::mt19937_64 rng(seed);
  auto xavier = [&](std::vector<T>& w, int in, int out) {
    const double a = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& v : w) v = static_cast<T>(dist(rng));
  };
  xavier(w1, shape.input, shape.hidden1);
  xavier(w2, shape.hidden1, shape.hidden2);
  xavier(w3, shape.hidden2, kDecoderOutputs);
  std::fill(b1.begin(), b1.end(), T(0));
  std::fill(b2.begin(), b2.end(), T(0));
  std::fill(b3.begin(), b3.end(), T(0));
  b3[0] = density_bias;
}

template <typename T>
FieldSample<T> activate(const T* raw) {
  FieldSample<T> s;
  s.density = softplus(raw[0]);
  for (int k = 0; k < 3; ++k) s.color[k] = sigmoid(raw[1 + k]);
  for (int k = 0; k < kParsingClasses; ++k) s.parsing_logits[k] = raw[4 + k];
  return s;
}

template <typename T>
void activate_backward(const T* raw, const FieldSample<T>& g, T* d_raw) {
  d_raw[0] = g.density * sigmoid(raw[0]);
  for (int k = 0; k < 3; ++k) {
    const T s = sigmoid(raw[1 + k]);
    d_raw[1 + k] = g.color[k] * s * (T(1) - s);
  }
  for (int k = 0; k < kParsingClasses; ++k) d_raw[4 + k] = g.parsing_logits[k];
}

template <typename T>
FieldSample<T> decode(const Decoder<T>& decoder, std::span<const T> feature) {
  if (static_cast<int>(feature.size()) != decoder.shape.input)
    throw std::invalid_argument("feature width does not match decoder input");
  std::vector<T> cache(decoder.cache_size());
  std::array<T, kDecoderOutputs> raw;
  decoder.forward(feature.data(), cache.data(), raw.data());
  return activate<T>(raw.data());
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<bool> RadianceField<T>::active_parameters(Branch) const {
  return std::vector<bool>(const_cast<RadianceField*>(this)->parameters().size(), true);
}

namespace {

template <typename T>
struct NeuralWorkspace final : FieldWorkspace {
  std::vector<typename NeuralField<T>::Taps> taps;
  std::vector<T> cache;
  std::vector<T> raw;
  std::vector<T> feature;
  std::size_t stride = 0;
};

}  // namespace

template <typename T>
std::vector<T> NeuralField<T>::query(const Vec3& p, Branch branch) const {
  std::vector<T> f(channels(), T(0));
  Taps taps;
  gather_feature(p, branch, taps, f.data());
  return f;
}

template <typename T>
std::unique_ptr<FieldWorkspace> NeuralField<T>::make_workspace(std::size_t max_samples) const {
  auto ws = std::make_unique<NeuralWorkspace<T>>();
  ws->stride = decoder.cache_size();
  ws->taps.resize(max_samples);
  ws->cache.resize(max_samples * ws->stride);
  ws->raw.resize(max_samples * kDecoderOutputs);
  ws->feature.resize(channels());
  return ws;
}

template <typename T>
void NeuralField<T>::evaluate(std::span<const Vec3> points, Branch branch, FieldWorkspace* workspace,
                              std::span<FieldSample<T>> out) const {
  std::unique_ptr<FieldWorkspace> local;
  auto* ws = dynamic_cast<NeuralWorkspace<T>*>(workspace);
  if (!ws || ws->taps.size() < points.size()) {
    local = make_workspace(points.size());
    ws = static_cast<NeuralWorkspace<T>*>(local.get());
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::fill(ws->feature.begin(), ws->feature.end(), T(0));
    gather_feature(points[i], branch, ws->taps[i], ws->feature.data());
    T* raw = ws->raw.data() + i * kDecoderOutputs;
    decoder.forward(ws->feature.data(), ws->cache.data() + i * ws->stride, raw);
    out[i] = activate<T>(raw);
  }
}

template <typename T>
void NeuralField<T>::backward(std::span<const Vec3> points, Branch branch, const FieldWorkspace& workspace,
                              std::span<const FieldSample<T>> grad, RadianceField<T>& grad_field) const {
  const auto* ws = dynamic_cast<const NeuralWorkspace<T>*>(&workspace);
  auto* g = dynamic_cast<NeuralField<T>*>(&grad_field);
  if (!ws || !g) throw std::invalid_argument("backward needs this field's workspace and a zeros_like() gradient");
  std::array<T, kDecoderOutputs> d_raw;
  std::vector<T> d_feature(channels());
  for (std::size_t i = 0; i < points.size(); ++i) {
    activate_backward<T>(ws->raw.data() + i * kDecoderOutputs, grad[i], d_raw.data());
    if (std::all_of(d_raw.begin(), d_raw.end(), [](T v) { return v == T(0); })) continue;
    decoder.backward(ws->cache.data() + i * ws->stride, d_raw.data(), g->decoder, d_feature.data());
    scatter_feature(ws->taps[i], branch, d_feature.data(), *g);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
DualSphereField<T>::DualSphereField(int resolution, int channels, DecoderShape hidden, double rmax, WrapMode wrap)
    : NeuralField<T>(Decoder<T>(with_input(hidden, channels))),
      set_a(resolution, channels, wrap),
      set_b(resolution, channels, wrap),
      r_max(rmax) {}

template <typename T>
ParamSet<T> DualSphereField<T>::parameters() {
  ParamSet<T> out;
  append_plane(out, "a.theta_r", set_a.theta_r);
  append_plane(out, "a.phi_r", set_a.phi_r);
  append_plane(out, "a.theta_phi", set_a.theta_phi);
  append_plane(out, "b.theta_r", set_b.theta_r);
  append_plane(out, "b.phi_r", set_b.phi_r);
  append_plane(out, "b.theta_phi", set_b.theta_phi);
  this->decoder.append_parameters(out, "decoder.");
  return out;
}

template <typename T>
std::vector<bool> DualSphereField<T>::active_parameters(Branch branch) const {
  auto params = const_cast<DualSphereField*>(this)->parameters();
  std::vector<bool> out;
  for (const auto& p : params) {
    const bool is_a = p.name.starts_with("a.");
    const bool is_b = p.name.starts_with("b.");
    out.push_back(branch == Branch::Fused || (!is_a && !is_b) || (is_a && branch == Branch::A) ||
                  (is_b && branch == Branch::B));
  }
  return out;
}

template <typename T>
std::unique_ptr<RadianceField<T>> DualSphereField<T>::zeros_like() const {
  auto out = std::make_unique<DualSphereField<T>>(set_a.resolution(), set_a.channels(),
                                                  this->decoder.shape, r_max, set_a.phi_wrap);
  out->frame_a = frame_a;
  out->frame_b = frame_b;
  out->epsilon = epsilon;
  return out;
}

template <typename T>
void DualSphereField<T>::init_random(const FieldInit& init) {
  init_params(parameters(), init, this->decoder);
}

template <typename T>
void DualSphereField<T>::gather_feature(const Vec3& p, Branch branch, typename NeuralField<T>::Taps& taps,
                                        T* out) const {
  taps.weight_a = taps.weight_b = 0.0;
  if (branch == Branch::A || branch == Branch::Fused) {
    const SphericalCoord s = frame_coords(frame_a, p);
    taps.a = set_a.taps(s, r_max);
    taps.weight_a = branch == Branch::A ? 1.0 : fusion_weight(s.theta, s.phi);
  }
  if (branch == Branch::B || branch == Branch::Fused) {
    const SphericalCoord s = frame_coords(frame_b, p);
    taps.b = set_b.taps(s, r_max);
    taps.weight_b = branch == Branch::B ? 1.0 : fusion_weight(s.theta, s.phi);
  }
  if (branch == Branch::Fused) {
    const double denom = taps.weight_a + taps.weight_b + epsilon;
    taps.weight_a /= denom;
    taps.weight_b /= denom;
  }
  if (taps.weight_a != 0.0) set_a.gather(taps.a, out, static_cast<T>(taps.weight_a));
  if (taps.weight_b != 0.0) set_b.gather(taps.b, out, static_cast<T>(taps.weight_b));
}

template <typename T>
void DualSphereField<T>::scatter_feature(const typename NeuralField<T>::Taps& taps, Branch, const T* d_feature,
                                         NeuralField<T>& grad) const {
  auto& g = static_cast<DualSphereField<T>&>(grad);
  if (taps.weight_a != 0.0) g.set_a.scatter(taps.a, d_feature, static_cast<T>(taps.weight_a));
  if (taps.weight_b != 0.0) g.set_b.scatter(taps.b, d_feature, static_cast<T>(taps.weight_b));
}

template <typename T>
std::vector<T> query_fused(const DualSphereField<T>& field, const Vec3& p) {
  return field.query(p, Branch::Fused);
}

template <typename T>
std::vector<T> query_branch(const DualSphereField<T>& field, Branch branch, const Vec3& p) {
  return field.query(p, branch);
}

// ---------------------------------------------------------------------------

template <typename T>
SingleSphereField<T>::SingleSphereField(int resolution, int channels, DecoderShape hidden, double rmax,
                                        WrapMode wrap)
    : NeuralField<T>(Decoder<T>(with_input(hidden, channels))), set(resolution, channels, wrap), r_max(rmax) {}

template <typename T>
ParamSet<T> SingleSphereField<T>::parameters() {
  ParamSet<T> out;
  append_plane(out, "s.theta_r", set.theta_r);
  append_plane(out, "s.phi_r", set.phi_r);
  append_plane(out, "s.theta_phi", set.theta_phi);
  this->decoder.append_parameters(out, "decoder.");
  return out;
}

template <typename T>
std::unique_ptr<RadianceField<T>> SingleSphereField<T>::zeros_like() const {
  auto out = std::make_unique<SingleSphereField<T>>(set.resolution(), set.channels(), this->decoder.shape, r_max,
                                                    set.phi_wrap);
  out->frame = frame;
  return out;
}

template <typename T>
void SingleSphereField<T>::init_random(const FieldInit& init) {
  init_params(parameters(), init, this->decoder);
}

template <typename T>
void SingleSphereField<T>::gather_feature(const Vec3& p, Branch, typename NeuralField<T>::Taps& taps, T* out) const {
  taps.a = set.taps(frame_coords(frame, p), r_max);
  set.gather(taps.a, out);
}

template <typename T>
void SingleSphereField<T>::scatter_feature(const typename NeuralField<T>::Taps& taps, Branch, const T* d_feature,
                                           NeuralField<T>& grad) const {
  static_cast<SingleSphereField<T>&>(grad).set.scatter(taps.a, d_feature);
}

// ---------------------------------------------------------------------------

template <typename T>
CartesianField<T>::CartesianField(BaselineKind k, int resolution, int channels, DecoderShape hidden, double h,
                                  int depth)
    : NeuralField<T>(Decoder<T>(with_input(hidden, channels))), baseline(k), half_extent(h) {
  if (k == BaselineKind::TriPlane)
    planes = CartesianPlaneSet<T>(resolution, channels);
  else
    grid = TriGridSet<T>(resolution, channels, depth);
}

template <typename T>
ParamSet<T> CartesianField<T>::parameters() {
  ParamSet<T> out;
  if (baseline == BaselineKind::TriPlane) {
    append_plane(out, "tri.xy", planes.xy);
    append_plane(out, "tri.xz", planes.xz);
    append_plane(out, "tri.yz", planes.yz);
  } else {
    append_stack(out, "grid.xy", grid.xy);
    append_stack(out, "grid.xz", grid.xz);
    append_stack(out, "grid.yz", grid.yz);
  }
  this->decoder.append_parameters(out, "decoder.");
  return out;
}

template <typename T>
std::unique_ptr<RadianceField<T>> CartesianField<T>::zeros_like() const {
  const int res = baseline == BaselineKind::TriPlane ? planes.resolution() : grid.resolution();
  const int depth = baseline == BaselineKind::TriPlane ? 1 : grid.depth();
  return std::make_unique<CartesianField<T>>(baseline, res, this->channels(), this->decoder.shape, half_extent,
                                             depth);
}

template <typename T>
void CartesianField<T>::init_random(const FieldInit& init) {
  init_params(parameters(), init, this->decoder);
}

template <typename T>
void CartesianField<T>::gather_feature(const Vec3& p, Branch, typename NeuralField<T>::Taps& taps, T* out) const {
  if (baseline == BaselineKind::TriPlane) {
    taps.planes = cartesian_taps(planes.resolution(), p, half_extent);
    planes.gather(taps.planes, out);
  } else {
    taps.grid = trigrid_taps(grid.resolution(), grid.depth(), p, half_extent);
    grid.gather(taps.grid, out);
  }
}

template <typename T>
void CartesianField<T>::scatter_feature(const typename NeuralField<T>::Taps& taps, Branch, const T* d_feature,
                                        NeuralField<T>& grad) const {
  auto& g = static_cast<CartesianField<T>&>(grad);
  if (baseline == BaselineKind::TriPlane)
    g.planes.scatter(taps.planes, d_feature);
  else
    g.grid.scatter(taps.grid, d_feature);
}

template <typename T>
std::unique_ptr<CartesianField<T>> build_baseline_field(BaselineKind kind, int resolution, int channels,
                                                        DecoderShape hidden, double half_extent, int depth) {
  return std::make_unique<CartesianField<T>>(kind, resolution, channels, hidden, half_extent, depth);
}

template <typename Dst, typename Src>
void copy_parameters(RadianceField<Dst>& dst, RadianceField<Src>& src) {
  auto d = dst.parameters();
  auto s = src.parameters();
  if (d.size() != s.size()) throw std::invalid_argument("parameter layouts differ");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].name != s[i].name || d[i].data.size() != s[i].data.size())
      throw std::invalid_argument("parameter layouts differ at " + d[i].name);
    std::transform(s[i].data.begin(), s[i].data.end(), d[i].data.begin(), [](Src v) { return static_cast<Dst>(v); });
  }
}

#define SPHF_INSTANTIATE(T)                                                                                  \
  template struct Decoder<T>;                                                                                \
  template FieldSample<T> activate<T>(const T*);                                                             \
  template void activate_backward<T>(const T*, const FieldSample<T>&, T*);                                   \
  template FieldSample<T> decode<T>(const Decoder<T>&, std::span<const T>);                                  \
  template class RadianceField<T>;                                                                           \
  template class NeuralField<T>;                                                                             \
  template class DualSphereField<T>;                                                                         \
  template class SingleSphereField<T>;                                                                       \
  template class CartesianField<T>;                                                                          \
  template std::vector<T> query_fused<T>(const DualSphereField<T>&, const Vec3&);                            \
  template std::vector<T> query_branch<T>(const DualSphereField<T>&, Branch, const Vec3&);                   \
  template std::unique_ptr<CartesianField<T>> build_baseline_field<T>(BaselineKind, int, int, DecoderShape, \
                                                                      double, int);

SPHF_INSTANTIATE(float)
SPHF_INSTANTIATE(double)
#undef SPHF_INSTANTIATE

template void copy_parameters(RadianceField<float>&, RadianceField<float>&);
template void copy_parameters(RadianceField<double>&, RadianceField<float>&);
template void copy_parameters(RadianceField<float>&, RadianceField<double>&);
template void copy_parameters(RadianceField<double>&, RadianceField<double>&);

}  // namespace sphf
