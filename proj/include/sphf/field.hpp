#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sphf/geometry.hpp"
#include "sphf/planes.hpp"

namespace sphf {

// background, skin, face-feature, hair
inline constexpr int kParsingClasses = 4;
inline constexpr int kDecoderOutputs = 1 + 3 + kParsingClasses;

enum class Branch { A, B, Fused };

std::string to_string(Branch b);
Branch branch_from_string(const std::string& s);

template <typename T>
struct FieldSample {
  T density = T(0);
  std::array<T, 3> color{};
  std::array<T, kParsingClasses> parsing_logits{};
};

/// Non-owning view of one named parameter tensor.
template <typename T>
struct ParamView {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::span<T> data;
};

template <typename T>
using ParamSet = std::vector<ParamView<T>>;

struct DecoderShape {
  int input = 32;
  int hidden1 = 64;
  int hidden2 = 64;
};

// y[o] = b[o] + sum_i w[o, i] x[i]
template <typename T>
void affine(const std::vector<T>& w, const std::vector<T>& b, const T* x, int in, int out, T* y) {
  for (int o = 0; o < out; ++o) {
    const T* row = w.data() + static_cast<std::size_t>(o) * in;
    T acc = b[o];
#pragma omp simd reduction(+ : acc)
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// dw += dy x^T, db += dy, dx = w^T dy
template <typename T>
void affine_backward(const std::vector<T>& w, const T* x, const T* dy, int in, int out, std::vector<T>& dw,
                     std::vector<T>& db, T* dx) {
  if (dx) std::fill(dx, dx + in, T(0));
  for (int o = 0; o < out; ++o) {
    const T g = dy[o];
    if (g == T(0)) continue;
    db[o] += g;
    const T* row = w.data() + static_cast<std::size_t>(o) * in;
    T* drow = dw.data() + static_cast<std::size_t>(o) * in;
#pragma omp simd
    for (int i = 0; i < in; ++i) drow[i] += g * x[i];
    if (dx) {
#pragma omp simd
      for (int i = 0; i < in; ++i) dx[i] += row[i] * g;
    }
  }
}

/// Feature -> (density, rgb, parsing logits) MLP with softplus hidden layers.
template <typename T>
struct Decoder {
  DecoderShape shape;
  std::vector<T> w1, b1, w2, b2, w3, b3;  // row-major, out x in

  Decoder() = default;
  explicit Decoder(DecoderShape s);

  /// Scalars cached per evaluation: the input feature and both pre-activations.
  std::size_t cache_size() const { return shape.input + shape.hidden1 + shape.hidden2; }

  void forward(const T* feature, T* cache, T* raw) const;
  /// Accumulates weight gradients into `grad` and writes d(feature) if non-null.
  void backward(const T* cache, const T* d_raw, Decoder& grad, T* d_feature) const;

  void append_parameters(ParamSet<T>& out, const std::string& prefix);
  void init_random(std::uint64_t seed, T density_bias = T(0));
};

/// softplus density, sigmoid colour, identity logits.
template <typename T>
FieldSample<T> activate(const T* raw);
template <typename T>
void activate_backward(const T* raw, const FieldSample<T>& grad, T* d_raw);

template <typename T>
FieldSample<T> decode(const Decoder<T>& decoder, std::span<const T> feature);

// ---------------------------------------------------------------------------

class FieldWorkspace {
 public:
  virtual ~FieldWorkspace() = default;
};

class NotDifferentiable : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class RadianceField {
 public:
  virtual ~RadianceField() = default;

  virtual std::string kind() const = 0;

  /// Evaluates one ray's samples. With a workspace, caches what backward needs.
  virtual void evaluate(std::span<const Vec3> points, Branch branch, FieldWorkspace* workspace,
                        std::span<FieldSample<T>> out) const = 0;

  FieldSample<T> sample(const Vec3& p, Branch branch) const {
    FieldSample<T> s;
    evaluate(std::span<const Vec3>(&p, 1), branch, nullptr, std::span<FieldSample<T>>(&s, 1));
    return s;
  }

  virtual bool differentiable() const { return false; }
  virtual std::unique_ptr<FieldWorkspace> make_workspace(std::size_t /*max_samples*/) const { return nullptr; }

  /// Accumulates parameter gradients into `grad_field`, which must come from zeros_like().
  virtual void backward(std::span<const Vec3> /*points*/, Branch /*branch*/, const FieldWorkspace& /*workspace*/,
                        std::span<const FieldSample<T>> /*grad*/, RadianceField& /*grad_field*/) const {
    throw NotDifferentiable(kind() + " field has no vector-Jacobian rule");
  }

  virtual ParamSet<T> parameters() { return {}; }
  /// Parameter tensors a step on `branch` can touch, aligned with parameters().
  virtual std::vector<bool> active_parameters(Branch branch) const;
  virtual std::unique_ptr<RadianceField<T>> zeros_like() const {
    throw NotDifferentiable(kind() + " field has no parameters");
  }
};

/// Field defined by a callable; used for analytic media. Not differentiable.
template <typename T>
class FunctionField final : public RadianceField<T> {
 public:
  template <typename F>
  explicit FunctionField(F f, std::string name = "analytic")
      : holder_(std::make_shared<Holder<F>>(std::move(f))), name_(std::move(name)) {}

  std::string kind() const override { return name_; }
  void evaluate(std::span<const Vec3> points, Branch, FieldWorkspace*, std::span<FieldSample<T>> out) const override {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = holder_->call(points[i]);
  }

 private:
  struct HolderBase {
    virtual ~HolderBase() = default;
    virtual FieldSample<T> call(const Vec3& p) const = 0;
  };
  template <typename F>
  struct Holder final : HolderBase {
    explicit Holder(F fn) : f(std::move(fn)) {}
    FieldSample<T> call(const Vec3& p) const override { return f(p); }
    F f;
  };
  std::shared_ptr<const HolderBase> holder_;
  std::string name_;
};

/// Zero density everywhere.
template <typename T>
class EmptyField final : public RadianceField<T> {
 public:
  std::string kind() const override { return "empty"; }
  void evaluate(std::span<const Vec3>, Branch, FieldWorkspace*, std::span<FieldSample<T>> out) const override {
    for (auto& s : out) s = FieldSample<T>{};
  }
};

struct FieldInit {
  std::uint64_t seed = 0;
  double plane_std = 0.1;
  double density_bias = -1.0;
};

/// Shared decoder over a per-point feature; subclasses supply the feature lookup.
template <typename T>
class NeuralField : public RadianceField<T> {
 public:
  Decoder<T> decoder;

  explicit NeuralField(Decoder<T> d) : decoder(std::move(d)) {}

  int channels() const { return decoder.shape.input; }

  /// Feature vector that feeds the decoder.
  std::vector<T> query(const Vec3& p, Branch branch) const;

  void evaluate(std::span<const Vec3> points, Branch branch, FieldWorkspace* workspace,
                std::span<FieldSample<T>> out) const override;
  bool differentiable() const override { return true; }
  std::unique_ptr<FieldWorkspace> make_workspace(std::size_t max_samples) const override;
  void backward(std::span<const Vec3> points, Branch branch, const FieldWorkspace& workspace,
                std::span<const FieldSample<T>> grad, RadianceField<T>& grad_field) const override;

  struct Taps {
    SphereTaps a;
    SphereTaps b;
    double weight_a = 0.0;
    double weight_b = 0.0;
    CartesianTaps planes;
    TriGridTaps grid;
  };

  /// out must hold channels() zeros.
  virtual void gather_feature(const Vec3& p, Branch branch, Taps& taps, T* out) const = 0;
  virtual void scatter_feature(const Taps& taps, Branch branch, const T* d_feature, NeuralField& grad) const = 0;
};

template <typename T>
class DualSphereField final : public NeuralField<T> {
 public:
  SpherePlaneSet<T> set_a;
  SpherePlaneSet<T> set_b;
  SphereFrame frame_a = SphereFrame::a();
  SphereFrame frame_b = SphereFrame::b();
  double epsilon = 1e-8;
  double r_max = kDefaultSceneRadius;

  DualSphereField(int resolution, int channels, DecoderShape hidden, double r_max = kDefaultSceneRadius,
                  WrapMode phi_wrap = WrapMode::Clamp);

  std::string kind() const override { return "dual-sphere"; }
  ParamSet<T> parameters() override;
  std::vector<bool> active_parameters(Branch branch) const override;
  std::unique_ptr<RadianceField<T>> zeros_like() const override;
  void init_random(const FieldInit& init);

  void gather_feature(const Vec3& p, Branch branch, typename NeuralField<T>::Taps& taps, T* out) const override;
  void scatter_feature(const typename NeuralField<T>::Taps& taps, Branch branch, const T* d_feature,
                       NeuralField<T>& grad) const override;
};

/// f_F = (w_A f_A + w_B f_B) / (w_A + w_B + epsilon), weights in each frame's own coordinates.
template <typename T>
std::vector<T> query_fused(const DualSphereField<T>& field, const Vec3& p);

/// A or B bypasses fusion and returns that sphere's feature.
template <typename T>
std::vector<T> query_branch(const DualSphereField<T>& field, Branch branch, const Vec3& p);

/// One spherical tri-plane in a fixed frame; every branch reads the same set.
template <typename T>
class SingleSphereField final : public NeuralField<T> {
 public:
  SpherePlaneSet<T> set;
  SphereFrame frame = SphereFrame::a();
  double r_max = kDefaultSceneRadius;

  SingleSphereField(int resolution, int channels, DecoderShape hidden, double r_max = kDefaultSceneRadius,
                    WrapMode phi_wrap = WrapMode::Clamp);

  std::string kind() const override { return "single-sphere"; }
  ParamSet<T> parameters() override;
  std::unique_ptr<RadianceField<T>> zeros_like() const override;
  void init_random(const FieldInit& init);

  void gather_feature(const Vec3& p, Branch branch, typename NeuralField<T>::Taps& taps, T* out) const override;
  void scatter_feature(const typename NeuralField<T>::Taps& taps, Branch branch, const T* d_feature,
                       NeuralField<T>& grad) const override;
};

enum class BaselineKind { TriPlane, TriGrid };

/// Cartesian tri-plane or tri-grid sharing the decoder and query interface.
template <typename T>
class CartesianField final : public NeuralField<T> {
 public:
  BaselineKind baseline;
  CartesianPlaneSet<T> planes;  // TriPlane
  TriGridSet<T> grid;           // TriGrid
  double half_extent = kDefaultSceneRadius;

  CartesianField(BaselineKind kind, int resolution, int channels, DecoderShape hidden,
                 double half_extent = kDefaultSceneRadius, int depth = 3);

  std::string kind() const override { return baseline == BaselineKind::TriPlane ? "tri-plane" : "tri-grid"; }
  ParamSet<T> parameters() override;
  std::unique_ptr<RadianceField<T>> zeros_like() const override;
  void init_random(const FieldInit& init);

  void gather_feature(const Vec3& p, Branch branch, typename NeuralField<T>::Taps& taps, T* out) const override;
  void scatter_feature(const typename NeuralField<T>::Taps& taps, Branch branch, const T* d_feature,
                       NeuralField<T>& grad) const override;
};

template <typename T>
std::unique_ptr<CartesianField<T>> build_baseline_field(BaselineKind kind, int resolution, int channels,
                                                        DecoderShape hidden, double half_extent, int depth = 3);

/// Copies parameter values between fields of the same layout (e.g. float <-> double).
template <typename Dst, typename Src>
void copy_parameters(RadianceField<Dst>& dst, RadianceField<Src>& src);

}  // namespace sphf
