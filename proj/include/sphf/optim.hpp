#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sphf/checkpoint.hpp"
#include "sphf/field.hpp"
#include "sphf/image.hpp"
#include "sphf/render.hpp"

namespace sphf {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double rgb = 1.0;
  double mask = 1.0;
  double parsing = 0.1;
  /// 1 = plain per-pixel MSE; n > 1 averages the rgb MSE over n 2x box-downsampled levels.
  int pyramid_levels = 1;
};

struct LossTerms {
  double rgb = 0.0;
  double mask = 0.0;
  double parsing = 0.0;
  double total = 0.0;
};

struct PixelTarget {
  std::array<float, 3> rgb{};
  float alpha = 0.0f;
  std::uint8_t label = 0;
};

/// Unweighted terms for one pixel (rgb MSE over channels, squared alpha error,
/// cross-entropy of softmax(logits)); adds scale * d(weighted total) to `grad`.
template <typename T>
LossTerms pixel_loss(const RayResult<T>& r, const PixelTarget& target, const LossWeights& w, RayGrad<T>* grad,
                     double scale);

struct ViewTarget {
  Image rgb;         // 3 channels
  Image mask;        // 1 channel
  LabelMap parsing;  // class per pixel
};

/// w_rgb * MSE(rgb) + w_mask * MSE(alpha) + w_par * CE(parsing), means over pixels.
template <typename T>
LossTerms loss_l2(const RenderOutput<T>& rendered, const ViewTarget& target, const LossWeights& w);

/// Per-pixel d(loss_l2)/d(rgb, alpha, logits).
template <typename T>
std::vector<RayGrad<T>> loss_l2_backward(const RenderOutput<T>& rendered, const ViewTarget& target,
                                         const LossWeights& w);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::vector<std::uint64_t> steps;  // per tensor, so skipped tensors keep their bias correction

  void init(const ParamSet<T>& params);
  bool matches(const ParamSet<T>& params) const;
};

/// Bias-corrected Adam. `active` (if non-empty) skips tensors entirely;
/// `lr` (if non-empty) overrides the learning rate per tensor.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, const AdamConfig& config,
               const std::vector<bool>& active = {}, const std::vector<double>& lr = {});

// ---------------------------------------------------------------------------

struct LossToggles {
  bool rgb = true;
  bool mask = true;
  bool parsing = true;
};

struct FitPhase {
  std::int64_t steps = 0;
  std::array<double, 3> probs{0.0, 0.0, 1.0};  // A, B, fused
  LossToggles losses;
};

struct FitSchedule {
  std::vector<FitPhase> phases;

  std::int64_t total() const;
  /// Phase index for a step; steps past the budget stay in the last phase.
  int phase_at(std::int64_t step) const;
  void validate() const;

  /// "pA/pB/pF:steps[:terms]" joined by commas, e.g. "33/33/34:2000,10/10/80:8000:rgb+mask".
  /// Probabilities are percentages when they sum to 100, fractions when they sum to 1.
  static FitSchedule parse(const std::string& text);
  std::string to_string() const;
};

struct TrainingView {
  Camera camera;
  ViewTarget target;
  int dup = 1;
};

struct FitConfig {
  FitSchedule schedule;
  std::int64_t steps = 0;  // 0 = schedule total
  int rays_per_step = 4096;
  AdamConfig adam;
  double decoder_lr = 1e-3;
  LossWeights weights;
  RenderSettings render;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;

  std::int64_t total_steps() const { return steps > 0 ? steps : schedule.total(); }
};

struct TraceRow {
  std::int64_t step = 0;
  int phase = 0;
  Branch branch = Branch::Fused;
  int view = 0;
  LossTerms loss;
};

template <typename T>
struct FitState {
  AdamState<T> adam;
  std::int64_t step = 0;
};

template <typename T>
struct FitHooks {
  /// Called after steps that are multiples of checkpoint_every.
  std::function<void(RadianceField<T>&, const FitState<T>&)> on_checkpoint;
  std::function<void(const TraceRow&)> on_step;
};

/// Draws for one step: view, branch and pixel batch come from (seed, step) only.
struct StepDraw {
  int phase = 0;
  Branch branch = Branch::Fused;
  int view = 0;
};
StepDraw draw_step(const FitSchedule& schedule, std::span<const TrainingView> views, std::uint64_t seed,
                   std::int64_t step);

/// Runs from state.step up to `until` (default: config.total_steps()).
template <typename T>
std::vector<TraceRow> fit(RadianceField<T>& field, std::span<const TrainingView> views, const FitConfig& config,
                          FitState<T>& state, const FitHooks<T>& hooks = {}, std::int64_t until = -1);

/// Parameters plus "adam.m.*", "adam.v.*", "adam.steps" and "fit.step".
template <typename T>
std::vector<Tensor> fit_state_tensors(RadianceField<T>& field, const FitState<T>& state);
template <typename T>
void restore_fit_state(RadianceField<T>& field, FitState<T>& state, const std::vector<Tensor>& tensors);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);

// ---------------------------------------------------------------------------

enum class Precision { F32, F64 };

struct GradcheckResult {
  std::string op;
  Precision precision = Precision::F64;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Registered differentiable ops, in check order.
std::vector<std::string> gradcheck_ops();

/// Central differences against the analytic vector-Jacobian products on random
/// small configurations. F32 checks the float gradient code against central
/// differences of the same op evaluated in double at the float-rounded point.
/// The error per coordinate is |a - n| / max(|a|, |n|, 1e-3 * max_j |n_j|).
GradcheckResult finite_difference_check(const std::string& op, int trials, double tolerance, Precision precision,
                                        std::uint64_t seed = 0);

}  // namespace sphf
