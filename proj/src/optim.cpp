#include "sphf/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sphf/rng.hpp"

namespace sphf {

namespace {

constexpr std::uint64_t kBranchStream = 0xb1;
constexpr std::uint64_t kViewStream = 0xb2;
constexpr std::uint64_t kPixelStream = 0xb3;
constexpr std::uint64_t kJitterStream = 0xb4;

void check_target(int width, int height, const ViewTarget& t) {
  if (t.rgb.width != width || t.rgb.height != height || t.rgb.channels != 3)
    throw std::invalid_argument("loss: rgb target does not match the rendered resolution");
  if (t.mask.width != width || t.mask.height != height || t.mask.channels != 1)
    throw std::invalid_argument("loss: mask target does not match the rendered resolution");
  if (t.parsing.width != width || t.parsing.height != height)
    throw std::invalid_argument("loss: parsing target does not match the rendered resolution");
}

template <typename T>
RayResult<T> pixel_result(const RenderOutput<T>& r, std::size_t i) {
  RayResult<T> out;
  for (int c = 0; c < 3; ++c) out.rgb[c] = r.rgb[i * 3 + c];
  out.alpha = r.alpha[i];
  for (int k = 0; k < kParsingClasses; ++k) out.logits[k] = r.logits[i * kParsingClasses + k];
  return out;
}

PixelTarget pixel_target(const ViewTarget& t, std::size_t i) {
  PixelTarget p;
  for (int c = 0; c < 3; ++c) p.rgb[c] = t.rgb.data[i * 3 + c];
  p.alpha = t.mask.data[i];
  p.label = t.parsing.data[i];
  return p;
}

// Mean over levels of the rgb MSE between box-downsampled images; level 0 is full resolution.
template <typename T>
double pyramid_rgb(const RenderOutput<T>& r, const ViewTarget& t, int levels, std::vector<RayGrad<T>>* grad,
                   double scale) {
  double total = 0.0;
  for (int l = 0; l < levels; ++l) {
    const int s = 1 << l;
    if (r.width % s || r.height % s) throw std::invalid_argument("loss: pyramid level does not divide the image");
    const int w = r.width / s, h = r.height / s;
    const double n = static_cast<double>(w) * h * 3;
    double level = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          double d = 0.0;
          for (int dy = 0; dy < s; ++dy)
            for (int dx = 0; dx < s; ++dx) {
              const std::size_t i = static_cast<std::size_t>(y * s + dy) * r.width + (x * s + dx);
              d += static_cast<double>(r.rgb[i * 3 + c]) - t.rgb.data[i * 3 + c];
            }
          d /= s * s;
          level += d * d;
          if (grad) {
            const T g = static_cast<T>(scale * 2.0 * d / (n * s * s * levels));
            for (int dy = 0; dy < s; ++dy)
              for (int dx = 0; dx < s; ++dx)
                (*grad)[static_cast<std::size_t>(y * s + dy) * r.width + (x * s + dx)].rgb[c] += g;
          }
        }
    total += level / n;
  }
  return total / levels;
}

}  // namespace

template <typename T>
LossTerms pixel_loss(const RayResult<T>& r, const PixelTarget& target, const LossWeights& w, RayGrad<T>* grad,
                     double scale) {
  LossTerms out;
  double d_rgb[3];
  for (int c = 0; c < 3; ++c) {
    d_rgb[c] = static_cast<double>(r.rgb[c]) - target.rgb[c];
    out.rgb += d_rgb[c] * d_rgb[c] / 3.0;
  }
  const double d_alpha = static_cast<double>(r.alpha) - target.alpha;
  out.mask = d_alpha * d_alpha;

  double m = r.logits[0];
  for (int k = 1; k < kParsingClasses; ++k) m = std::max<double>(m, r.logits[k]);
  double sum = 0.0;
  double p[kParsingClasses];
  for (int k = 0; k < kParsingClasses; ++k) sum += p[k] = std::exp(static_cast<double>(r.logits[k]) - m);
  for (double& v : p) v /= sum;
  out.parsing = m + std::log(sum) - static_cast<double>(r.logits[target.label]);
  out.total = w.rgb * out.rgb + w.mask * out.mask + w.parsing * out.parsing;

  if (grad) {
    for (int c = 0; c < 3; ++c) grad->rgb[c] += static_cast<T>(scale * w.rgb * 2.0 * d_rgb[c] / 3.0);
    grad->alpha += static_cast<T>(scale * w.mask * 2.0 * d_alpha);
    for (int k = 0; k < kParsingClasses; ++k)
      grad->logits[k] += static_cast<T>(scale * w.parsing * (p[k] - (k == target.label ? 1.0 : 0.0)));
  }
  return out;
}

template <typename T>
LossTerms loss_l2(const RenderOutput<T>& rendered, const ViewTarget& target, const LossWeights& w) {
  check_target(rendered.width, rendered.height, target);
  const std::size_t n = rendered.pixels();
  LossTerms out;
  for (std::size_t i = 0; i < n; ++i) {
    const LossTerms p = pixel_loss<T>(pixel_result(rendered, i), pixel_target(target, i), w, nullptr, 0.0);
    out.rgb += p.rgb;
    out.mask += p.mask;
    out.parsing += p.parsing;
  }
  out.rgb /= n;
  out.mask /= n;
  out.parsing /= n;
  if (w.pyramid_levels > 1) out.rgb = pyramid_rgb<T>(rendered, target, w.pyramid_levels, nullptr, 0.0);
  out.total = w.rgb * out.rgb + w.mask * out.mask + w.parsing * out.parsing;
  return out;
}

template <typename T>
std::vector<RayGrad<T>> loss_l2_backward(const RenderOutput<T>& rendered, const ViewTarget& target,
                                         const LossWeights& w) {
  check_target(rendered.width, rendered.height, target);
  const std::size_t n = rendered.pixels();
  std::vector<RayGrad<T>> grads(n);
  LossWeights per_pixel = w;
  if (w.pyramid_levels > 1) per_pixel.rgb = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    pixel_loss<T>(pixel_result(rendered, i), pixel_target(target, i), per_pixel, &grads[i], 1.0 / n);
  if (w.pyramid_levels > 1) pyramid_rgb<T>(rendered, target, w.pyramid_levels, &grads, w.rgb);
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
void AdamState<T>::init(const ParamSet<T>& params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.data.size(), T(0));
    v.emplace_back(p.data.size(), T(0));
  }
  steps.assign(params.size(), 0);
}

template <typename T>
bool AdamState<T>::matches(const ParamSet<T>& params) const {
  if (m.size() != params.size() || v.size() != params.size() || steps.size() != params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (m[i].size() != params[i].data.size() || v[i].size() != params[i].data.size()) return false;
  return true;
}

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, const AdamConfig& config,
               const std::vector<bool>& active, const std::vector<double>& lr) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam: gradient count mismatch");
  if (!state.matches(params)) state.init(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active.empty() && !active[i]) continue;
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    if (g.size() != p.size()) throw std::invalid_argument("adam: gradient shape mismatch for " + params[i].name);
    const std::uint64_t t = ++state.steps[i];
    const double rate = lr.empty() ? config.lr : lr[i];
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      const double vj = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(p[j] - rate * (mj / bc1) / (std::sqrt(vj / bc2) + config.eps));
    }
  }
}

// ---------------------------------------------------------------------------

std::int64_t FitSchedule::total() const {
  std::int64_t n = 0;
  for (const auto& p : phases) n += p.steps;
  return n;
}

int FitSchedule::phase_at(std::int64_t step) const {
  std::int64_t end = 0;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    end += phases[i].steps;
    if (step < end) return static_cast<int>(i);
  }
  return static_cast<int>(phases.size()) - 1;
}

void FitSchedule::validate() const {
  if (phases.empty()) throw std::invalid_argument("schedule has no phases");
  for (const auto& p : phases) {
    if (p.steps < 1) throw std::invalid_argument("schedule phase needs a positive step budget");
    double sum = 0.0;
    for (double q : p.probs) {
      if (!(q >= 0.0)) throw std::invalid_argument("schedule probabilities must be non-negative");
      sum += q;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("schedule probabilities must sum to 1");
    if (!p.losses.rgb && !p.losses.mask && !p.losses.parsing)
      throw std::invalid_argument("schedule phase disables every loss term");
  }
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad number '" + s + "' in schedule");
  }
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "' in schedule");
  return v;
}

}  // namespace

FitSchedule FitSchedule::parse(const std::string& text) {
  FitSchedule s;
  for (const auto& item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() < 2 || parts.size() > 3) throw std::invalid_argument("schedule phase '" + item + "' is malformed");
    const auto probs = split(parts[0], '/');
    if (probs.size() != 3) throw std::invalid_argument("schedule phase '" + item + "' needs pA/pB/pF");
    FitPhase phase;
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) sum += phase.probs[i] = parse_number(probs[i]);
    if (std::abs(sum - 100.0) < 1e-6) {
      for (auto& q : phase.probs) q /= 100.0;
    } else if (std::abs(sum - 1.0) > 1e-6) {
      throw std::invalid_argument("schedule phase '" + item + "' probabilities sum to neither 1 nor 100");
    }
    // Renormalise away the tolerance so validate() sees an exact sum.
    sum = phase.probs[0] + phase.probs[1] + phase.probs[2];
    for (auto& q : phase.probs) q /= sum;
    const double steps = parse_number(parts[1]);
    if (steps != std::floor(steps)) throw std::invalid_argument("schedule step budget must be an integer");
    phase.steps = static_cast<std::int64_t>(steps);
    if (parts.size() == 3) {
      phase.losses = {false, false, false};
      for (const auto& term : split(parts[2], '+')) {
        if (term == "rgb") phase.losses.rgb = true;
        else if (term == "mask") phase.losses.mask = true;
        else if (term == "parsing") phase.losses.parsing = true;
        else throw std::invalid_argument("unknown loss term '" + term + "'");
      }
    }
    s.phases.push_back(phase);
  }
  s.validate();
  return s;
}

std::string FitSchedule::to_string() const {
  std::string out;
  char buf[128];
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const auto& p = phases[i];
    std::snprintf(buf, sizeof buf, "%s%.10g/%.10g/%.10g:%lld", i ? "," : "", p.probs[0] * 100, p.probs[1] * 100,
                  p.probs[2] * 100, static_cast<long long>(p.steps));
    out += buf;
    if (!(p.losses.rgb && p.losses.mask && p.losses.parsing)) {
      std::string terms;
      if (p.losses.rgb) terms += "+rgb";
      if (p.losses.mask) terms += "+mask";
      if (p.losses.parsing) terms += "+parsing";
      out += ":" + terms.substr(1);
    }
  }
  return out;
}

StepDraw draw_step(const FitSchedule& schedule, std::span<const TrainingView> views, std::uint64_t seed,
                   std::int64_t step) {
  StepDraw d;
  d.phase = schedule.phase_at(step);
  const auto& probs = schedule.phases[d.phase].probs;
  const double u = uniform01(seed, kBranchStream, static_cast<std::uint64_t>(step));
  d.branch = u < probs[0] ? Branch::A : (u < probs[0] + probs[1] ? Branch::B : Branch::Fused);

  std::int64_t total = 0;
  for (const auto& v : views) total += v.dup;
  std::int64_t pick = static_cast<std::int64_t>(uniform01(seed, kViewStream, static_cast<std::uint64_t>(step)) * total);
  pick = std::min(pick, total - 1);
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (pick < views[i].dup) {
      d.view = static_cast<int>(i);
      break;
    }
    pick -= views[i].dup;
  }
  return d;
}

template <typename T>
std::vector<TraceRow> fit(RadianceField<T>& field, std::span<const TrainingView> views, const FitConfig& config,
                          FitState<T>& state, const FitHooks<T>& hooks, std::int64_t until) {
  if (views.empty()) throw std::invalid_argument("fit: empty dataset");
  config.schedule.validate();
  if (config.rays_per_step < 1) throw std::invalid_argument("fit: rays_per_step must be positive");
  for (const auto& v : views) {
    if (v.dup < 1) throw std::invalid_argument("fit: duplication counts must be positive");
    check_target(v.target.rgb.width, v.target.rgb.height, v.target);
  }
  if (!field.differentiable()) throw NotDifferentiable(field.kind() + " field cannot be fitted");

  auto grad_field = field.zeros_like();
  ParamSet<T> params = field.parameters();
  ParamSet<T> grads = grad_field->parameters();
  if (!state.adam.matches(params)) state.adam.init(params);
  std::vector<double> lr;
  for (const auto& p : params) lr.push_back(p.name.rfind("decoder.", 0) == 0 ? config.decoder_lr : config.adam.lr);

  const std::int64_t end = until < 0 ? config.total_steps() : until;
  const std::size_t n = static_cast<std::size_t>(config.rays_per_step);
  std::vector<Ray> rays(n);
  std::vector<std::uint64_t> ids(n);
  std::vector<PixelTarget> targets(n);
  std::vector<LossTerms> losses(n);
  std::vector<TraceRow> rows;

  while (state.step < end) {
    const std::int64_t step = state.step;
    const StepDraw draw = draw_step(config.schedule, views, config.seed, step);
    const TrainingView& view = views[draw.view];
    const int w = view.target.rgb.width, h = view.target.rgb.height;
    const std::uint64_t pixels = static_cast<std::uint64_t>(w) * h;
    const std::uint64_t pixel_seed = hash_combine(config.seed, kPixelStream, static_cast<std::uint64_t>(step));
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint64_t pix = std::min<std::uint64_t>(pixels - 1, uniform01(pixel_seed, k, 0) * pixels);
      const int x = static_cast<int>(pix % w), y = static_cast<int>(pix / w);
      rays[k] = camera_ray(view.camera, (x + 0.5) / w, (y + 0.5) / h);
      ids[k] = pix;
      targets[k] = pixel_target(view.target, pix);
    }

    const LossToggles& on = config.schedule.phases[draw.phase].losses;
    LossWeights weights = config.weights;
    if (!on.rgb) weights.rgb = 0.0;
    if (!on.mask) weights.mask = 0.0;
    if (!on.parsing) weights.parsing = 0.0;

    RenderSettings settings = config.render;
    settings.seed = hash_combine(config.seed, kJitterStream, static_cast<std::uint64_t>(step));

    for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), T(0));
    const double scale = 1.0 / static_cast<double>(n);
    backprop_rays<T>(
        field, draw.branch, rays, settings,
        [&](std::size_t i, const RayResult<T>& r) {
          RayGrad<T> g;
          losses[i] = pixel_loss<T>(r, targets[i], weights, &g, scale);
          return g;
        },
        *grad_field, ids);

    TraceRow row;
    row.step = step;
    row.phase = draw.phase;
    row.branch = draw.branch;
    row.view = draw.view;
    for (const auto& l : losses) {
      row.loss.rgb += l.rgb;
      row.loss.mask += l.mask;
      row.loss.parsing += l.parsing;
      row.loss.total += l.total;
    }
    row.loss.rgb *= scale;
    row.loss.mask *= scale;
    row.loss.parsing *= scale;
    row.loss.total *= scale;
    if (!std::isfinite(row.loss.total))
      throw NumericalError("non-finite loss at step " + std::to_string(step) + " (branch " + to_string(draw.branch) +
                           ", view " + std::to_string(draw.view) + ")");

    adam_step(params, grads, state.adam, config.adam, field.active_parameters(draw.branch), lr);
    ++state.step;
    if (hooks.on_step) hooks.on_step(row);
    rows.push_back(row);
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(field, state);
  }
  return rows;
}

template <typename T>
std::vector<Tensor> fit_state_tensors(RadianceField<T>& field, const FitState<T>& state) {
  ParamSet<T> params = field.parameters();
  std::vector<Tensor> out = tensors_from(params);
  if (state.adam.matches(params)) {
    Tensor steps{"adam.steps", {static_cast<std::uint32_t>(params.size())}, {}};
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.push_back({"adam.m." + params[i].name, params[i].shape,
                     std::vector<float>(state.adam.m[i].begin(), state.adam.m[i].end())});
      out.push_back({"adam.v." + params[i].name, params[i].shape,
                     std::vector<float>(state.adam.v[i].begin(), state.adam.v[i].end())});
      steps.data.push_back(static_cast<float>(state.adam.steps[i]));
    }
    out.push_back(std::move(steps));
  }
  out.push_back({"fit.step", {1}, {static_cast<float>(state.step)}});
  return out;
}

template <typename T>
void restore_fit_state(RadianceField<T>& field, FitState<T>& state, const std::vector<Tensor>& tensors) {
  ParamSet<T> params = field.parameters();
  load_into(params, tensors);
  state.adam.init(params);
  if (const Tensor* steps = find_tensor(tensors, "adam.steps")) {
    if (steps->data.size() != params.size()) throw IoError("adam state does not match the field");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor* m = find_tensor(tensors, "adam.m." + params[i].name);
      const Tensor* v = find_tensor(tensors, "adam.v." + params[i].name);
      if (!m || !v || m->data.size() != params[i].data.size() || v->data.size() != params[i].data.size())
        throw IoError("adam state for '" + params[i].name + "' is missing or misshapen");
      std::copy(m->data.begin(), m->data.end(), state.adam.m[i].begin());
      std::copy(v->data.begin(), v->data.end(), state.adam.v[i].begin());
      state.adam.steps[i] = static_cast<std::uint64_t>(steps->data[i]);
    }
  }
  const Tensor* step = find_tensor(tensors, "fit.step");
  state.step = step ? static_cast<std::int64_t>(step->data.at(0)) : 0;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "step,phase,branch,view,rgb,mask,parsing,total\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%s,%d,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step), r.phase,
                  to_string(r.branch).c_str(), r.view, r.loss.rgb, r.loss.mask, r.loss.parsing, r.loss.total);
    out << buf;
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

#define SPHF_INSTANTIATE(T)                                                                                        \
  template LossTerms pixel_loss<T>(const RayResult<T>&, const PixelTarget&, const LossWeights&, RayGrad<T>*,      \
                                   double);                                                                        \
  template LossTerms loss_l2<T>(const RenderOutput<T>&, const ViewTarget&, const LossWeights&);                   \
  template std::vector<RayGrad<T>> loss_l2_backward<T>(const RenderOutput<T>&, const ViewTarget&,                 \
                                                       const LossWeights&);                                        \
  template struct AdamState<T>;                                                                                    \
  template void adam_step<T>(ParamSet<T>&, const ParamSet<T>&, AdamState<T>&, const AdamConfig&,                  \
                             const std::vector<bool>&, const std::vector<double>&);                                \
  template std::vector<TraceRow> fit<T>(RadianceField<T>&, std::span<const TrainingView>, const FitConfig&,       \
                                        FitState<T>&, const FitHooks<T>&, std::int64_t);                           \
  template std::vector<Tensor> fit_state_tensors<T>(RadianceField<T>&, const FitState<T>&);                       \
  template void restore_fit_state<T>(RadianceField<T>&, FitState<T>&, const std::vector<Tensor>&);

SPHF_INSTANTIATE(float)
SPHF_INSTANTIATE(double)
#undef SPHF_INSTANTIATE

}  // namespace sphf
