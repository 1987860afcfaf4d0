#include <cmath>
#include <random>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "sphf/optim.hpp"

using namespace sphf;

namespace {

ViewTarget constant_target(int w, int h, float rgb, float alpha, std::uint8_t label) {
  return {Image(w, h, 3, rgb), Image(w, h, 1, alpha), LabelMap(w, h, label)};
}

RenderOutput<double> constant_render(int w, int h, double rgb, double alpha) {
  RenderOutput<double> r;
  r.width = w;
  r.height = h;
  r.rgb.assign(w * h * 3, rgb);
  r.alpha.assign(w * h, alpha);
  r.logits.assign(w * h * kParsingClasses, 0.0);
  r.parsing.assign(w * h * kParsingClasses, 0.25);
  return r;
}

// Tiny synthetic training set: a coloured ball seen from a few views.
std::vector<TrainingView> ball_views(int n, int res) {
  FunctionField<double> ball([](const Vec3& p) {
    FieldSample<double> s;
    if (norm(p) < 0.25) {
      s.density = 30.0;
      s.color = {0.9, 0.3 + p.y, 0.2};
      s.parsing_logits = {0, 8, 0, 0};
    }
    return s;
  });
  std::vector<TrainingView> views;
  RenderSettings rs;
  rs.stratified = false;
  rs.n_samples = 64;
  for (int i = 0; i < n; ++i) {
    Camera cam{camera_from_yaw_pitch(2 * kPi * i / n, 0.2), {}};
    const auto out = render_image<double>(ball, Branch::Fused, cam, res, res, rs);
    TrainingView v{cam, {Image(res, res, 3), Image(res, res, 1), LabelMap(res, res)}, 1};
    for (std::size_t k = 0; k < out.rgb.size(); ++k) v.target.rgb.data[k] = static_cast<float>(out.rgb[k]);
    for (std::size_t k = 0; k < out.alpha.size(); ++k) {
      v.target.mask.data[k] = out.alpha[k] > 0.5f;
      v.target.parsing.data[k] = out.alpha[k] > 0.5f ? 1 : 0;
    }
    views.push_back(std::move(v));
  }
  return views;
}

FitConfig small_config(const std::string& phases, int rays = 64) {
  FitConfig c;
  c.schedule = FitSchedule::parse(phases);
  c.rays_per_step = rays;
  c.render.n_samples = 16;
  c.render.scene_radius = 0.35;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("loss_l2 basics") {
  const auto t = constant_target(4, 4, 0.5f, 1.0f, 1);
  auto r = constant_render(4, 4, 0.5, 1.0);
  for (int i = 0; i < 16; ++i) r.logits[i * kParsingClasses + 1] = 50.0;
  const auto same = loss_l2(r, t, LossWeights{1, 1, 1, 1});
  CHECK(same.rgb == 0.0);
  CHECK(same.mask == 0.0);
  CHECK(same.parsing < 1e-12);

  const auto off = loss_l2(constant_render(4, 4, 0.2, 0.0), t, LossWeights{1, 1, 0, 1});
  CHECK(off.rgb == doctest::Approx(0.09));
  CHECK(off.mask == doctest::Approx(1.0));
  // Uniform logits: CE = log K.
  CHECK(off.parsing == doctest::Approx(std::log(4.0)));
  CHECK(off.total == doctest::Approx(1.09));

  CHECK_THROWS_AS(loss_l2(constant_render(4, 3, 0.0, 0.0), t, LossWeights{}), std::invalid_argument);
}

TEST_CASE("loss_l2 matches a scalar-loop oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  const int w = 4, h = 2, n = w * h;
  ViewTarget t{Image(w, h, 3), Image(w, h, 1), LabelMap(w, h)};
  auto r = constant_render(w, h, 0, 0);
  for (auto& v : t.rgb.data) v = static_cast<float>(u(rng));
  for (auto& v : t.mask.data) v = static_cast<float>(u(rng));
  for (auto& v : t.parsing.data) v = static_cast<std::uint8_t>(rng() % 4);
  for (auto& v : r.rgb) v = u(rng);
  for (auto& v : r.alpha) v = u(rng);
  for (auto& v : r.logits) v = 3 * u(rng) - 1.5;
  double rgb = 0, mask = 0, ce = 0;
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) rgb += std::pow(r.rgb[i * 3 + c] - t.rgb.data[i * 3 + c], 2);
    mask += std::pow(r.alpha[i] - t.mask.data[i], 2);
    double z = 0;
    for (int k = 0; k < 4; ++k) z += std::exp(r.logits[i * 4 + k]);
    ce += -std::log(std::exp(r.logits[i * 4 + t.parsing.data[i]]) / z);
  }
  const auto got = loss_l2(r, t, LossWeights{2, 3, 0.5, 1});
  CHECK(got.rgb == doctest::Approx(rgb / (3 * n)));
  CHECK(got.mask == doctest::Approx(mask / n));
  CHECK(got.parsing == doctest::Approx(ce / n));
  CHECK(got.total == doctest::Approx(2 * rgb / (3 * n) + 3 * mask / n + 0.5 * ce / n));
}

TEST_CASE("adam closed forms") {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  ParamSet<double> ps{{"p", {2}, p}}, gs{{"p", {2}, g}};
  AdamState<double> st;
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  adam_step(ps, gs, st, cfg);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(st.steps[0] == 1);

  std::vector<double> q{0.0}, one{1.0};
  ParamSet<double> qs{{"q", {1}, q}}, os{{"q", {1}, one}};
  AdamState<double> st2;
  adam_step(qs, os, st2, cfg);
  CHECK(q[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam minimises a scalar quadratic") {
  std::vector<double> x{5.0}, g{0.0};
  ParamSet<double> ps{{"x", {1}, x}}, gs{{"x", {1}, g}};
  AdamState<double> st;
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  for (int i = 0; i < 500; ++i) {
    g[0] = 2 * (x[0] - 1.5);
    adam_step(ps, gs, st, cfg);
  }
  CHECK(std::abs(x[0] - 1.5) < 1e-3);
}

TEST_CASE("adam is odd under gradient sign flip with parameter negation") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> a(6), b(6), ga(6), gb(6);
  for (int i = 0; i < 6; ++i) {
    a[i] = n(rng);
    b[i] = -a[i];
  }
  ParamSet<double> pa{{"t", {6}, a}}, pb{{"t", {6}, b}}, sa{{"t", {6}, ga}}, sb{{"t", {6}, gb}};
  AdamState<double> st_a, st_b;
  for (int step = 0; step < 20; ++step) {
    for (int i = 0; i < 6; ++i) {
      ga[i] = n(rng);
      gb[i] = -ga[i];
    }
    adam_step(pa, sa, st_a, AdamConfig{});
    adam_step(pb, sb, st_b, AdamConfig{});
  }
  for (int i = 0; i < 6; ++i) CHECK(a[i] == -b[i]);
}

TEST_CASE("schedule parsing") {
  const auto s = FitSchedule::parse("33/33/34:2000,10/10/80:8000");
  REQUIRE(s.phases.size() == 2);
  CHECK(s.phases[0].probs[0] == doctest::Approx(0.33));
  CHECK(s.phases[0].probs[2] == doctest::Approx(0.34));
  CHECK(s.phases[1].probs[2] == doctest::Approx(0.8));
  CHECK(s.phases[0].steps == 2000);
  CHECK(s.total() == 10000);
  CHECK(s.phase_at(1999) == 0);
  CHECK(s.phase_at(2000) == 1);
  CHECK(s.phase_at(50000) == 1);
  CHECK(FitSchedule::parse(s.to_string()).to_string() == s.to_string());

  const auto t = FitSchedule::parse("0/0/1:100:rgb+mask");
  CHECK(t.phases[0].losses.rgb);
  CHECK_FALSE(t.phases[0].losses.parsing);

  CHECK_THROWS_AS(FitSchedule::parse("30/30/30:10"), std::invalid_argument);
  CHECK_THROWS_AS(FitSchedule::parse("33/33/34"), std::invalid_argument);
  CHECK_THROWS_AS(FitSchedule::parse("33/33/34:0"), std::invalid_argument);
  CHECK_THROWS_AS(FitSchedule::parse("33/33/34:10:depth"), std::invalid_argument);
  CHECK_THROWS_AS(FitSchedule::parse("a/b/c:10"), std::invalid_argument);
}

TEST_CASE("branch draws follow the phase probabilities") {
  const auto s = FitSchedule::parse("50/25/25:20000,0/0/100:1");
  std::vector<TrainingView> views(3);
  views[1].dup = 2;
  int counts[3] = {0, 0, 0}, view_counts[3] = {0, 0, 0};
  for (int step = 0; step < 20000; ++step) {
    const auto d = draw_step(s, views, 9, step);
    counts[static_cast<int>(d.branch)]++;
    view_counts[d.view]++;
  }
  CHECK(counts[0] / 20000.0 == doctest::Approx(0.5).epsilon(0.05));
  CHECK(counts[1] / 20000.0 == doctest::Approx(0.25).epsilon(0.05));
  CHECK(view_counts[1] / 20000.0 == doctest::Approx(0.5).epsilon(0.05));
  CHECK(draw_step(s, views, 9, 20000).branch == Branch::Fused);
}

TEST_CASE("untouched texels get zero gradient") {
  DualSphereField<double> f(16, 4, DecoderShape{4, 8, 8});
  f.init_random({.seed = 1});
  auto g = f.zeros_like();
  Camera cam{camera_from_yaw_pitch(0, 0), {}};
  const Ray ray = camera_ray(cam, 0.5, 0.5);
  RenderSettings s;
  s.n_samples = 8;
  backprop_rays<double>(
      f, Branch::A, std::span<const Ray>(&ray, 1), s,
      [](std::size_t, const RayResult<double>&) {
        RayGrad<double> rg;
        rg.rgb = {1, 1, 1};
        rg.alpha = 1;
        return rg;
      },
      *g);
  auto& gd = dynamic_cast<DualSphereField<double>&>(*g);
  // One ray along y = 0 touches a thin band; the set_b planes are untouched on branch A.
  for (double v : gd.set_b.theta_phi.data) CHECK(v == 0.0);
  int nonzero = 0, zero = 0;
  for (double v : gd.set_a.theta_phi.data) (v == 0.0 ? zero : nonzero)++;
  CHECK(nonzero > 0);
  CHECK(zero > nonzero);
}

TEST_CASE("branch-A steps leave set_b unchanged; fused steps move both") {
  const auto views = ball_views(4, 16);
  DualSphereField<float> f(12, 4, DecoderShape{4, 16, 16}, 0.35);
  f.init_random({.seed = 2});
  const auto b_before = f.set_b.theta_phi.data;
  const auto a_before = f.set_a.theta_phi.data;
  FitState<float> st;
  fit<float>(f, views, small_config("100/0/0:3"), st);
  CHECK(f.set_b.theta_phi.data == b_before);
  CHECK(f.set_a.theta_phi.data != a_before);
  FitState<float> st2;
  fit<float>(f, views, small_config("0/0/100:2"), st2);
  CHECK(f.set_b.theta_phi.data != b_before);
}

TEST_CASE("fit is reproducible and reduces the loss") {
  const auto views = ball_views(6, 16);
  auto run = [&](int steps) {
    DualSphereField<float> f(16, 8, DecoderShape{8, 32, 32}, 0.35);
    f.init_random({.seed = 3});
    FitState<float> st;
    auto cfg = small_config("33/33/34:" + std::to_string(steps), 128);
    cfg.adam.lr = 2e-2;
    cfg.decoder_lr = 5e-3;
    return fit<float>(f, views, cfg, st);
  };
  const auto a = run(120);
  const auto b = run(120);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].loss.total == b[i].loss.total);
  double head = 0, tail = 0;
  for (int i = 0; i < 20; ++i) {
    head += a[i].loss.total;
    tail += a[a.size() - 1 - i].loss.total;
  }
  CHECK(tail < 0.7 * head);
}

TEST_CASE("resume from fit state tensors is bit-exact") {
  const auto views = ball_views(3, 12);
  const auto cfg = small_config("33/33/34:6,10/10/80:6");
  auto fresh = [] {
    auto f = std::make_unique<DualSphereField<float>>(8, 4, DecoderShape{4, 8, 8}, 0.35);
    f->init_random({.seed = 8});
    return f;
  };
  auto straight = fresh();
  FitState<float> s1;
  const auto full = fit<float>(*straight, views, cfg, s1);

  auto first = fresh();
  FitState<float> s2;
  fit<float>(*first, views, cfg, s2, {}, 7);
  std::stringstream buf;
  write_tensors(buf, fit_state_tensors<float>(*first, s2));

  auto resumed = fresh();
  FitState<float> s3;
  restore_fit_state<float>(*resumed, s3, read_tensors(buf));
  CHECK(s3.step == 7);
  const auto rest = fit<float>(*resumed, views, cfg, s3);
  REQUIRE(rest.size() == full.size() - 7);
  for (std::size_t i = 0; i < rest.size(); ++i) CHECK(rest[i].loss.total == full[i + 7].loss.total);
  CHECK(resumed->set_a.theta_r.data == straight->set_a.theta_r.data);
}

TEST_CASE("NaN loss aborts") {
  const auto views = ball_views(2, 8);
  DualSphereField<float> f(8, 4, DecoderShape{4, 8, 8}, 0.35);
  f.init_random({.seed = 1});
  f.decoder.b3[1] = std::numeric_limits<float>::quiet_NaN();
  FitState<float> st;
  CHECK_THROWS_AS(fit<float>(f, views, small_config("0/0/1:3"), st), NumericalError);
}

TEST_CASE("fit rejects empty datasets and non-differentiable fields") {
  DualSphereField<float> f(8, 4, DecoderShape{4, 8, 8});
  FitState<float> st;
  CHECK_THROWS_AS(fit<float>(f, {}, small_config("0/0/1:3"), st), std::invalid_argument);
  EmptyField<float> e;
  const auto views = ball_views(1, 8);
  CHECK_THROWS_AS(fit<float>(e, views, small_config("0/0/1:3"), st), NotDifferentiable);
}

TEST_CASE("gradient suite") {
  for (const auto& op : gradcheck_ops()) {
    const auto r32 = finite_difference_check(op, 2, 1e-3, Precision::F32);
    const auto r64 = finite_difference_check(op, 2, 1e-6, Precision::F64);
    INFO(op);
    CHECK(r32.passed);
    CHECK(r64.passed);
  }
  CHECK(finite_difference_check("linear", 1, 1e-3, Precision::F64).max_rel_error < 1e-7);
  CHECK_THROWS_AS(finite_difference_check("nope", 1, 1e-3, Precision::F64), std::invalid_argument);
}

TEST_CASE("checkpoint container round trip and errors") {
  std::vector<Tensor> ts{{"a.theta_r", {2, 3, 1}, {1, 2, 3, 4, 5, 6}}, {"décodeur", {}, {7}}};
  std::stringstream buf;
  write_tensors(buf, ts);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "SPHF");
  // header 4 + 4 + 4; first record: 2 + 9 + 1 + 12 + 24
  CHECK(bytes.size() == 12 + (2 + 9 + 1 + 12 + 24) + (2 + 9 + 1 + 0 + 4));
  const auto back = read_tensors(buf);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a.theta_r");
  CHECK(back[0].shape == std::vector<std::uint32_t>{2, 3, 1});
  CHECK(back[0].data == ts[0].data);
  CHECK(back[1].name == "décodeur");

  std::stringstream bad("SPHG....");
  CHECK_THROWS_AS(read_tensors(bad), IoError);
  std::stringstream cut(bytes.substr(0, 30));
  CHECK_THROWS_AS(read_tensors(cut), IoError);
}
