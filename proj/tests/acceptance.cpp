// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "sphf/dataset.hpp"
#include "sphf/eval.hpp"
#include "sphf/optim.hpp"
#include "sphf/vico.hpp"

using namespace sphf;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome ac1_coordinates() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const SphereFrame fa = SphereFrame::a(), fb = SphereFrame::b();
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1.0); };
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const Vec3 p{u(rng), u(rng), u(rng)};
    const double r = norm(p);
    if (r < 1e-3) continue;
    const Vec3 q = sph_to_cart(cart_to_sph(p));
    worst = std::max(worst, norm(q - p) / r);
    const auto a = frame_coords(fa, p), b = frame_coords(fb, p);
    worst = std::max({worst, rel(a.r, r), rel(a.theta, std::acos(p.y / r)), rel(a.phi, std::atan2(p.x, p.z))});
    worst = std::max({worst, rel(b.r, r), rel(b.theta, std::acos(-p.x / r)), rel(b.phi, std::atan2(-p.y, -p.z))});
  }
  const double t = seconds_since(t0);
  return {worst < 1e-5 && t < 5.0, fmt("max rel err %.3g over 1e5 points, %.2f s", worst, t)};
}

Outcome ac2_weights() {
  bool ok = fusion_weight(kPi / 2, 0.0) == 1.0;
  double edge = 0.0;
  const float eps = std::numeric_limits<float>::epsilon();
  for (int i = 0; i <= 1000; ++i) {
    const double s = -kPi + 2 * kPi * i / 1000, t = kPi * i / 1000;
    edge = std::max({edge, std::abs(fusion_weight(0.0, s)), std::abs(fusion_weight(kPi, s)),
                     std::abs(fusion_weight(t, kPi)), std::abs(fusion_weight(t, -kPi))});
  }
  ok = ok && edge <= eps;
  const double cover = weight_cover_min(512);
  constexpr double kFixture = 0.4375011500294365;
  ok = ok && cover > 0.0 && std::abs(cover - kFixture) < 1e-6;
  return {ok, fmt("w(pi/2,0)=%.17g, max edge w=%.3g, cover min(512^2)=%.16g (fixture %.16g)",
                  fusion_weight(kPi / 2, 0.0), edge, cover, kFixture)};
}

Outcome ac3_gradients() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst32 = 0.0, worst64 = 0.0;
  std::string failed;
  for (const auto& op : gradcheck_ops()) {
    const auto r32 = finite_difference_check(op, 3, 1e-3, Precision::F32, 11);
    const auto r64 = finite_difference_check(op, 3, 1e-6, Precision::F64, 11);
    worst32 = std::max(worst32, r32.max_rel_error);
    worst64 = std::max(worst64, r64.max_rel_error);
    if (!r32.passed || !r64.passed) {
      ok = false;
      failed += " " + op;
    }
  }
  const double t = seconds_since(t0);
  ok = ok && t < 120.0;
  return {ok, fmt("%zu ops incl. 8x8 render loss; worst f32 %.3g (<1e-3), f64 %.3g (<1e-6), %.1f s%s",
                  gradcheck_ops().size(), worst32, worst64, t, failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome ac4_renderer() {
  // Homogeneous ball of radius 0.3 inside the scene sphere; chords from the analytic intersection.
  const double sigma = 3.0, radius = 0.3;
  FunctionField<double> ball([=](const Vec3& p) {
    FieldSample<double> s;
    if (norm(p) < radius) {
      s.density = sigma;
      s.color = {0.2, 0.4, 0.6};
    }
    return s;
  });
  RenderSettings rs;
  rs.n_samples = 256;
  rs.seed = 5;
  std::vector<Ray> rays;
  for (int i = 0; i < 32; ++i) {
    Ray r;
    r.origin = {0.28 * i / 32.0, 0.0, 2.7};
    r.direction = {0, 0, -1};
    rays.push_back(r);
  }
  const auto out = render_rays<double>(ball, Branch::Fused, rays, rs);
  double worst_alpha = 0.0;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const double off = rays[i].origin.x;
    const double expect = 1 - std::exp(-sigma * 2 * std::sqrt(radius * radius - off * off));
    worst_alpha = std::max(worst_alpha, std::abs(out[i].alpha - expect) / expect);
  }

  FunctionField<double> slabs([](const Vec3& p) {
    FieldSample<double> s;
    if (p.z > 0.1 && p.z < 0.3) {
      s.density = 4.0;
      s.color = {1.0, 0.0, 0.0};
    } else if (p.z > -0.35 && p.z < -0.05) {
      s.density = 9.0;
      s.color = {0.0, 0.0, 1.0};
    }
    return s;
  });
  // Profile: a row of rays across the slabs, each against a 1e4-step midpoint integrator.
  double worst_slab = 0.0;
  for (int i = 0; i < 16; ++i) {
    Ray ray;
    ray.origin = {-0.3 + 0.04 * i, 0.02, 2.7};
    ray.direction = {0, 0, -1};
    const auto got = render_rays<double>(slabs, Branch::Fused, std::span<const Ray>(&ray, 1), rs)[0];
    const auto b = *ray_sphere_bounds(ray, rs.scene_radius);
    const int n = 10000;
    const double dt = (b.second - b.first) / n;
    double trans = 1, rgb[3] = {0, 0, 0};
    for (int k = 0; k < n; ++k) {
      const auto smp = slabs.sample(ray.origin + ray.direction * (b.first + (k + 0.5) * dt), Branch::Fused);
      const double a = 1 - std::exp(-smp.density * dt);
      for (int c = 0; c < 3; ++c) rgb[c] += trans * a * smp.color[c];
      trans *= 1 - a;
    }
    worst_slab = std::max(worst_slab, std::abs(got.alpha - (1 - trans)) / (1 - trans));
    for (int c = 0; c < 3; ++c) worst_slab = std::max(worst_slab, std::abs(got.rgb[c] - (rgb[c] + trans)));
  }
  return {worst_alpha < 0.01 && worst_slab < 0.01,
          fmt("homogeneous alpha rel err %.3g (256 samples), two-slab max err %.3g vs 1e4-step reference",
              worst_alpha, worst_slab)};
}

std::vector<TrainingView> training_set(const SyntheticHeadScene& scene, const DatasetSpec& spec) {
  std::vector<TrainingView> views;
  for (auto& v : render_views(scene, spec)) views.push_back(training_view(v.camera, v.images));
  return views;
}

FitConfig desk_fit(std::int64_t steps, int rays) {
  FitConfig cfg;
  cfg.schedule = FitSchedule::parse("33/33/34:" + std::to_string(steps / 5) + ",10/10/80:" +
                                    std::to_string(steps - steps / 5));
  cfg.rays_per_step = rays;
  cfg.render.n_samples = 32;
  cfg.render.scene_radius = 0.35;
  return cfg;
}

Outcome ac5_fitting() {
  const auto t0 = Clock::now();
  SyntheticHeadScene scene;
  DatasetSpec spec;
  spec.count = 64;
  spec.resolution = 64;
  spec.seed = 1;
  const auto views = training_set(scene, spec);
  spec.count = 4;
  spec.seed = 99;
  const auto held = render_views(scene, spec);

  DualSphereField<float> field(64, 16, DecoderShape{16, 32, 32}, 0.35);
  field.init_random({.seed = 3});
  FitConfig cfg = desk_fit(1000, 512);
  cfg.seed = 7;
  FitState<float> state;
  fit<float>(field, views, cfg, state);

  RenderSettings rs = cfg.render;
  rs.stratified = false;
  double mean = 0.0;
  for (const auto& h : held)
    mean += psnr(rgb_image(render_image<float>(field, Branch::Fused, h.camera, 64, 64, rs)), h.images.rgb);
  mean /= held.size();
  // Frozen fixture: calibration runs of this configuration reach ~28.3 dB.
  constexpr double kFixtureDb = 25.0;
  const double t = seconds_since(t0);
  return {mean >= kFixtureDb && t < 1800.0,
          fmt("held-out PSNR %.2f dB after %lld steps (fixture %.1f dB), %.0f s", mean,
              static_cast<long long>(state.step), kFixtureDb, t)};
}

Outcome ac6_entanglement() {
  const auto t0 = Clock::now();
  // Analytic part: z-mirror pairs off the equator.
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-0.45, 0.45);
  std::vector<std::pair<Vec3, Vec3>> pairs;
  while (pairs.size() < 400) {
    const Vec3 p{u(rng), u(rng), u(rng)};
    if (norm(p) > 0.45 || std::abs(p.z) < 0.1) continue;
    pairs.push_back({p, {p.x, p.y, -p.z}});
  }
  const LookupGeometry g;
  const auto tri = shared_lookup_fraction(RepresentationKind::TriPlane, g, pairs);
  const auto sph = shared_lookup_fraction(RepresentationKind::Sphere, g, pairs);
  const bool analytic = tri.plane("xy") == 1.0 && tri.overall == 1.0 / 3.0 && sph.plane("theta_phi") == 0.0 &&
                        sph.plane("theta_r") == 0.0;

  int wins = 0;
  double mean_tri = 0.0, mean_dual = 0.0;
  const int seeds = 10;
  for (int seed = 0; seed < seeds; ++seed) {
    SyntheticHeadScene scene;
    scene.seed = seed;
    DatasetSpec spec;
    spec.views = ViewSampler::parse("front");
    spec.count = 24;
    spec.resolution = 48;
    spec.seed = 10 + seed;
    const auto views = training_set(scene, spec);
    FitConfig cfg = desk_fit(300, 256);
    cfg.seed = 100 + seed;
    RenderSettings rs = cfg.render;
    rs.stratified = false;
    const Camera front{camera_from_yaw_pitch(0, 0), {}}, back{camera_from_yaw_pitch(kPi, 0), {}};
    const FieldInit init{.seed = 1000u + seed};
    CartesianField<float> tri_field(BaselineKind::TriPlane, 64, 16, DecoderShape{16, 32, 32}, 0.35);
    DualSphereField<float> dual_field(64, 16, DecoderShape{16, 32, 32}, 0.35);
    tri_field.init_random(init);
    dual_field.init_random(init);
    FitState<float> s1, s2;
    fit<float>(tri_field, views, cfg, s1);
    fit<float>(dual_field, views, cfg, s2);
    const double lt = mirror_leakage<float>(tri_field, Branch::Fused, scene, front, back, 64, rs);
    const double ld = mirror_leakage<float>(dual_field, Branch::Fused, scene, front, back, 64, rs);
    wins += lt > ld;
    mean_tri += lt / seeds;
    mean_dual += ld / seeds;
  }
  return {analytic && wins >= 9,
          fmt("leakage tri-plane > dual-sphere in %d/10 seeds (mean %.3f vs %.3f); shared P_XY %.4f, overall "
              "%.17g, sphere P_theta_phi %.1f P_theta_r %.1f; %.0f s",
              wins, mean_tri, mean_dual, tri.plane("xy"), tri.overall, sph.plane("theta_phi"), sph.plane("theta_r"),
              seconds_since(t0))};
}

Outcome ac7_seams() {
  // Thresholds frozen from a 20-trial calibration (resolution 64, 32 channels, 200 probes):
  // single branches >= 109x, fused <= 1.91x.
  double min_a = 1e300, min_b = 1e300, max_fused = 0.0;
  for (int t = 0; t < 20; ++t) {
    DualSphereField<double> f(64, 32, DecoderShape{32, 8, 8});
    f.init_random({.seed = 100u + t, .plane_std = 0.1});
    min_a = std::min(min_a, seam_discontinuity<double>(f, Branch::A, 200, 1e-3, t).normalized);
    min_b = std::min(min_b, seam_discontinuity<double>(f, Branch::B, 200, 1e-3, t).normalized);
    max_fused = std::max(max_fused, seam_discontinuity<double>(f, Branch::Fused, 200, 1e-3, t).normalized);
  }
  return {min_a > 5.0 && min_b > 5.0 && max_fused <= 2.0,
          fmt("20 random fields: min normalized jump A %.1f, B %.1f (> 5); max fused %.2f (<= 2)", min_a, min_b,
              max_fused)};
}

Outcome ac8_vico() {
  const auto t0 = Clock::now();
  SyntheticHeadScene scene;
  DatasetSpec spec;
  spec.views = ViewSampler::parse("imbalanced");
  spec.resolution = 64;
  spec.count = 600;
  spec.seed = 1;
  const auto train = vico_samples(render_views(scene, spec));
  spec.count = 300;
  spec.seed = 2;
  const auto held = vico_samples(render_views(scene, spec));
  VicoTrainConfig cfg;
  const auto rows = run_vico_experiment(train, held, {0, 1, 2, 3, 4}, cfg);
  int reached = 0;
  double min_acc = 1.0, min_delta = 1e9;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const double d = rows[i + 1].auc - rows[i].auc;
    reached += d >= 0.15;
    min_delta = std::min(min_delta, d);
    min_acc = std::min({min_acc, rows[i].accuracy, rows[i + 1].accuracy});
  }
  const double t = seconds_since(t0);
  return {reached >= 4 && min_acc > 0.9 && t < 600.0,
          fmt("AUC delta >= 0.15 in %d/5 seeds (min delta %.3f), min real-vs-corrupted acc %.3f, %.0f s", reached,
              min_delta, min_acc, t)};
}

Outcome ac9_balancing() {
  auto bin_of = [](int per_bin, int bin) {
    Manifest m(per_bin);
    for (auto& r : m) r.bin = bin;
    return m;
  };
  struct Case {
    int n, thresh, dup;
  };
  const Case cases[] = {{500, 2000, 4}, {2000, 2000, 1}, {1999, 2000, 2}, {600, 2000, 4},
                        {1, 2000, 2000}, {3000, 2000, 1}, {7, 20, 3},      {20, 20, 1}};
  bool ok = true;
  for (const auto& c : cases)
    for (const auto& r : balance_views(bin_of(c.n, 5), c.thresh)) ok = ok && r.dup == c.dup;
  // Mixed bins are balanced independently.
  Manifest mixed = bin_of(500, 0);
  const Manifest other = bin_of(30, 35);
  mixed.insert(mixed.end(), other.begin(), other.end());
  for (const auto& r : balance_views(mixed, 2000)) ok = ok && r.dup == (r.bin == 0 ? 4 : 67);
  return {ok, "N_dup = 1 if N >= N_thresh else ceil(N_thresh / N), incl. 500 -> 4; exact on 9 manifests"};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sphf");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "sphf %s failed (%d): %s\n", args[1].c_str(), code, err.str().c_str());
  return code;
}

Outcome ac10_determinism() {
  const fs::path dir = fs::temp_directory_path() / ("sphf_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  const std::string d = dir.string();
  bool ok = cli({"make-dataset", "--count", "6", "--res", "16", "--out", d + "/ds"}) == 0;
  auto fit_args = [&](const std::string& out, const std::string& steps) {
    return std::vector<std::string>{"fit",      "--data", d + "/ds", "--steps",   steps,     "--phases",
                                    "33/33/34:4,10/10/80:6",       "--rays",    "96",      "--plane-res",
                                    "16",       "--channels",       "8",         "--hidden", "16", "--threads",
                                    "2",        "--deterministic",  "--out",     d + "/" + out};
  };
  ok = ok && cli(fit_args("straight", "10")) == 0;
  ok = ok && cli(fit_args("first", "5")) == 0;
  auto resumed = fit_args("resumed", "10");
  resumed.push_back("--resume");
  resumed.push_back(d + "/first/checkpoint.sphf");
  ok = ok && cli(resumed) == 0;
  const bool fit_same = ok && slurp(dir / "straight/checkpoint.sphf") == slurp(dir / "resumed/checkpoint.sphf");

  bool render_same = true;
  for (const std::string out : {"r1", "r2"})
    ok = ok && cli({"render", "--ckpt", d + "/straight/checkpoint.sphf", "--views", "4", "--res", "24", "--threads",
                    "2", "--deterministic", "--out", d + "/" + out}) == 0;
  for (int i = 0; ok && i < 4; ++i) {
    const std::string name = fmt("turntable_fused_%03d.png", i);
    render_same = render_same && slurp(dir / "r1" / name) == slurp(dir / "r2" / name) &&
                  !slurp(dir / "r1" / name).empty();
  }
  fs::remove_all(dir);
  return {ok && fit_same && render_same,
          fmt("fit 10 steps straight vs 5 + resume: checkpoints %s; repeated render: PNGs %s",
              fit_same ? "bit-identical" : "DIFFER", render_same ? "bit-identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC1 coordinates", ac1_coordinates}, {"AC2 weight map", ac2_weights},
      {"AC3 gradients", ac3_gradients},     {"AC4 renderer oracle", ac4_renderer},
      {"AC5 fitting", ac5_fitting},         {"AC6 entanglement", ac6_entanglement},
      {"AC7 seams", ac7_seams},             {"AC8 vico", ac8_vico},
      {"AC9 balancing", ac9_balancing},     {"AC10 determinism", ac10_determinism}};
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
