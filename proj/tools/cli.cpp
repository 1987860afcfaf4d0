#include "cli.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sphf/eval.hpp"
#include "sphf/optim.hpp"
#include "sphf/parallel.hpp"
#include "sphf/vico.hpp"

#ifndef SPHF_VERSION
#define SPHF_VERSION "dev"
#endif

namespace sphf::cli {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using json = nlohmann::ordered_json;

std::string to_string(Repr r) {
  switch (r) {
    case Repr::DualSphere: return "dual-sphere";
    case Repr::SingleSphere: return "single-sphere";
    case Repr::TriPlane: return "tri-plane";
    case Repr::TriGrid: return "tri-grid";
  }
  return "?";
}

Repr repr_from_string(const std::string& s) {
  for (Repr r : {Repr::DualSphere, Repr::SingleSphere, Repr::TriPlane, Repr::TriGrid})
    if (to_string(r) == s) return r;
  throw ValidationError("unknown representation '" + s + "' (dual-sphere, single-sphere, tri-plane, tri-grid)");
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace

void RunConfig::validate() const {
  require(field.resolution >= 2, "field.resolution must be >= 2");
  require(field.channels >= 1, "field.channels must be >= 1");
  require(field.hidden >= 1, "field.hidden must be >= 1");
  require(field.depth >= 2, "field.depth must be >= 2");
  require(field.radius > 0, "field.radius must be positive");
  require(fit.steps >= 0, "fit.steps must be >= 0");
  require(fit.rays >= 1, "fit.rays must be >= 1");
  require(fit.lr > 0 && fit.decoder_lr > 0, "learning rates must be positive");
  require(fit.w_rgb >= 0 && fit.w_mask >= 0 && fit.w_parsing >= 0, "loss weights must be >= 0");
  require(fit.pyramid >= 1, "fit.pyramid must be >= 1");
  require(fit.checkpoint_every >= 0, "fit.checkpoint_every must be >= 0");
  require(render.samples >= 2, "render.samples must be >= 2");
  require(render.scene_radius > 0, "render.scene_radius must be positive");
  require(dataset.count >= 1, "dataset.count must be >= 1");
  require(dataset.resolution >= 4, "dataset.resolution must be >= 4");
  require(dataset.supersample >= 1, "dataset.supersample must be >= 1");
  require(dataset.n_thresh >= 1, "dataset.n_thresh must be >= 1");
  require(threads >= 0, "threads must be >= 0");
  require(!out.empty(), "output directory must not be empty");
  try {
    FitSchedule::parse(fit.phases).validate();
    ViewSampler::parse(dataset.views);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

std::string RunConfig::to_ini() const {
  pt::ptree t;
  t.put("scene.seed", scene_seed);
  t.put("field.repr", to_string(field.repr));
  t.put("field.resolution", field.resolution);
  t.put("field.channels", field.channels);
  t.put("field.hidden", field.hidden);
  t.put("field.depth", field.depth);
  t.put("field.radius", field.radius);
  t.put("field.init_seed", field.init_seed);
  t.put("fit.phases", fit.phases);
  t.put("fit.steps", fit.steps);
  t.put("fit.rays", fit.rays);
  t.put("fit.lr", fit.lr);
  t.put("fit.decoder_lr", fit.decoder_lr);
  t.put("fit.w_rgb", fit.w_rgb);
  t.put("fit.w_mask", fit.w_mask);
  t.put("fit.w_parsing", fit.w_parsing);
  t.put("fit.pyramid", fit.pyramid);
  t.put("fit.seed", fit.seed);
  t.put("fit.checkpoint_every", fit.checkpoint_every);
  t.put("render.samples", render.samples);
  t.put("render.scene_radius", render.scene_radius);
  t.put("render.stratified", render.stratified);
  t.put("render.seed", render.seed);
  t.put("dataset.views", dataset.views);
  t.put("dataset.count", dataset.count);
  t.put("dataset.resolution", dataset.resolution);
  t.put("dataset.supersample", dataset.supersample);
  t.put("dataset.seed", dataset.seed);
  t.put("dataset.balance", dataset.balance);
  t.put("dataset.n_thresh", dataset.n_thresh);
  t.put("run.out", out);
  t.put("run.threads", threads);
  t.put("run.deterministic", deterministic);
  std::ostringstream s;
  s.precision(17);
  pt::write_ini(s, t);
  return s.str();
}

RunConfig RunConfig::from_ini(const std::string& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path);
  pt::ptree t;
  try {
    pt::read_ini(path, t);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  RunConfig c;
  try {
    c.scene_seed = t.get("scene.seed", c.scene_seed);
    c.field.repr = repr_from_string(t.get("field.repr", to_string(c.field.repr)));
    c.field.resolution = t.get("field.resolution", c.field.resolution);
    c.field.channels = t.get("field.channels", c.field.channels);
    c.field.hidden = t.get("field.hidden", c.field.hidden);
    c.field.depth = t.get("field.depth", c.field.depth);
    c.field.radius = t.get("field.radius", c.field.radius);
    c.field.init_seed = t.get("field.init_seed", c.field.init_seed);
    c.fit.phases = t.get("fit.phases", c.fit.phases);
    c.fit.steps = t.get("fit.steps", c.fit.steps);
    c.fit.rays = t.get("fit.rays", c.fit.rays);
    c.fit.lr = t.get("fit.lr", c.fit.lr);
    c.fit.decoder_lr = t.get("fit.decoder_lr", c.fit.decoder_lr);
    c.fit.w_rgb = t.get("fit.w_rgb", c.fit.w_rgb);
    c.fit.w_mask = t.get("fit.w_mask", c.fit.w_mask);
    c.fit.w_parsing = t.get("fit.w_parsing", c.fit.w_parsing);
    c.fit.pyramid = t.get("fit.pyramid", c.fit.pyramid);
    c.fit.seed = t.get("fit.seed", c.fit.seed);
    c.fit.checkpoint_every = t.get("fit.checkpoint_every", c.fit.checkpoint_every);
    c.render.samples = t.get("render.samples", c.render.samples);
    c.render.scene_radius = t.get("render.scene_radius", c.render.scene_radius);
    c.render.stratified = t.get("render.stratified", c.render.stratified);
    c.render.seed = t.get("render.seed", c.render.seed);
    c.dataset.views = t.get("dataset.views", c.dataset.views);
    c.dataset.count = t.get("dataset.count", c.dataset.count);
    c.dataset.resolution = t.get("dataset.resolution", c.dataset.resolution);
    c.dataset.supersample = t.get("dataset.supersample", c.dataset.supersample);
    c.dataset.seed = t.get("dataset.seed", c.dataset.seed);
    c.dataset.balance = t.get("dataset.balance", c.dataset.balance);
    c.dataset.n_thresh = t.get("dataset.n_thresh", c.dataset.n_thresh);
    c.out = t.get("run.out", c.out);
    c.threads = t.get("run.threads", c.threads);
    c.deterministic = t.get("run.deterministic", c.deterministic);
  } catch (const pt::ptree_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

std::unique_ptr<NeuralField<float>> build_field(const FieldConfig& c) {
  const DecoderShape d{c.channels, c.hidden, c.hidden};
  const FieldInit init{.seed = c.init_seed};
  switch (c.repr) {
    case Repr::DualSphere: {
      auto f = std::make_unique<DualSphereField<float>>(c.resolution, c.channels, d, c.radius);
      f->init_random(init);
      return f;
    }
    case Repr::SingleSphere: {
      auto f = std::make_unique<SingleSphereField<float>>(c.resolution, c.channels, d, c.radius);
      f->init_random(init);
      return f;
    }
    case Repr::TriPlane:
    case Repr::TriGrid: {
      const auto kind = c.repr == Repr::TriPlane ? BaselineKind::TriPlane : BaselineKind::TriGrid;
      auto f = std::make_unique<CartesianField<float>>(kind, c.resolution, c.channels, d, c.radius, c.depth);
      f->init_random(init);
      return f;
    }
  }
  throw ValidationError("unknown representation");
}

// The radius goes in as four 16-bit chunks of its double bits; each chunk is exact in f32.
Tensor field_meta(const FieldConfig& c) {
  const auto bits = std::bit_cast<std::uint64_t>(c.radius);
  Tensor t{"meta.field",
           {9},
           {static_cast<float>(static_cast<int>(c.repr)), static_cast<float>(c.resolution),
            static_cast<float>(c.channels), static_cast<float>(c.hidden), static_cast<float>(c.depth)}};
  for (int k = 0; k < 4; ++k) t.data.push_back(static_cast<float>((bits >> (16 * k)) & 0xffff));
  return t;
}

FieldConfig field_config_from(const std::vector<Tensor>& tensors) {
  const Tensor* m = find_tensor(tensors, "meta.field");
  if (!m || m->data.size() != 9) throw ValidationError("checkpoint has no meta.field record");
  const int repr = static_cast<int>(m->data[0]);
  if (repr < 0 || repr > 3) throw ValidationError("checkpoint: unknown representation id");
  FieldConfig c;
  c.repr = static_cast<Repr>(repr);
  c.resolution = static_cast<int>(m->data[1]);
  c.channels = static_cast<int>(m->data[2]);
  c.hidden = static_cast<int>(m->data[3]);
  c.depth = static_cast<int>(m->data[4]);
  std::uint64_t bits = 0;
  for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint64_t>(m->data[5 + k]) << (16 * k);
  c.radius = std::bit_cast<double>(bits);
  return c;
}

std::unique_ptr<RadianceField<float>> load_field(const std::string& path) {
  const auto tensors = load_tensors(path);
  if (tensors.empty()) return std::make_unique<EmptyField<float>>();
  auto field = build_field(field_config_from(tensors));
  auto params = field->parameters();
  try {
    load_into(params, tensors);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
  return field;
}

namespace {

struct Context {
  std::string command;
  std::vector<std::string> args;
  RunConfig cfg;
  std::ostream* out = nullptr;
};

std::string digest_of(const Context& ctx, const std::string& extra = "") {
  return config_digest(ctx.command + "\n" + ctx.cfg.to_ini() + extra);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

void write_provenance(const Context& ctx, const json& extra, const std::string& digest_extra = "") {
  json j;
  j["command"] = ctx.command;
  j["version"] = SPHF_VERSION;
  j["argv"] = ctx.args;
  j["config"] = ctx.cfg.to_ini();
  j["config_digest"] = digest_of(ctx, digest_extra);
  j["details"] = extra;
  write_text(fs::path(ctx.cfg.out) / "provenance.json", j.dump(2) + "\n");
}

RenderSettings render_settings(const RunConfig& c) {
  RenderSettings s;
  s.n_samples = c.render.samples;
  s.scene_radius = c.render.scene_radius;
  s.stratified = c.render.stratified;
  s.seed = c.render.seed;
  s.threads = resolve_threads(c.threads);
  s.deterministic = c.deterministic;
  return s;
}

SyntheticHeadScene scene_of(const RunConfig& c) {
  SyntheticHeadScene s;
  s.seed = c.scene_seed;
  return s;
}

// ---------------------------------------------------------------------------

int cmd_make_dataset(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  c.validate();
  DatasetSpec spec;
  spec.views = ViewSampler::parse(c.dataset.views);
  spec.count = c.dataset.count;
  spec.resolution = c.dataset.resolution;
  spec.supersample = c.dataset.supersample;
  spec.seed = c.dataset.seed;
  spec.threads = resolve_threads(c.threads);

  make_out_dir(c.out);
  Manifest m = make_dataset(scene_of(c), spec, c.out);
  if (c.dataset.balance) {
    m = balance_views(m, c.dataset.n_thresh);
    write_manifest((fs::path(c.out) / "manifest.jsonl").string(), m);
  }
  write_provenance(ctx, {{"views", m.size()}, {"balanced", c.dataset.balance}});
  *ctx.out << "wrote " << m.size() << " views to " << c.out << "\n";
  return kOk;
}

struct FitArgs {
  std::string data;
  std::string resume;
};

int cmd_fit(Context& ctx, const FitArgs& a) {
  RunConfig& c = ctx.cfg;
  c.validate();
  const FitSchedule schedule = FitSchedule::parse(c.fit.phases);
  const fs::path data(a.data);
  const Manifest manifest = read_manifest((data / "manifest.jsonl").string());
  require(!manifest.empty(), "dataset manifest is empty");

  std::vector<Tensor> resume_tensors;
  if (!a.resume.empty()) {
    resume_tensors = load_tensors(a.resume);
    c.field = [&] {
      FieldConfig f = field_config_from(resume_tensors);
      f.init_seed = c.field.init_seed;
      return f;
    }();
  }
  const auto views = load_training_views(manifest, data.string());

  auto field = build_field(c.field);
  FitState<float> state;
  if (!resume_tensors.empty()) restore_fit_state<float>(*field, state, resume_tensors);

  FitConfig fc;
  fc.schedule = schedule;
  fc.steps = c.fit.steps;
  fc.rays_per_step = c.fit.rays;
  fc.adam.lr = c.fit.lr;
  fc.decoder_lr = c.fit.decoder_lr;
  fc.weights = {c.fit.w_rgb, c.fit.w_mask, c.fit.w_parsing, c.fit.pyramid};
  fc.render = render_settings(c);
  fc.seed = c.fit.seed;
  fc.checkpoint_every = c.fit.checkpoint_every;
  require(state.step <= fc.total_steps(), "checkpoint is past the requested step count");

  const fs::path out(c.out);
  make_out_dir(out);
  const Tensor meta = field_meta(c.field);
  auto checkpoint = [&](RadianceField<float>& f, const FitState<float>& s, const fs::path& path) {
    auto tensors = fit_state_tensors<float>(f, s);
    tensors.push_back(meta);
    save_tensors(path.string(), tensors);
  };
  FitHooks<float> hooks;
  hooks.on_checkpoint = [&](RadianceField<float>& f, const FitState<float>& s) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_%06lld.sphf", static_cast<long long>(s.step));
    checkpoint(f, s, out / name);
  };
  const std::int64_t start = state.step;
  const auto rows = fit<float>(*field, views, fc, state, hooks);
  checkpoint(*field, state, out / "checkpoint.sphf");
  write_trace_csv((out / "loss.csv").string(), rows);
  write_provenance(ctx, {{"data", a.data},
                         {"resume", a.resume},
                         {"start_step", start},
                         {"end_step", state.step},
                         {"schedule", schedule.to_string()}});
  if (!rows.empty())
    *ctx.out << "fit " << to_string(c.field.repr) << " steps " << start << ".." << state.step << " final loss "
             << rows.back().loss.total << "\n";
  return kOk;
}

struct RenderArgs {
  std::string ckpt;
  int views = 8;
  std::string branch = "fused";
  int resolution = 64;
  double pitch_deg = 0.0;
};

int cmd_render(Context& ctx, const RenderArgs& a) {
  const RunConfig& c = ctx.cfg;
  c.validate();
  require(a.views >= 1, "--views must be >= 1");
  require(a.resolution >= 1, "--res must be >= 1");
  require(std::abs(a.pitch_deg) < 89.0, "--pitch must be within (-89, 89) degrees");
  Branch branch;
  try {
    branch = branch_from_string(a.branch);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  const auto field = load_field(a.ckpt);
  const RenderSettings rs = render_settings(c);

  make_out_dir(c.out);
  json files = json::array();
  for (int i = 0; i < a.views; ++i) {
    const double yaw = 2 * kPi * i / a.views;
    const Camera cam{camera_from_yaw_pitch(yaw, a.pitch_deg * kPi / 180.0), {}};
    const auto img = render_image<float>(*field, branch, cam, a.resolution, a.resolution, rs);
    char name[64];
    std::snprintf(name, sizeof name, "turntable_%s_%03d.png", to_string(branch).c_str(), i);
    write_png((fs::path(c.out) / name).string(), rgb_image(img));
    files.push_back(name);
  }
  write_provenance(ctx, {{"checkpoint", a.ckpt}, {"field", field->kind()}, {"files", files}});
  *ctx.out << "rendered " << a.views << " views of " << field->kind() << "\n";
  return kOk;
}

struct ProbeArgs {
  std::string metric;
  std::vector<std::string> ckpts;
  int trials = 3;
  double tol_f32 = 1e-3;
  double tol_f64 = 1e-6;
  std::string ops;
  int probes = 200;
  double delta = 1e-3;
  std::uint64_t probe_seed = 0;
  int resolution = 64;
  int grid = 512;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_probe(Context& ctx, const ProbeArgs& a) {
  const RunConfig& c = ctx.cfg;
  c.validate();
  const std::string m = a.metric;
  require(m == "gradcheck" || m == "seam" || m == "leakage" || m == "coverage",
          "--metric must be gradcheck, seam, leakage or coverage");
  std::ostringstream opts;
  opts << m << ";" << a.trials << ";" << a.tol_f32 << ";" << a.tol_f64 << ";" << a.ops << ";" << a.probes << ";"
       << a.delta << ";" << a.probe_seed << ";" << a.resolution << ";" << a.grid;
  for (const auto& p : a.ckpts) opts << ";" << p;
  const std::string digest = digest_of(ctx, opts.str());
  json report;
  report["metric"] = m;
  report["config_digest"] = digest;
  int code = kOk;

  if (m == "gradcheck") {
    require(a.trials >= 1, "--trials must be >= 1");
    std::vector<std::string> ops = a.ops.empty() ? gradcheck_ops() : split(a.ops, ',');
    const auto known = gradcheck_ops();
    for (const auto& op : ops) require(std::find(known.begin(), known.end(), op) != known.end(), "unknown op " + op);
    make_out_dir(c.out);
    json rows = json::array();
    for (const auto& op : ops)
      for (auto [prec, tol] : {std::pair{Precision::F32, a.tol_f32}, std::pair{Precision::F64, a.tol_f64}}) {
        const auto r = finite_difference_check(op, a.trials, tol, prec, a.probe_seed);
        rows.push_back({{"op", op},
                        {"precision", prec == Precision::F32 ? "f32" : "f64"},
                        {"max_rel_error", r.max_rel_error},
                        {"tolerance", tol},
                        {"checked", r.checked},
                        {"passed", r.passed}});
        if (!r.passed) code = kNumerical;
      }
    report["results"] = rows;
    report["passed"] = code == kOk;
  } else if (m == "seam") {
    require(a.probes >= 2, "--probes must be >= 2");
    require(a.delta > 0 && a.delta < 0.1, "--delta must be in (0, 0.1)");
    require(a.ckpts.size() <= 1, "seam takes at most one --ckpt");
    std::unique_ptr<RadianceField<float>> field;
    if (a.ckpts.empty()) {
      FieldConfig fc = c.field;
      fc.repr = Repr::DualSphere;
      auto f = std::make_unique<DualSphereField<float>>(fc.resolution, fc.channels,
                                                        DecoderShape{fc.channels, fc.hidden, fc.hidden}, fc.radius);
      f->init_random({.seed = fc.init_seed, .plane_std = 0.1});
      field = std::move(f);
    } else {
      field = load_field(a.ckpts[0]);
    }
    const auto* nf = dynamic_cast<const NeuralField<float>*>(field.get());
    require(nf != nullptr, "seam probe needs a plane-based field");
    make_out_dir(c.out);
    report["field"] = field->kind();
    for (Branch b : {Branch::A, Branch::B, Branch::Fused}) {
      const auto r = seam_discontinuity<float>(*nf, b, a.probes, a.delta, a.probe_seed, c.field.radius);
      report["branches"][to_string(b)] = {
          {"seam_max", r.seam_max}, {"interior_median", r.interior_median}, {"normalized", r.normalized}};
    }
  } else if (m == "leakage") {
    require(!a.ckpts.empty(), "leakage needs at least one --ckpt");
    require(a.resolution >= 8, "--res must be >= 8");
    std::vector<std::unique_ptr<RadianceField<float>>> fields;
    for (const auto& p : a.ckpts) fields.push_back(load_field(p));
    make_out_dir(c.out);
    const auto scene = scene_of(c);
    RenderSettings rs = render_settings(c);
    rs.stratified = false;
    const Camera front{camera_from_yaw_pitch(0, 0), {}}, back{camera_from_yaw_pitch(kPi, 0), {}};
    LeakageReport lr;
    lr.config_digest = digest;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      std::string key = fields[i]->kind();
      if (lr.leakage.count(key)) key += "#" + std::to_string(i);
      lr.leakage[key] = mirror_leakage<float>(*fields[i], Branch::Fused, scene, front, back, a.resolution, rs);
    }
    const auto oracle = oracle_render(scene, front, a.resolution, a.resolution);
    lr.front_psnr = psnr(rgb_image(render_image<float>(*fields[0], Branch::Fused, front, a.resolution, a.resolution, rs)),
                         oracle.rgb);
    report = json::parse(lr.to_json());
    report["metric"] = m;
    if (std::isinf(lr.front_psnr)) report["front_psnr"] = "inf";
  } else {
    require(a.grid >= 64, "--grid must be >= 64");
    make_out_dir(c.out);
    report["grid"] = a.grid;
    report["min_weight_sum"] = weight_cover_min(a.grid);
  }
  write_text(fs::path(c.out) / ("probe_" + m + ".json"), report.dump(2) + "\n");
  write_provenance(ctx, {{"metric", m}, {"exit_code", code}}, opts.str());
  *ctx.out << report.dump(2) << "\n";
  return code;
}

struct VicoArgs {
  int seeds = 5;
  std::uint64_t seed_base = 0;
  std::string views = "imbalanced";
  std::string data;
  int train_count = 600;
  int heldout_count = 300;
  int resolution = 64;
  int steps = 1500;
  int batch = 32;
  double lr = 1e-3;
  double noise = 0.1;
  int blur = 1;
};

int cmd_vico(Context& ctx, const VicoArgs& a) {
  const RunConfig& c = ctx.cfg;
  c.validate();
  require(a.seeds >= 1, "--seeds must be >= 1");
  require(a.train_count >= 2 && a.heldout_count >= 2, "need at least 2 training and 2 held-out views");
  require(a.resolution >= 16 && a.resolution % kVicoSide == 0, "--res must be a positive multiple of 16");
  require(a.steps >= 1 && a.batch >= 2, "--steps must be >= 1 and --batch >= 2");
  require(a.lr > 0 && a.noise >= 0 && a.blur >= 0, "--vico-lr must be positive, --noise and --blur >= 0");
  ViewSampler sampler;
  try {
    sampler = ViewSampler::parse(a.views);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }

  const auto scene = scene_of(c);
  DatasetSpec spec;
  spec.views = sampler;
  spec.resolution = a.resolution;
  spec.threads = resolve_threads(c.threads);
  std::vector<VicoSample> train;
  if (!a.data.empty()) {
    train = vico_samples(read_manifest((fs::path(a.data) / "manifest.jsonl").string()), a.data);
  } else {
    spec.count = a.train_count;
    spec.seed = c.dataset.seed;
    train = vico_samples(render_views(scene, spec));
  }
  spec.count = a.heldout_count;
  spec.seed = c.dataset.seed + 0x4e1d;
  const auto heldout = vico_samples(render_views(scene, spec));

  VicoTrainConfig tc;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.corruption = {a.noise, a.blur};
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < a.seeds; ++i) seeds.push_back(a.seed_base + i);

  make_out_dir(c.out);
  const auto rows = run_vico_experiment(train, heldout, seeds, tc);
  write_vico_csv((fs::path(c.out) / "vico.csv").string(), rows);
  const std::string summary = vico_summary_json(rows);
  write_text(fs::path(c.out) / "vico_summary.json", summary + "\n");
  write_provenance(ctx, {{"seeds", seeds}, {"views", sampler.to_string()}, {"data", a.data}});
  *ctx.out << summary << "\n";
  return kOk;
}

// Pulls "--config FILE" / "--config=FILE" out before the real parse so file values become defaults.
std::string find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return "";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Context ctx;
  ctx.out = &out;
  for (int i = 1; i < argc; ++i) ctx.args.emplace_back(argv[i]);

  try {
    const std::string config_path = find_config(ctx.args);
    if (!config_path.empty()) ctx.cfg = RunConfig::from_ini(config_path);
    RunConfig& c = ctx.cfg;

    CLI::App app{"Spherical tri-plane fields: datasets, fitting, rendering and probes", "sphf"};
    app.require_subcommand(1);
    std::string config_flag;
    app.add_option("--config", config_flag, "INI file with [scene] [field] [fit] [render] [dataset] [run] sections");
    app.set_version_flag("--version", SPHF_VERSION);

    std::string repr = to_string(c.field.repr);
    auto add_run = [&](CLI::App* s) {
      s->add_option("--config", config_flag, "INI file (flags given alongside override it)");
      s->add_option("--out", c.out, "output directory");
      s->add_option("--threads", c.threads, "worker threads (0 = all cores)");
      s->add_flag("--deterministic", c.deterministic, "fixed-order gradient reduction");
      s->add_option("--scene-seed", c.scene_seed, "synthetic scene seed");
    };
    auto add_render = [&](CLI::App* s) {
      s->add_option("--samples", c.render.samples, "samples per ray");
      s->add_option("--scene-radius", c.render.scene_radius, "bounding sphere radius for ray sampling");
      s->add_option("--render-seed", c.render.seed, "jitter seed");
    };

    auto* mk = app.add_subcommand("make-dataset", "render a synthetic multi-view dataset");
    add_run(mk);
    mk->add_option("--views", c.dataset.views, "uniform | front | imbalanced[:fraction]");
    mk->add_option("--count", c.dataset.count, "number of views");
    mk->add_option("--res", c.dataset.resolution, "image side in pixels");
    mk->add_option("--supersample", c.dataset.supersample, "rgb rays per pixel side");
    mk->add_option("--seed", c.dataset.seed, "view sampling seed");
    mk->add_flag("--balance", c.dataset.balance, "set per-bin duplication counts");
    mk->add_option("--n-thresh", c.dataset.n_thresh, "balancing threshold per azimuth bin");

    FitArgs fa;
    auto* fit_cmd = app.add_subcommand("fit", "fit a field to a dataset");
    add_run(fit_cmd);
    add_render(fit_cmd);
    fit_cmd->add_option("--data", fa.data, "dataset directory (manifest.jsonl)")->required();
    fit_cmd->add_option("--resume", fa.resume, "checkpoint to continue from");
    fit_cmd->add_option("--repr", repr, "dual-sphere | single-sphere | tri-plane | tri-grid");
    fit_cmd->add_option("--plane-res", c.field.resolution, "plane resolution");
    fit_cmd->add_option("--channels", c.field.channels, "feature channels");
    fit_cmd->add_option("--hidden", c.field.hidden, "decoder hidden width");
    fit_cmd->add_option("--depth", c.field.depth, "tri-grid layers");
    fit_cmd->add_option("--field-radius", c.field.radius, "radius covered by the planes");
    fit_cmd->add_option("--init-seed", c.field.init_seed, "parameter init seed");
    fit_cmd->add_option("--phases", c.fit.phases, "pA/pB/pF:steps[:rgb+mask+parsing],...");
    fit_cmd->add_option("--steps", c.fit.steps, "total steps (0 = schedule total)");
    fit_cmd->add_option("--rays", c.fit.rays, "rays per step");
    fit_cmd->add_option("--lr", c.fit.lr, "plane learning rate");
    fit_cmd->add_option("--decoder-lr", c.fit.decoder_lr, "decoder learning rate");
    fit_cmd->add_option("--w-rgb", c.fit.w_rgb);
    fit_cmd->add_option("--w-mask", c.fit.w_mask);
    fit_cmd->add_option("--w-parsing", c.fit.w_parsing);
    fit_cmd->add_option("--pyramid", c.fit.pyramid, "rgb pyramid levels");
    fit_cmd->add_option("--seed", c.fit.seed, "draw seed");
    fit_cmd->add_option("--checkpoint-every", c.fit.checkpoint_every, "steps between checkpoints (0 = final only)");

    RenderArgs ra;
    auto* render_cmd = app.add_subcommand("render", "turntable renders of a checkpoint");
    add_run(render_cmd);
    add_render(render_cmd);
    render_cmd->add_option("--ckpt", ra.ckpt, "checkpoint")->required();
    render_cmd->add_option("--views", ra.views, "number of azimuths");
    render_cmd->add_option("--branch", ra.branch, "A | B | fused");
    render_cmd->add_option("--res", ra.resolution, "image side in pixels");
    render_cmd->add_option("--pitch", ra.pitch_deg, "camera pitch in degrees");

    ProbeArgs pa;
    auto* probe = app.add_subcommand("probe", "metrics report");
    add_run(probe);
    add_render(probe);
    probe->add_option("--metric", pa.metric, "gradcheck | seam | leakage | coverage")->required();
    probe->add_option("--ckpt", pa.ckpts, "checkpoint(s)");
    probe->add_option("--trials", pa.trials, "gradcheck trials per op");
    probe->add_option("--tol-f32", pa.tol_f32);
    probe->add_option("--tol-f64", pa.tol_f64);
    probe->add_option("--ops", pa.ops, "comma-separated gradcheck ops (default all)");
    probe->add_option("--probes", pa.probes, "seam probes");
    probe->add_option("--delta", pa.delta, "seam offset in radians");
    probe->add_option("--probe-seed", pa.probe_seed);
    probe->add_option("--res", pa.resolution, "leakage render side");
    probe->add_option("--grid", pa.grid, "coverage grid size");
    probe->add_option("--plane-res", c.field.resolution, "random field plane resolution (seam)");
    probe->add_option("--channels", c.field.channels, "random field channels (seam)");
    probe->add_option("--init-seed", c.field.init_seed, "random field seed (seam)");

    VicoArgs va;
    auto* vico = app.add_subcommand("vico", "discriminator study with and without shuffled-label negatives");
    add_run(vico);
    vico->add_option("--seeds", va.seeds, "number of paired runs");
    vico->add_option("--seed-base", va.seed_base, "first seed");
    vico->add_option("--views", va.views, "view distribution of the rendered sets");
    vico->add_option("--data", va.data, "use this dataset directory as the training set");
    vico->add_option("--train-count", va.train_count);
    vico->add_option("--heldout-count", va.heldout_count);
    vico->add_option("--res", va.resolution, "render side (multiple of 16)");
    vico->add_option("--dataset-seed", c.dataset.seed);
    vico->add_option("--steps", va.steps);
    vico->add_option("--batch", va.batch);
    vico->add_option("--vico-lr", va.lr);
    vico->add_option("--noise", va.noise, "corruption noise std");
    vico->add_option("--blur", va.blur, "corruption box blur half width");

    std::vector<const char*> argv_copy(argv, argv + argc);
    try {
      app.parse(argc, argv_copy.data());
    } catch (const CLI::CallForHelp& e) {
      out << app.help();
      return kOk;
    } catch (const CLI::CallForVersion&) {
      out << SPHF_VERSION << "\n";
      return kOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n";
      return kValidation;
    }
    c.field.repr = repr_from_string(repr);

    CLI::App* sub = app.get_subcommands().front();
    ctx.command = sub->get_name();
    if (sub == mk) return cmd_make_dataset(ctx);
    if (sub == fit_cmd) return cmd_fit(ctx, fa);
    if (sub == render_cmd) return cmd_render(ctx, ra);
    if (sub == probe) return cmd_probe(ctx, pa);
    return cmd_vico(ctx, va);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    err << "invalid: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sphf::cli
