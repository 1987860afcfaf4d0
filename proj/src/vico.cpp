#include "sphf/vico.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "sphf/rng.hpp"
#include "json.hpp"

namespace sphf {

namespace {

constexpr double kLeak = 0.2;

double leaky(double x) { return x > 0 ? x : kLeak * x; }
double leaky_grad(double x) { return x > 0 ? 1.0 : kLeak; }

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double gaussian(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const double u1 = std::max(uniform01(seed, a, 2 * b), 1e-300);
  const double u2 = uniform01(seed, a, 2 * b + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * kPi * u2);
}

std::vector<double> input_vector(const std::vector<double>& image, const LabelEmbedding& label) {
  if (image.size() != static_cast<std::size_t>(kVicoPixels))
    throw std::invalid_argument("discriminator: image must have 256 pixels");
  std::vector<double> x(image);
  x.insert(x.end(), label.begin(), label.end());
  return x;
}

}  // namespace

LabelEmbedding label_embedding(double theta, double phi) {
  return {std::sin(theta), std::cos(theta), std::sin(phi), std::cos(phi)};
}

std::vector<double> discriminator_image(const Image& rgb) {
  if (rgb.width != rgb.height || rgb.width % kVicoSide != 0)
    throw std::invalid_argument("discriminator_image: side must be a multiple of 16");
  const Image small = downsample(to_grayscale(rgb), rgb.width / kVicoSide);
  return {small.data.begin(), small.data.end()};
}

std::vector<VicoSample> vico_samples(const std::vector<RenderedView>& views) {
  std::vector<VicoSample> out;
  for (const auto& v : views) {
    const auto s = cart_to_sph(v.camera.pose.center());
    out.push_back({discriminator_image(v.images.rgb), label_embedding(s.theta, s.phi)});
  }
  return out;
}

std::vector<VicoSample> vico_samples(const Manifest& manifest, const std::string& dir) {
  std::vector<VicoSample> out;
  for (const auto& r : manifest)
    out.push_back({discriminator_image(read_png(dir + "/" + r.path)), label_embedding(r.theta, r.phi)});
  return out;
}

ToyDiscriminator::ToyDiscriminator()
    : w1(kHidden * kVicoInput), b1(kHidden), w2(kHidden * kHidden), b2(kHidden), w3(kHidden), b3(1) {}

void ToyDiscriminator::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill = [&](std::vector<double>& w, int fan_in) {
    std::uniform_real_distribution<double> d(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    for (auto& v : w) v = d(rng);
  };
  fill(w1, kVicoInput);
  fill(w2, kHidden);
  fill(w3, kHidden);
  std::fill(b1.begin(), b1.end(), 0.0);
  std::fill(b2.begin(), b2.end(), 0.0);
  b3[0] = 0.0;
}

double ToyDiscriminator::logit(const std::vector<double>& image, const LabelEmbedding& label) const {
  const auto x = input_vector(image, label);
  double h1[kHidden], h2[kHidden], y;
  affine(w1, b1, x.data(), kVicoInput, kHidden, h1);
  for (double& v : h1) v = leaky(v);
  affine(w2, b2, h1, kHidden, kHidden, h2);
  for (double& v : h2) v = leaky(v);
  affine(w3, b3, h2, kHidden, 1, &y);
  return y;
}

double ToyDiscriminator::logit_backward(const std::vector<double>& image, const LabelEmbedding& label, double scale,
                                        ToyDiscriminator& g) const {
  const auto x = input_vector(image, label);
  double z1[kHidden], h1[kHidden], z2[kHidden], h2[kHidden], y;
  affine(w1, b1, x.data(), kVicoInput, kHidden, z1);
  for (int i = 0; i < kHidden; ++i) h1[i] = leaky(z1[i]);
  affine(w2, b2, h1, kHidden, kHidden, z2);
  for (int i = 0; i < kHidden; ++i) h2[i] = leaky(z2[i]);
  affine(w3, b3, h2, kHidden, 1, &y);

  double dh2[kHidden], dh1[kHidden];
  affine_backward(w3, h2, &scale, kHidden, 1, g.w3, g.b3, dh2);
  for (int i = 0; i < kHidden; ++i) dh2[i] *= leaky_grad(z2[i]);
  affine_backward(w2, h1, dh2, kHidden, kHidden, g.w2, g.b2, dh1);
  for (int i = 0; i < kHidden; ++i) dh1[i] *= leaky_grad(z1[i]);
  affine_backward<double>(w1, x.data(), dh1, kVicoInput, kHidden, g.w1, g.b1, nullptr);
  return y;
}

ParamSet<double> ToyDiscriminator::parameters() {
  const auto u = [](int n) { return static_cast<std::uint32_t>(n); };
  return {{"d.w1", {u(kHidden), u(kVicoInput)}, w1}, {"d.b1", {u(kHidden)}, b1},
          {"d.w2", {u(kHidden), u(kHidden)}, w2},    {"d.b2", {u(kHidden)}, b2},
          {"d.w3", {1, u(kHidden)}, w3},             {"d.b3", {1}, b3}};
}

bool ToyDiscriminator::finite() const {
  for (const auto* v : {&w1, &b1, &w2, &b2, &w3, &b3})
    for (double x : *v)
      if (!std::isfinite(x)) return false;
  return true;
}

ShuffleResult shuffle_permutation(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("shuffle_labels: batch must hold at least 2 labels");
  ShuffleResult r;
  r.permutation.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.permutation[i] = i;
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = std::min(i, static_cast<std::size_t>(uniform01(seed, 0x5f, i) * (i + 1)));
    std::swap(r.permutation[i], r.permutation[j]);
  }
  for (std::size_t i = 0; i < n; ++i) r.fixed_points += r.permutation[i] == i;
  return r;
}

std::vector<LabelEmbedding> shuffle_labels(const std::vector<LabelEmbedding>& labels, std::uint64_t seed,
                                           ShuffleResult* info) {
  ShuffleResult r = shuffle_permutation(labels.size(), seed);
  std::vector<LabelEmbedding> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[r.permutation[i]];
  if (info) *info = std::move(r);
  return out;
}

double vico_loss(const ToyDiscriminator& d, const PairBatch& mismatched) {
  if (mismatched.images.empty() || mismatched.images.size() != mismatched.labels.size())
    throw std::invalid_argument("vico_loss: batch is empty or images and labels differ in count");
  double sum = 0.0;
  for (std::size_t i = 0; i < mismatched.images.size(); ++i) {
    const double p = sigmoid(d.logit(mismatched.images[i], mismatched.labels[i]));
    sum += -std::log(std::max(1.0 - p, 1e-12));
  }
  return sum / mismatched.images.size();
}

std::vector<double> corrupt_image(const std::vector<double>& image, const CorruptionSpec& spec, std::uint64_t seed,
                                  std::uint64_t index) {
  const int n = kVicoSide, r = spec.blur_radius;
  std::vector<double> out(image.size());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      int c = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= n || yy >= n) continue;
          s += image[yy * n + xx];
          ++c;
        }
      const double noise = spec.noise_std * gaussian(seed, index, y * n + x);
      out[y * n + x] = std::clamp(s / c + noise, 0.0, 1.0);
    }
  return out;
}

VicoRun train_discriminator(const std::vector<VicoSample>& train, const VicoTrainConfig& config) {
  if (train.size() < 2) throw std::invalid_argument("train_discriminator: need at least 2 samples");
  if (config.steps < 0 || config.batch < 2) throw std::invalid_argument("train_discriminator: bad steps or batch");
  VicoRun run;
  run.d.init(mix64(config.seed ^ 0xd15c));
  auto params = run.d.parameters();
  AdamState<double> adam;
  adam.init(params);
  AdamConfig ac;
  ac.lr = config.lr;
  ac.beta1 = 0.5;

  const auto b = static_cast<std::size_t>(config.batch);
  for (int step = 0; step < config.steps; ++step) {
    ToyDiscriminator g;
    PairBatch real{{}, {}, PairKind::RealMatched}, fake{{}, {}, PairKind::Corrupted};
    for (std::size_t i = 0; i < b; ++i) {
      const auto ri = static_cast<std::size_t>(uniform01(config.seed, 0xc1, step * 2 * b + i) * train.size());
      const auto fi = static_cast<std::size_t>(uniform01(config.seed, 0xc1, step * 2 * b + b + i) * train.size());
      real.images.push_back(train[ri].image);
      real.labels.push_back(train[ri].label);
      fake.images.push_back(corrupt_image(train[fi].image, config.corruption, config.seed ^ 0xc2, step * b + i));
      fake.labels.push_back(train[fi].label);
    }
    VicoTraceRow row;
    row.step = step;
    const double scale = 1.0 / b;
    // -log sigmoid(y): d/dy = sigmoid(y) - 1; -log(1 - sigmoid(y)): d/dy = sigmoid(y).
    for (std::size_t i = 0; i < b; ++i) {
      const double y = run.d.logit(real.images[i], real.labels[i]);
      row.real += softplus(-y) * scale;
      run.d.logit_backward(real.images[i], real.labels[i], (sigmoid(y) - 1.0) * scale, g);
      const double yf = run.d.logit(fake.images[i], fake.labels[i]);
      row.corrupt += softplus(yf) * scale;
      run.d.logit_backward(fake.images[i], fake.labels[i], sigmoid(yf) * scale, g);
    }
    if (config.with_vico) {
      PairBatch mismatched{real.images, shuffle_labels(real.labels, mix64(config.seed ^ 0xc3) + step),
                           PairKind::RealMismatched};
      ++run.mismatched_batches;
      row.vico = vico_loss(run.d, mismatched);
      for (std::size_t i = 0; i < b; ++i) {
        const double y = run.d.logit(mismatched.images[i], mismatched.labels[i]);
        run.d.logit_backward(mismatched.images[i], mismatched.labels[i], sigmoid(y) * scale, g);
      }
    }
    if (!std::isfinite(row.real + row.corrupt + row.vico))
      throw NumericalError("train_discriminator: non-finite loss at step " + std::to_string(step));
    auto grads = g.parameters();
    adam_step(params, grads, adam, ac);
    run.trace.push_back(row);
  }
  if (!run.d.finite()) throw NumericalError("train_discriminator: non-finite weights");
  return run;
}

double mismatch_auc(const std::vector<double>& matched, const std::vector<double>& mismatched) {
  if (matched.empty() || mismatched.empty()) throw std::invalid_argument("mismatch_auc: empty score set");
  // Mann-Whitney U from midranks of the pooled scores.
  std::vector<std::pair<double, int>> pooled;
  for (double s : matched) pooled.push_back({s, 1});
  for (double s : mismatched) pooled.push_back({s, 0});
  std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double mid = 0.5 * (i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].second) rank_sum += mid;
    i = j;
  }
  const double n1 = matched.size(), n0 = mismatched.size();
  return (rank_sum - n1 * (n1 + 1) / 2) / (n1 * n0);
}

double mismatch_auc(const ToyDiscriminator& d, const std::vector<VicoSample>& heldout, std::uint64_t seed) {
  std::vector<LabelEmbedding> labels;
  for (const auto& s : heldout) labels.push_back(s.label);
  const auto shuffled = shuffle_labels(labels, seed);
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    pos.push_back(d.logit(heldout[i].image, heldout[i].label));
    neg.push_back(d.logit(heldout[i].image, shuffled[i]));
  }
  return mismatch_auc(pos, neg);
}

double real_fake_accuracy(const ToyDiscriminator& d, const std::vector<VicoSample>& heldout,
                          const CorruptionSpec& corruption, std::uint64_t seed) {
  if (heldout.empty()) throw std::invalid_argument("real_fake_accuracy: empty held-out set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    correct += d.logit(heldout[i].image, heldout[i].label) > 0.0;
    correct += d.logit(corrupt_image(heldout[i].image, corruption, seed, i), heldout[i].label) < 0.0;
  }
  return static_cast<double>(correct) / (2 * heldout.size());
}

std::vector<VicoResult> run_vico_experiment(const std::vector<VicoSample>& train,
                                            const std::vector<VicoSample>& heldout,
                                            const std::vector<std::uint64_t>& seeds, VicoTrainConfig config) {
  std::vector<VicoResult> rows;
  for (auto seed : seeds)
    for (bool with : {false, true}) {
      config.seed = seed;
      config.with_vico = with;
      const VicoRun run = train_discriminator(train, config);
      rows.push_back({seed, with, real_fake_accuracy(run.d, heldout, config.corruption, mix64(seed) ^ 0xe1),
                      mismatch_auc(run.d, heldout, mix64(seed) ^ 0xe2)});
    }
  return rows;
}

void write_vico_csv(const std::string& path, const std::vector<VicoResult>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "seed,mode,real_fake_acc,mismatch_auc\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%s,%.9g,%.9g\n", static_cast<unsigned long long>(r.seed),
                  r.with_vico ? "vico" : "baseline", r.accuracy, r.auc);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

std::string vico_summary_json(const std::vector<VicoResult>& rows, double min_delta) {
  std::map<std::uint64_t, std::pair<const VicoResult*, const VicoResult*>> by_seed;
  double auc[2] = {0, 0}, acc_min[2] = {1, 1};
  int count[2] = {0, 0};
  for (const auto& r : rows) {
    auto& slot = by_seed[r.seed];
    (r.with_vico ? slot.second : slot.first) = &r;
    auc[r.with_vico] += r.auc;
    acc_min[r.with_vico] = std::min(acc_min[r.with_vico], r.accuracy);
    ++count[r.with_vico];
  }
  nlohmann::ordered_json j;
  nlohmann::ordered_json deltas = nlohmann::json::array();
  int reached = 0;
  for (const auto& [seed, pair] : by_seed) {
    if (!pair.first || !pair.second) continue;
    const double d = pair.second->auc - pair.first->auc;
    deltas.push_back({{"seed", seed}, {"auc_delta", d}});
    reached += d >= min_delta;
  }
  j["mean_auc_baseline"] = count[0] ? auc[0] / count[0] : 0.0;
  j["mean_auc_vico"] = count[1] ? auc[1] / count[1] : 0.0;
  j["mean_auc_delta"] = j["mean_auc_vico"].get<double>() - j["mean_auc_baseline"].get<double>();
  j["min_accuracy_baseline"] = acc_min[0];
  j["min_accuracy_vico"] = acc_min[1];
  j["min_delta"] = min_delta;
  j["seeds_reaching_min_delta"] = reached;
  j["per_seed"] = deltas;
  return j.dump(2);
}

}  // namespace sphf
