#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sphf/dataset.hpp"
#include "sphf/field.hpp"
#include "sphf/optim.hpp"

namespace sphf {

inline constexpr int kVicoSide = 16;
inline constexpr int kVicoPixels = kVicoSide * kVicoSide;
inline constexpr int kVicoEmbed = 4;
inline constexpr int kVicoInput = kVicoPixels + kVicoEmbed;

/// (sin theta, cos theta, sin phi, cos phi) of the camera centre.
using LabelEmbedding = std::array<double, kVicoEmbed>;
LabelEmbedding label_embedding(double theta, double phi);

/// Grayscale, box-downsampled to 16x16. Side must be a multiple of 16.
std::vector<double> discriminator_image(const Image& rgb);

struct VicoSample {
  std::vector<double> image;  // kVicoPixels
  LabelEmbedding label{};
};

std::vector<VicoSample> vico_samples(const std::vector<RenderedView>& views);
std::vector<VicoSample> vico_samples(const Manifest& manifest, const std::string& dir);

/// MLP (16x16 image, label embedding) -> 64 -> 64 -> logit, leaky ReLU hidden layers.
class ToyDiscriminator {
 public:
  static constexpr int kHidden = 64;

  ToyDiscriminator();
  void init(std::uint64_t seed);

  double logit(const std::vector<double>& image, const LabelEmbedding& label) const;
  /// d(logit)/d(params) scaled by `scale` and added into grads (same layout as parameters()).
  double logit_backward(const std::vector<double>& image, const LabelEmbedding& label, double scale,
                        ToyDiscriminator& grads) const;

  ParamSet<double> parameters();
  bool finite() const;

  std::vector<double> w1, b1, w2, b2, w3, b3;
};

enum class PairKind { RealMatched, RealMismatched, Corrupted };

struct PairBatch {
  std::vector<std::vector<double>> images;
  std::vector<LabelEmbedding> labels;
  PairKind kind = PairKind::RealMatched;
};

struct ShuffleResult {
  std::vector<std::size_t> permutation;  // output i takes input permutation[i]
  std::size_t fixed_points = 0;
  double fixed_point_rate() const {
    return permutation.empty() ? 0.0 : static_cast<double>(fixed_points) / permutation.size();
  }
};

/// Uniform permutation (Fisher-Yates on a counter hash); fixed points are allowed.
ShuffleResult shuffle_permutation(std::size_t n, std::uint64_t seed);
std::vector<LabelEmbedding> shuffle_labels(const std::vector<LabelEmbedding>& labels, std::uint64_t seed,
                                           ShuffleResult* info = nullptr);

/// mean_i -log(1 - D(image_i, c_s,i)) with D = sigmoid(logit): the term the discriminator
/// minimizes to reject real images under shuffled labels. Log argument clamped at 1e-12.
double vico_loss(const ToyDiscriminator& d, const PairBatch& mismatched);

struct CorruptionSpec {
  double noise_std = 0.1;
  int blur_radius = 1;  // box blur half width
};

std::vector<double> corrupt_image(const std::vector<double>& image, const CorruptionSpec& spec, std::uint64_t seed,
                                  std::uint64_t index);

struct VicoTrainConfig {
  bool with_vico = false;
  CorruptionSpec corruption;
  int steps = 1500;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct VicoTraceRow {
  int step = 0;
  double real = 0.0;     // -log D on matched reals
  double corrupt = 0.0;  // -log(1 - D) on corrupted reals
  double vico = 0.0;     // vico_loss on shuffled labels, 0 without ViCo
};

struct VicoRun {
  ToyDiscriminator d;
  std::vector<VicoTraceRow> trace;
  std::size_t mismatched_batches = 0;
};

/// Baseline: matched reals vs corrupted reals. With ViCo every step also adds the
/// batch's reals under shuffled labels as negatives. Throws NumericalError on NaN.
VicoRun train_discriminator(const std::vector<VicoSample>& train, const VicoTrainConfig& config);

/// Rank AUC (ties count half) of positive over negative scores.
double mismatch_auc(const std::vector<double>& matched, const std::vector<double>& mismatched);
/// Held-out matched pairs vs the same images under shuffled labels.
double mismatch_auc(const ToyDiscriminator& d, const std::vector<VicoSample>& heldout, std::uint64_t seed);
/// Threshold 0.5 on matched reals (should accept) and corrupted reals (should reject).
double real_fake_accuracy(const ToyDiscriminator& d, const std::vector<VicoSample>& heldout,
                          const CorruptionSpec& corruption, std::uint64_t seed);

struct VicoResult {
  std::uint64_t seed = 0;
  bool with_vico = false;
  double accuracy = 0.0;
  double auc = 0.0;
};

/// With and without ViCo for each seed (10 rows for 5 seeds).
std::vector<VicoResult> run_vico_experiment(const std::vector<VicoSample>& train,
                                            const std::vector<VicoSample>& heldout,
                                            const std::vector<std::uint64_t>& seeds, VicoTrainConfig config);

void write_vico_csv(const std::string& path, const std::vector<VicoResult>& rows);
/// Mean AUC per mode, per-seed deltas and how many seeds reach min_delta.
std::string vico_summary_json(const std::vector<VicoResult>& rows, double min_delta = 0.15);

}  // namespace sphf
