#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "sphf/checkpoint.hpp"
#include "sphf/dataset.hpp"
#include "sphf/field.hpp"

namespace sphf::cli {

enum ExitCode { kOk = 0, kValidation = 2, kNumerical = 3, kIo = 4 };

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Repr { DualSphere, SingleSphere, TriPlane, TriGrid };
std::string to_string(Repr r);
Repr repr_from_string(const std::string& s);

struct FieldConfig {
  Repr repr = Repr::DualSphere;
  int resolution = 64;
  int channels = 16;
  int hidden = 32;
  int depth = 3;  // tri-grid layers
  double radius = 0.35;
  std::uint64_t init_seed = 0;
};

struct FitOptions {
  std::string phases = "33/33/34:200,10/10/80:800";
  std::int64_t steps = 0;  // 0 = schedule total
  int rays = 512;
  double lr = 1e-2;
  double decoder_lr = 1e-3;
  double w_rgb = 1.0;
  double w_mask = 1.0;
  double w_parsing = 0.1;
  int pyramid = 1;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;
};

struct RenderOptions {
  int samples = 32;
  double scene_radius = 0.35;
  bool stratified = true;
  std::uint64_t seed = 0;
};

struct DatasetOptions {
  std::string views = "uniform";
  int count = 64;
  int resolution = 64;
  int supersample = 2;
  std::uint64_t seed = 0;
  bool balance = false;
  int n_thresh = 2000;
};

/// Everything a command needs; read from an INI file, then overridden by flags.
struct RunConfig {
  std::uint64_t scene_seed = 0;
  FieldConfig field;
  FitOptions fit;
  RenderOptions render;
  DatasetOptions dataset;
  std::string out = "out";
  int threads = 0;  // 0 = all cores
  bool deterministic = false;

  void validate() const;
  std::string to_ini() const;
  static RunConfig from_ini(const std::string& path);
};

/// Float field with the configured layout and random init.
std::unique_ptr<NeuralField<float>> build_field(const FieldConfig& c);

/// "meta.field" = [repr, resolution, channels, hidden, depth, radius bits as 4 x u16].
Tensor field_meta(const FieldConfig& c);
FieldConfig field_config_from(const std::vector<Tensor>& tensors);

/// A checkpoint with no tensors is an empty field (renders background).
std::unique_ptr<RadianceField<float>> load_field(const std::string& path);

/// Runs one command; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sphf::cli
