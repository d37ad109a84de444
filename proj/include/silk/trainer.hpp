#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "silk/augment.hpp"
#include "silk/autodiff.hpp"
#include "silk/checkpoint.hpp"
#include "silk/geometry.hpp"
#include "silk/loss.hpp"
#include "silk/model.hpp"

namespace silk {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update of every parameter from its grad, then zeroes
// the grads. Moments are created on first use.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, BasicAdamState<T>& state, const AdamOptions& opts);

// Training images, either files in a directory (decoded on demand) or a
// fixed in-memory list. Draws are uniform with replacement.
class ImageSource {
 public:
  // Throws Error when the directory holds no supported image.
  explicit ImageSource(const std::filesystem::path& dir);
  explicit ImageSource(std::vector<ImageGray> images);

  std::size_t size() const noexcept;
  std::size_t draw(std::mt19937_64& rng) const;
  // Throws FormatError naming the file when it cannot be decoded.
  ImageGray load(std::size_t index) const;
  std::optional<std::filesystem::path> path(std::size_t index) const;

 private:
  std::vector<std::filesystem::path> files_;
  std::vector<ImageGray> images_;
};

ImageSource load_training_images(const std::filesystem::path& dir);

struct TrainConfig {
  std::filesystem::path data_dir;
  std::filesystem::path output = "silk.ckpt";
  std::filesystem::path resume;
  Backbone backbone = Backbone::kVggnp4;
  Padding padding = Padding::kValid;
  std::int64_t iterations = 100000;
  AdamOptions adam;
  int crop = 0;  // 0 derives the crop giving a 146x146 descriptor map
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 10000;
  std::int64_t log_every = 100;
  LossConfig loss;
  AugmentConfig augment;
  HomographySamplerConfig sampler;

  void validate() const;
  int crop_size() const;
  ModelConfig model_config() const { return ModelConfig::for_backbone(backbone, padding); }
};

inline constexpr int kTrainingGrid = 146;

struct StepStats {
  std::int64_t iteration = 0;  // 1-based index of the completed step
  double loss = 0.0;
  double descriptor = 0.0;
  double keypoint = 0.0;
  double match_success = 0.0;
  std::size_t correspondences = 0;
};

// `iter=<n> loss=<f> desc=<f> key=<f> msr=<f>`
void write_log_line(std::ostream& os, const StepStats& s);

// Random crop of `size` x `size`; images smaller than the crop are first
// upscaled so the shorter edge equals it.
ImageGray random_crop(const ImageGray& img, int size, std::mt19937_64& rng);

// One optimisation step per call. Every step draws from its own generator
// seeded by (seed, iteration), so a run resumed from a checkpoint continues
// exactly like an uninterrupted one.
class Trainer {
 public:
  Trainer(TrainConfig cfg, ImageSource source);
  Trainer(TrainConfig cfg, ImageSource source, LoadedCheckpoint resume);

  StepStats step();
  std::int64_t iteration() const noexcept { return iteration_; }
  SilkModel<float>& model() noexcept { return model_; }
  const SilkModel<float>& model() const noexcept { return model_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  TrainingState state() const;
  void save(const std::filesystem::path& path) const;

 private:
  TrainConfig cfg_;
  ImageSource source_;
  SilkModel<float> model_;
  AdamState adam_;
  std::int64_t iteration_ = 0;
  int crop_ = 0;
};

// Runs cfg.iterations steps (counting those already in a resumed
// checkpoint), logging every log_every steps and checkpointing every
// checkpoint_every steps. Returns the final checkpoint path.
std::filesystem::path train(const TrainConfig& cfg, ImageSource source, std::ostream* log = nullptr);
std::filesystem::path train(const TrainConfig& cfg, std::ostream* log = nullptr);

std::filesystem::path periodic_checkpoint_path(const std::filesystem::path& output, std::int64_t iteration);

}  // namespace silk
