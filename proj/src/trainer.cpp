#include "silk/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "silk/error.hpp"
#include "silk/image_io.hpp"

namespace silk {

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, BasicAdamState<T>& state, const AdamOptions& opts) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("optimizer state does not match the parameter list");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(opts.beta1);
  const T b2 = static_cast<T>(opts.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(opts.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(opts.beta2, t));
  const T lr = static_cast<T>(opts.learning_rate);
  const T eps = static_cast<T>(opts.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    if (!m.same_shape(p.value) || !v.same_shape(p.value)) {
      throw ShapeError("optimizer moment shape differs for " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T m_hat = m[i] / c1;
      const T v_hat = v[i] / c2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    p.zero_grad();
  }
}

template void adam_step<float>(std::span<Parameter<float>* const>, BasicAdamState<float>&, const AdamOptions&);
template void adam_step<double>(std::span<Parameter<double>* const>, BasicAdamState<double>&, const AdamOptions&);

ImageSource::ImageSource(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error("not a directory: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_supported_image(entry.path())) files_.push_back(entry.path());
  }
  std::sort(files_.begin(), files_.end());
  if (files_.empty()) throw Error("no training images in " + dir.string());
}

ImageSource::ImageSource(std::vector<ImageGray> images) : images_(std::move(images)) {
  if (images_.empty()) throw Error("image source is empty");
}

std::size_t ImageSource::size() const noexcept { return files_.empty() ? images_.size() : files_.size(); }

std::size_t ImageSource::draw(std::mt19937_64& rng) const {
  return std::uniform_int_distribution<std::size_t>(0, size() - 1)(rng);
}

ImageGray ImageSource::load(std::size_t index) const {
  if (index >= size()) throw Error("image index out of range");
  if (files_.empty()) return images_[index];
  return read_image(files_[index]);
}

std::optional<std::filesystem::path> ImageSource::path(std::size_t index) const {
  if (files_.empty() || index >= files_.size()) return std::nullopt;
  return files_[index];
}

ImageSource load_training_images(const std::filesystem::path& dir) { return ImageSource(dir); }

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(adam.learning_rate > 0.0) || !std::isfinite(adam.learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (crop < 0) throw ConfigError("crop must be positive or 0 for auto");
  if (checkpoint_every < 0 || log_every < 0) throw ConfigError("checkpoint_every and log_every must be >= 0");
  loss.validate();
  augment.validate();
  sampler.validate();
  const ModelConfig mc = model_config();
  mc.validate();
  if (crop_size() < mc.min_input_extent()) {
    throw ConfigError("crop " + std::to_string(crop_size()) + " is below the model minimum of " +
                      std::to_string(mc.min_input_extent()));
  }
}

int TrainConfig::crop_size() const {
  return crop > 0 ? crop : model_config().input_extent_for_grid(kTrainingGrid);
}

void write_log_line(std::ostream& os, const StepStats& s) {
  os << "iter=" << s.iteration << std::setprecision(6) << " loss=" << s.loss << " desc=" << s.descriptor
     << " key=" << s.keypoint << " msr=" << s.match_success << '\n';
}

ImageGray random_crop(const ImageGray& img, int size, std::mt19937_64& rng) {
  ImageGray src = img;
  const int short_edge = std::min(img.height, img.width);
  if (short_edge < size) {
    const double f = static_cast<double>(size) / short_edge;
    const int h = std::max(size, static_cast<int>(std::lround(img.height * f)));
    const int w = std::max(size, static_cast<int>(std::lround(img.width * f)));
    src = resize_bilinear(img, h, w);
  }
  const int top = std::uniform_int_distribution<int>(0, src.height - size)(rng);
  const int left = std::uniform_int_distribution<int>(0, src.width - size)(rng);
  return crop(src, top, left, size, size);
}

Trainer::Trainer(TrainConfig cfg, ImageSource source)
    : cfg_(std::move(cfg)), source_(std::move(source)), model_(cfg_.model_config(), cfg_.seed) {
  cfg_.validate();
  crop_ = cfg_.crop_size();
}

Trainer::Trainer(TrainConfig cfg, ImageSource source, LoadedCheckpoint resume)
    : cfg_(std::move(cfg)), source_(std::move(source)), model_(std::move(resume.model)) {
  cfg_.backbone = model_.config().backbone;
  cfg_.padding = model_.config().padding;
  cfg_.validate();
  crop_ = cfg_.crop_size();
  if (resume.training) {
    adam_ = std::move(resume.training->adam);
    iteration_ = resume.training->iteration;
  }
}

StepStats Trainer::step() {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                    static_cast<std::uint32_t>(iteration_), static_cast<std::uint32_t>(iteration_ >> 32)};
  std::mt19937_64 rng(seq);

  const ImageGray view_a = random_crop(source_.load(source_.draw(rng)), crop_, rng);
  const ModelConfig& mc = model_.config();
  const GridShape grid = mc.output_grid(view_a.shape());
  const CoordinateMapping mapping = mc.mapping();

  constexpr int kMaxAttempts = 100;
  std::optional<Homography> h;
  CorrespondenceSet corr;
  for (int attempt = 0; attempt < kMaxAttempts && corr.empty(); ++attempt) {
    h = sample_homography(cfg_.sampler, view_a.shape(), rng);
    corr = generate_correspondences(*h, grid, grid, mapping, mapping);
  }
  if (corr.empty()) {
    throw Error("no correspondences after " + std::to_string(kMaxAttempts) + " homographies at iteration " +
                std::to_string(iteration_ + 1));
  }

  const ImageGray view_b = warp_image(view_a, *h);
  const ImageGray aug_a = augment(view_a, cfg_.augment, rng);
  const ImageGray aug_b = augment(view_b, cfg_.augment, rng);

  Tape<float> tape;
  const DenseVars out_a = model_.forward(tape, aug_a, Mode::kTrain);
  const DenseVars out_b = model_.forward(tape, aug_b, Mode::kTrain);
  const LossTerms<float> terms = total_loss(tape, out_a, out_b, corr, cfg_.loss);
  const float loss = tape.value(terms.total).item();
  if (!std::isfinite(loss)) throw NumericError("non-finite loss at iteration " + std::to_string(iteration_ + 1));
  tape.backward(terms.total);
  const auto params = model_.parameters();
  adam_step<float>(params, adam_, cfg_.adam);
  ++iteration_;

  return {iteration_, loss, terms.descriptor, terms.keypoint, terms.labels.rate(), corr.size()};
}

TrainingState Trainer::state() const { return {adam_, iteration_}; }

void Trainer::save(const std::filesystem::path& path) const {
  const TrainingState ts = state();
  save_checkpoint(path, model_, &ts);
}

std::filesystem::path periodic_checkpoint_path(const std::filesystem::path& output, std::int64_t iteration) {
  std::filesystem::path p = output;
  p.replace_filename(output.stem().string() + "-" + std::to_string(iteration) + output.extension().string());
  return p;
}

std::filesystem::path train(const TrainConfig& cfg, ImageSource source, std::ostream* log) {
  cfg.validate();
  std::optional<Trainer> trainer;
  if (!cfg.resume.empty()) {
    trainer.emplace(cfg, std::move(source), load_checkpoint(cfg.resume));
  } else {
    trainer.emplace(cfg, std::move(source));
  }
  while (trainer->iteration() < cfg.iterations) {
    const StepStats s = trainer->step();
    if (log && cfg.log_every > 0 && (s.iteration % cfg.log_every == 0 || s.iteration == cfg.iterations)) {
      write_log_line(*log, s);
      log->flush();
    }
    if (cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0 && s.iteration != cfg.iterations) {
      trainer->save(periodic_checkpoint_path(cfg.output, s.iteration));
    }
  }
  trainer->save(cfg.output);
  return cfg.output;
}

std::filesystem::path train(const TrainConfig& cfg, std::ostream* log) {
  return train(cfg, load_training_images(cfg.data_dir), log);
}

}  // namespace silk
