#include "silk/model.hpp"

#include <cmath>
#include <random>
#include <type_traits>

#include "silk/error.hpp"

namespace silk {

std::string_view backbone_name(Backbone b) {
  switch (b) {
    case Backbone::kVggnp1: return "vggnp-1";
    case Backbone::kVggnp2: return "vggnp-2";
    case Backbone::kVggnp3: return "vggnp-3";
    case Backbone::kVggnp4: return "vggnp-4";
    case Backbone::kVggnpMu: return "vggnp-mu";
  }
  return "unknown";
}

Backbone parse_backbone(std::string_view name) {
  for (Backbone b : {Backbone::kVggnp1, Backbone::kVggnp2, Backbone::kVggnp3, Backbone::kVggnp4, Backbone::kVggnpMu}) {
    if (backbone_name(b) == name) return b;
  }
  throw ConfigError("unknown backbone '" + std::string(name) + "'");
}

std::string_view padding_name(Padding p) { return p == Padding::kValid ? "valid" : "zero"; }

Padding parse_padding(std::string_view name) {
  if (name == "valid") return Padding::kValid;
  if (name == "zero") return Padding::kZero;
  throw ConfigError("unknown padding mode '" + std::string(name) + "'");
}

// Channel layouts obtained by dropping leading blocks of the SuperPoint
// encoder (64,64,128,128).
ModelConfig ModelConfig::for_backbone(Backbone b, Padding padding) {
  ModelConfig cfg;
  cfg.backbone = b;
  cfg.padding = padding;
  switch (b) {
    case Backbone::kVggnp4: cfg.channels = {64, 64, 128, 128}; break;
    case Backbone::kVggnp3: cfg.channels = {64, 128, 128}; break;
    case Backbone::kVggnp2: cfg.channels = {128, 128}; break;
    case Backbone::kVggnp1: cfg.channels = {128}; break;
    case Backbone::kVggnpMu:
      cfg.channels = {64};
      cfg.descriptor_dim = 32;
      cfg.head_hidden = 32;
      break;
  }
  return cfg;
}

void ModelConfig::validate() const {
  const std::size_t blocks = backbone == Backbone::kVggnp4   ? 4
                             : backbone == Backbone::kVggnp3 ? 3
                             : backbone == Backbone::kVggnp2 ? 2
                                                             : 1;
  if (channels.size() != blocks) {
    throw ConfigError(std::string(backbone_name(backbone)) + " expects " + std::to_string(blocks) +
                      " channel entries, got " + std::to_string(channels.size()));
  }
  for (int c : channels) {
    if (c <= 0) throw ConfigError("channel counts must be positive");
  }
  if (descriptor_dim <= 0 || head_hidden <= 0) throw ConfigError("descriptor_dim and head_hidden must be positive");
}

namespace {

template <typename T>
ConvLayer<T> make_conv(const std::string& name, int c_in, int c_out, int k, std::mt19937_64& rng) {
  const std::size_t n = static_cast<std::size_t>(c_out) * c_in * k * k;
  const double stddev = std::sqrt(2.0 / (static_cast<double>(c_in) * k * k));
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> w(n);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  const auto uk = static_cast<std::size_t>(k);
  return {Parameter<T>(name + ".weight", Tensor<T>(Shape{static_cast<std::size_t>(c_out), static_cast<std::size_t>(c_in), uk, uk}, std::move(w))),
          Parameter<T>(name + ".bias", Tensor<T>(Shape{static_cast<std::size_t>(c_out)}, T(0)))};
}

template <typename T>
ConvBnRelu<T> make_stage(const std::string& name, int c_in, int c_out, std::mt19937_64& rng) {
  const auto c = static_cast<std::size_t>(c_out);
  return {make_conv<T>(name + ".conv", c_in, c_out, 3, rng),
          {Parameter<T>(name + ".bn.gamma", Tensor<T>(Shape{c}, T(1))),
           Parameter<T>(name + ".bn.beta", Tensor<T>(Shape{c}, T(0))), BatchNormStats<T>(c)}};
}

// Leaf for a parameter: trainable on a mutable model, constant otherwise.
template <typename T>
Var leaf(Tape<T>& tape, Parameter<T>& p) {
  return tape.parameter(p);
}
template <typename T>
Var leaf(Tape<T>& tape, const Parameter<T>& p) {
  return tape.constant(p.value);
}

template <typename T, typename Layer>
Var apply_conv(Tape<T>& tape, Var x, Layer& conv, Padding padding) {
  return conv2d(tape, x, leaf(tape, conv.weight), leaf(tape, conv.bias), padding);
}

template <typename T, typename Stage>
Var apply_stage(Tape<T>& tape, Var x, Stage& stage, Padding padding, Mode mode) {
  Var y = apply_conv(tape, x, stage.conv, padding);
  Var gamma = leaf(tape, stage.bn.gamma);
  Var beta = leaf(tape, stage.bn.beta);
  if constexpr (std::is_const_v<Stage>) {
    y = batchnorm_eval(tape, y, gamma, beta, stage.bn.stats);
  } else {
    y = mode == Mode::kTrain ? batchnorm_train(tape, y, gamma, beta, stage.bn.stats)
                             : batchnorm_eval(tape, y, gamma, beta, stage.bn.stats);
  }
  return relu(tape, y);
}

template <typename T, typename Stage>
void append_stage(std::vector<std::pair<std::string, T*>>& out, Stage& s) {
  out.emplace_back(s.conv.weight.name, &s.conv.weight.value);
  out.emplace_back(s.conv.bias.name, &s.conv.bias.value);
  out.emplace_back(s.bn.gamma.name, &s.bn.gamma.value);
  out.emplace_back(s.bn.beta.name, &s.bn.beta.value);
  const std::string prefix = s.bn.gamma.name.substr(0, s.bn.gamma.name.size() - std::string("gamma").size());
  out.emplace_back(prefix + "running_mean", &s.bn.stats.running_mean);
  out.emplace_back(prefix + "running_var", &s.bn.stats.running_var);
}

}  // namespace

template <typename T>
SilkModel<T>::SilkModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  int c_in = 1;
  int idx = 0;
  for (int c : cfg_.channels) {
    backbone_.push_back(make_stage<T>("backbone." + std::to_string(idx++), c_in, c, rng));
    backbone_.push_back(make_stage<T>("backbone." + std::to_string(idx++), c, c, rng));
    c_in = c;
  }
  keypoint_hidden_ = make_stage<T>("keypoint_head.0", c_in, cfg_.head_hidden, rng);
  keypoint_out_ = make_conv<T>("keypoint_head.1.conv", cfg_.head_hidden, 1, 1, rng);
  descriptor_hidden_ = make_stage<T>("descriptor_head.0", c_in, cfg_.head_hidden, rng);
  descriptor_out_ = make_conv<T>("descriptor_head.1.conv", cfg_.head_hidden, cfg_.descriptor_dim, 1, rng);
}

template <typename T>
std::vector<Parameter<T>*> SilkModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto stage = [&](ConvBnRelu<T>& s) {
    out.insert(out.end(), {&s.conv.weight, &s.conv.bias, &s.bn.gamma, &s.bn.beta});
  };
  for (auto& s : backbone_) stage(s);
  stage(keypoint_hidden_);
  out.insert(out.end(), {&keypoint_out_.weight, &keypoint_out_.bias});
  stage(descriptor_hidden_);
  out.insert(out.end(), {&descriptor_out_.weight, &descriptor_out_.bias});
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> SilkModel<T>::parameters() const {
  auto mutable_params = const_cast<SilkModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
std::size_t SilkModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> SilkModel<T>::state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& s : backbone_) append_stage(out, s);
  append_stage(out, keypoint_hidden_);
  out.emplace_back(keypoint_out_.weight.name, &keypoint_out_.weight.value);
  out.emplace_back(keypoint_out_.bias.name, &keypoint_out_.bias.value);
  append_stage(out, descriptor_hidden_);
  out.emplace_back(descriptor_out_.weight.name, &descriptor_out_.weight.value);
  out.emplace_back(descriptor_out_.bias.name, &descriptor_out_.bias.value);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> SilkModel<T>::state() const {
  auto s = const_cast<SilkModel*>(this)->state();
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [name, t] : s) out.emplace_back(name, t);
  return out;
}

template <typename T>
template <typename Self>
DenseVars SilkModel<T>::run(Self& self, Tape<T>& tape, const ImageGray& img, Mode mode) {
  const ModelConfig& cfg = self.cfg_;
  const int min_extent = cfg.min_input_extent();
  if (img.height < min_extent || img.width < min_extent) {
    throw ShapeError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) + " is too small for " +
                     std::string(backbone_name(cfg.backbone)) + "; minimum size is " + std::to_string(min_extent) +
                     "x" + std::to_string(min_extent));
  }
  std::vector<T> pixels(img.pixels.begin(), img.pixels.end());
  Var x = tape.constant(Tensor<T>(Shape{1, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)},
                                  std::move(pixels)));
  for (auto& stage : self.backbone_) x = apply_stage(tape, x, stage, cfg.padding, mode);

  Var k = apply_stage(tape, x, self.keypoint_hidden_, cfg.padding, mode);
  k = apply_conv(tape, k, self.keypoint_out_, cfg.padding);
  Var d = apply_stage(tape, x, self.descriptor_hidden_, cfg.padding, mode);
  d = apply_conv(tape, d, self.descriptor_out_, cfg.padding);

  DenseVars out;
  out.logits = k;
  out.descriptors = d;
  out.mapping = cfg.mapping();
  out.grid = cfg.output_grid(img.shape());
  return out;
}

template <typename T>
DenseVars SilkModel<T>::forward(Tape<T>& tape, const ImageGray& img, Mode mode) {
  return run(*this, tape, img, mode);
}

template <typename T>
DenseOutput<T> SilkModel<T>::infer(const ImageGray& img) const {
  Tape<T> tape(false);
  const DenseVars v = run(*this, tape, img, Mode::kEval);
  return {tape.value(v.logits), tape.value(v.descriptors), v.mapping};
}

template class SilkModel<float>;
template class SilkModel<double>;

}  // namespace silk
