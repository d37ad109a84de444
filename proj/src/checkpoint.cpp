#include "silk/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "binary_io.hpp"
#include "silk/error.hpp"

namespace silk {

std::optional<std::string> CheckpointFile::get(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const NamedTensor* CheckpointFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

namespace {

using detail::Reader;
using detail::Writer;

std::string format_metadata(const std::vector<std::pair<std::string, std::string>>& md) {
  std::string out;
  for (const auto& [k, v] : md) out += k + "=" + v + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_metadata(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FileError(FileErrorKind::kMalformed, "malformed checkpoint metadata line: " + line);
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.uint<std::uint32_t>(kCheckpointVersion);
  const std::string md = format_metadata(file.metadata);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(md.size()));
  w.bytes(md.data(), md.size());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) w.uint<std::uint64_t>(d);
    for (float v : t.tensor.data()) w.f32(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError(FileErrorKind::kIo, "cannot open checkpoint for writing: " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw FileError(FileErrorKind::kIo, "failed writing checkpoint " + path.string());
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(FileErrorKind::kIo, "cannot open checkpoint " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());

  if (r.remaining() < sizeof(kCheckpointMagic) ||
      std::memcmp(r.take(sizeof(kCheckpointMagic)), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FileError(FileErrorKind::kBadMagic, "bad magic in checkpoint " + path.string());
  }
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FileError(FileErrorKind::kVersionMismatch,
                    "checkpoint version " + std::to_string(version) + " unsupported (expected 1): " + path.string());
  }
  CheckpointFile file;
  const auto md_len = r.uint<std::uint32_t>();
  file.metadata = parse_metadata(std::string(r.take(md_len), md_len));
  const auto count = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.uint<std::uint16_t>();
    t.name.assign(r.take(name_len), name_len);
    const auto rank = r.uint<std::uint8_t>();
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.uint<std::uint64_t>());
      if (d == 0 || d > (std::size_t{1} << 40)) {
        throw FileError(FileErrorKind::kMalformed, "invalid extent in tensor " + t.name + " of " + path.string());
      }
      n *= d;
    }
    r.need(n * 4);
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    t.tensor = Tensor<float>(std::move(shape), std::move(data));
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void save_checkpoint(const std::filesystem::path& path, const SilkModel<float>& model, const TrainingState* training) {
  const ModelConfig& cfg = model.config();
  CheckpointFile file;
  file.metadata = {{"backbone", std::string(backbone_name(cfg.backbone))},
                   {"channels", join_ints(cfg.channels)},
                   {"descriptor_dim", std::to_string(cfg.descriptor_dim)},
                   {"head_hidden", std::to_string(cfg.head_hidden)},
                   {"padding", std::string(padding_name(cfg.padding))}};
  for (const auto& [name, t] : model.state()) file.tensors.push_back({name, *t});
  if (training) {
    file.metadata.emplace_back("iteration", std::to_string(training->iteration));
    file.metadata.emplace_back("adam_step", std::to_string(training->adam.step));
    const auto params = model.parameters();
    if (training->adam.m.size() != params.size() || training->adam.v.size() != params.size()) {
      throw ShapeError("optimizer state does not match the model parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) file.tensors.push_back({"adam.m." + params[i]->name, training->adam.m[i]});
    for (std::size_t i = 0; i < params.size(); ++i) file.tensors.push_back({"adam.v." + params[i]->name, training->adam.v[i]});
  }
  write_checkpoint_file(path, file);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const CheckpointFile file = read_checkpoint_file(path);
  auto require = [&](const std::string& key) {
    auto v = file.get(key);
    if (!v) throw FileError(FileErrorKind::kMalformed, "checkpoint " + path.string() + " lacks metadata key " + key);
    return *v;
  };

  ModelConfig cfg;
  try {
    cfg = ModelConfig::for_backbone(parse_backbone(require("backbone")));
  } catch (const ConfigError& e) {
    throw FileError(FileErrorKind::kUnknownBackbone, std::string(e.what()) + " in checkpoint " + path.string());
  }
  try {
    cfg.channels = split_ints(require("channels"));
    cfg.descriptor_dim = std::stoi(require("descriptor_dim"));
    cfg.head_hidden = std::stoi(require("head_hidden"));
    cfg.padding = parse_padding(require("padding"));
    cfg.validate();
  } catch (const FileError&) {
    throw;
  } catch (const std::exception& e) {
    throw FileError(FileErrorKind::kMalformed, "invalid model metadata in " + path.string() + ": " + e.what());
  }

  SilkModel<float> model(cfg, 0);
  for (auto& [name, t] : model.state()) {
    const NamedTensor* src = file.find(name);
    if (!src) throw FileError(FileErrorKind::kMalformed, "checkpoint " + path.string() + " lacks tensor " + name);
    if (src->tensor.shape() != t->shape()) {
      throw FileError(FileErrorKind::kMalformed, "tensor " + name + " has shape " + shape_string(src->tensor.shape()) +
                                                     ", model expects " + shape_string(t->shape()));
    }
    *t = src->tensor;
  }

  LoadedCheckpoint out{std::move(model), std::nullopt};
  if (auto step = file.get("adam_step")) {
    TrainingState ts;
    ts.adam.step = std::stoll(*step);
    ts.iteration = std::stoll(require("iteration"));
    for (const auto* p : out.model.parameters()) {
      const NamedTensor* m = file.find("adam.m." + p->name);
      const NamedTensor* v = file.find("adam.v." + p->name);
      if (!m || !v || m->tensor.shape() != p->value.shape() || v->tensor.shape() != p->value.shape()) {
        throw FileError(FileErrorKind::kMalformed, "incomplete optimizer state for " + p->name + " in " + path.string());
      }
      ts.adam.m.push_back(m->tensor);
      ts.adam.v.push_back(v->tensor);
    }
    out.training = std::move(ts);
  }
  return out;
}

}  // namespace silk
