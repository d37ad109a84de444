#include "silk/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "silk/checkpoint.hpp"
#include "silk/error.hpp"
#include "silk/evaluate.hpp"
#include "silk/hpatches.hpp"
#include "silk/image_io.hpp"
#include "silk/matching.hpp"
#include "silk/trainer.hpp"
#include "silk/viz.hpp"

namespace silk {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int parse_crop(const std::string& text) {
  if (text == "auto") return 0;
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || v <= 0) throw UsageError("--crop must be 'auto' or a positive integer");
  return v;
}

// Expands `<subcommand> ... --config FILE ...` by inserting the file's
// `key = value` entries as `--key=value` right after the subcommand name.
std::vector<std::string> with_config_file(std::vector<std::string> argv) {
  if (argv.size() < 2 || argv[1].starts_with('-')) return argv;
  std::optional<std::string> path;
  for (std::size_t i = 2; i < argv.size(); ++i) {
    if (argv[i] == "--config" && i + 1 < argv.size()) path = argv[i + 1];
    if (argv[i].starts_with("--config=")) path = argv[i].substr(9);
  }
  if (!path) return argv;
  std::ifstream in(*path);
  if (!in) throw UsageError("cannot read config file " + *path);
  std::vector<std::string> entries;
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == argv[1])) {
      throw UsageError("config file " + *path + ": unexpected section for key " + item.fullname());
    }
    if (item.name == "config") throw UsageError("config files cannot include other config files");
    std::string value;
    for (std::size_t k = 0; k < item.inputs.size(); ++k) value += (k ? "," : "") + item.inputs[k];
    entries.push_back("--" + item.name + "=" + value);
  }
  argv.insert(argv.begin() + 2, entries.begin(), entries.end());
  return argv;
}

std::vector<double> parse_eps_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string part = text.substr(start, comma - start);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size()) throw UsageError("--eps expects comma-separated numbers, got '" + text + "'");
    out.push_back(v);
    start = comma + 1;
  }
  return out;
}

struct TrainArgs {
  TrainConfig cfg;
  std::string backbone = "vggnp-4";
  std::string padding = "valid";
  std::string crop = "auto";
  std::string log_file;
  double aug_prob = 0.5;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto& c = a.cfg;
  app.add_option("--data", c.data_dir, "Directory of training images (PGM/PPM/PNG)")->required();
  app.add_option("--out", c.output, "Final checkpoint path")->required();
  app.add_option("--backbone", a.backbone, "vggnp-1..4 or vggnp-mu")->capture_default_str();
  app.add_option("--padding", a.padding, "valid or zero")->capture_default_str();
  app.add_option("--iters", c.iterations, "Training iterations")->capture_default_str();
  app.add_option("--lr", c.adam.learning_rate, "Adam learning rate")->capture_default_str();
  app.add_option("--beta1", c.adam.beta1)->capture_default_str();
  app.add_option("--beta2", c.adam.beta2)->capture_default_str();
  app.add_option("--adam-eps", c.adam.eps)->capture_default_str();
  app.add_option("--seed", c.seed)->capture_default_str();
  app.add_option("--crop", a.crop, "auto or a square crop size in pixels")->capture_default_str();
  app.add_option("--tau", c.loss.temperature, "Softmax temperature")->capture_default_str();
  app.add_option("--block-size", c.loss.block_size, "Similarity tile size")->capture_default_str();
  app.add_option("--keypoint-weight", c.loss.keypoint_weight)->capture_default_str();
  app.add_option("--log-every", c.log_every)->capture_default_str();
  app.add_option("--checkpoint-every", c.checkpoint_every)->capture_default_str();
  app.add_option("--log", a.log_file, "Also append log lines to this file");
  app.add_option("--resume", c.resume, "Checkpoint with optimizer state to continue from");
  app.add_option("--hom-perspective", c.sampler.max_perspective)->capture_default_str();
  app.add_option("--hom-rotation", c.sampler.max_rotation)->capture_default_str();
  app.add_option("--hom-scale-min", c.sampler.scale_min)->capture_default_str();
  app.add_option("--hom-scale-max", c.sampler.scale_max)->capture_default_str();
  app.add_option("--hom-translation", c.sampler.max_translation)->capture_default_str();
  app.add_option("--aug-brightness", c.augment.brightness_delta)->capture_default_str();
  app.add_option("--aug-contrast-min", c.augment.contrast_min)->capture_default_str();
  app.add_option("--aug-contrast-max", c.augment.contrast_max)->capture_default_str();
  app.add_option("--aug-gaussian-max", c.augment.gaussian_sigma_max)->capture_default_str();
  app.add_option("--aug-speckle-max", c.augment.speckle_sigma_max)->capture_default_str();
  app.add_option("--aug-blur-max", c.augment.motion_blur_kernel_max)->capture_default_str();
  app.add_option("--aug-prob", a.aug_prob, "Probability of every augmentation")->capture_default_str();
}

int run_train(TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = a.cfg;
  try {
    cfg.backbone = parse_backbone(a.backbone);
    cfg.padding = parse_padding(a.padding);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  cfg.crop = parse_crop(a.crop);
  cfg.augment.p_brightness = cfg.augment.p_contrast = cfg.augment.p_gaussian = cfg.augment.p_speckle =
      cfg.augment.p_motion_blur = a.aug_prob;
  cfg.sampler.seed = cfg.seed;
  cfg.augment.seed = cfg.seed;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  std::unique_ptr<std::ofstream> log_file;
  if (!a.log_file.empty()) {
    log_file = std::make_unique<std::ofstream>(a.log_file, std::ios::app);
    if (!*log_file) throw Error("cannot open log file " + a.log_file);
  }
  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    int overflow(int c) override {
      if (c == EOF) return 0;
      a->sputc(static_cast<char>(c));
      if (b) b->sputc(static_cast<char>(c));
      return c;
    }
    int sync() override {
      a->pubsync();
      if (b) b->pubsync();
      return 0;
    }
  } tee;
  tee.a = out.rdbuf();
  tee.b = log_file ? log_file->rdbuf() : nullptr;
  std::ostream log(&tee);
  const auto path = train(cfg, &log);
  log.flush();
  out << "checkpoint written to " << path.string() << '\n';
  return kExitOk;
}

struct ExtractArgs {
  std::string ckpt;
  std::string image;
  std::size_t topk = 10000;
  std::string out;
};

int run_extract(const ExtractArgs& a, std::ostream& out) {
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const ImageGray img = read_image(a.image);
  const int need = ck.model.config().min_input_extent();
  if (img.height < need || img.width < need) {
    throw ShapeError("image " + a.image + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                     "; the model needs at least " + std::to_string(need) + "x" + std::to_string(need));
  }
  const KeypointSet set = select_topk(ck.model.infer(img), a.topk);
  dump_descriptors(a.out, set);
  out << set.size() << " keypoints\n";
  return kExitOk;
}

struct MatchArgs {
  std::string desc_a;
  std::string desc_b;
  std::string filter = "none";
  std::string out;
  double tau = kDefaultTemperature;
};

int run_match(const MatchArgs& a, std::ostream& out) {
  MatchFilter filter;
  try {
    filter = MatchFilter::parse(a.filter);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const KeypointSet da = load_descriptors(a.desc_a);
  const KeypointSet db = load_descriptors(a.desc_b);
  if (da.dim() != db.dim() && da.size() > 0 && db.size() > 0) {
    throw ShapeError("descriptor dimensions differ: " + std::to_string(da.dim()) + " vs " + std::to_string(db.dim()));
  }
  const MatchSet m = match_descriptors(da.descriptors, db.descriptors, filter, a.tau);
  const auto rows = match_rows(m, da, db);
  write_match_tsv(a.out, rows);
  out << rows.size() << " matches\n";
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::size_t topk = 10000;
  std::string eps = "1,3";
  int resize_short = kHPatchesResizeShort;
  std::uint64_t seed = 0;
  std::string out;
  std::string filter = "none";
  int threads = 0;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  EvalOptions opts;
  opts.top_k = a.topk;
  opts.eps = parse_eps_list(a.eps);
  opts.seed = a.seed;
  opts.threads = a.threads;
  try {
    opts.filter = MatchFilter::parse(a.filter);
    opts.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const EvalResult result = evaluate(ck.model, a.data, a.resize_short, opts);
  write_results(a.out, result);
  print_summary(out, result.report);
  return kExitOk;
}

struct VizArgs {
  std::string image_a;
  std::string image_b;
  std::string matches;
  std::string h_gt;
  std::string out;
  double threshold = 3.0;
};

int run_viz(const VizArgs& a, std::ostream& out) {
  const ImageGray ia = read_image(a.image_a);
  const ImageGray ib = read_image(a.image_b);
  const auto rows = read_match_tsv(a.matches);
  std::optional<Homography> h;
  if (!a.h_gt.empty()) h = read_homography_file(a.h_gt);
  const RgbImage img = render_matches(ia, ib, rows, h, a.threshold);
  write_png(a.out, img);
  out << "wrote " << img.width << "x" << img.height << " image with " << rows.size() << " matches\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised keypoint detection and description", "silk"};
  app.require_subcommand(1);
  // A repeated option keeps its last value, so flags override config entries.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a directory of images");
  add_train(*train_cmd, train_args);

  ExtractArgs extract_args;
  auto* extract_cmd = app.add_subcommand("extract", "Extract top-k keypoints and descriptors from an image");
  extract_cmd->add_option("--ckpt", extract_args.ckpt)->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("--image", extract_args.image)->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("--topk", extract_args.topk)->capture_default_str()->check(CLI::PositiveNumber);
  extract_cmd->add_option("--out", extract_args.out)->required();

  MatchArgs match_args;
  auto* match_cmd = app.add_subcommand("match", "Mutual nearest neighbour matching of two descriptor dumps");
  match_cmd->add_option("--desc-a", match_args.desc_a)->required()->check(CLI::ExistingFile);
  match_cmd->add_option("--desc-b", match_args.desc_b)->required()->check(CLI::ExistingFile);
  match_cmd->add_option("--filter", match_args.filter, "none, ratio:T or dsoftmax:T")->capture_default_str();
  match_cmd->add_option("--tau", match_args.tau)->capture_default_str();
  match_cmd->add_option("--out", match_args.out)->required();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval-hpatches", "Evaluate a checkpoint on an HPatches-layout dataset");
  eval_cmd->add_option("--ckpt", eval_args.ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_args.data)->required();
  eval_cmd->add_option("--topk", eval_args.topk)->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--eps", eval_args.eps, "Comma-separated pixel thresholds")->capture_default_str();
  eval_cmd->add_option("--resize-short", eval_args.resize_short, "Shorter image edge, 0 keeps the size")
      ->capture_default_str();
  eval_cmd->add_option("--seed", eval_args.seed)->capture_default_str();
  eval_cmd->add_option("--filter", eval_args.filter)->capture_default_str();
  eval_cmd->add_option("--threads", eval_args.threads, "0 uses SILK_THREADS or all cores")->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out)->required();

  VizArgs viz_args;
  auto* viz_cmd = app.add_subcommand("viz", "Draw matches between two images");
  viz_cmd->add_option("--image-a", viz_args.image_a)->required()->check(CLI::ExistingFile);
  viz_cmd->add_option("--image-b", viz_args.image_b)->required()->check(CLI::ExistingFile);
  viz_cmd->add_option("--matches", viz_args.matches)->required()->check(CLI::ExistingFile);
  viz_cmd->add_option("--h-gt", viz_args.h_gt)->check(CLI::ExistingFile);
  viz_cmd->add_option("--threshold", viz_args.threshold)->capture_default_str();
  viz_cmd->add_option("--out", viz_args.out)->required();

  std::string config_path;
  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_path, "Flat key = value file; explicit flags take precedence");
  }

  std::vector<std::string> args;
  try {
    args = with_config_file(std::vector<std::string>(argv, argv + argc));
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  std::vector<const char*> expanded;
  for (const auto& a : args) expanded.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(expanded.size()), expanded.data());
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_args, out);
    if (extract_cmd->parsed()) return run_extract(extract_args, out);
    if (match_cmd->parsed()) return run_match(match_args, out);
    if (eval_cmd->parsed()) return run_eval(eval_args, out);
    if (viz_cmd->parsed()) return run_viz(viz_args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace silk
