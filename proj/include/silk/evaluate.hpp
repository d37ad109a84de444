#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "silk/estimation.hpp"
#include "silk/hpatches.hpp"
#include "silk/matching.hpp"
#include "silk/model.hpp"

namespace silk {

struct EvalOptions {
  std::size_t top_k = 10000;
  std::vector<double> eps{1.0, 3.0};
  MatchFilter filter;
  double temperature = kDefaultTemperature;
  RansacOptions ransac;
  std::uint64_t seed = 0;
  // 0 reads SILK_THREADS, falling back to the hardware thread count.
  int threads = 0;

  void validate() const;
};

struct PairResult {
  std::string scene;
  int pair = 0;
  std::vector<std::optional<double>> repeatability;  // per eps
  std::vector<std::optional<double>> mma;            // per eps
  double corner_error = 0.0;                         // +inf when estimation failed
  double keypoints = 0.0;                            // mean of the two images
  std::size_t matches = 0;
};

// Dataset means. Repeatability and MMA average over the pairs where they are
// defined; accuracy and AUC count failed estimates as misses.
struct MetricReport {
  std::vector<double> eps;
  std::vector<std::optional<double>> repeatability;
  std::vector<std::optional<double>> mma;
  std::vector<std::optional<double>> accuracy;
  std::vector<std::optional<double>> auc;
  double keypoints = 0.0;
  double matches = 0.0;
  std::size_t pairs = 0;
};

struct EvalResult {
  MetricReport report;
  std::vector<PairResult> pairs;
};

PairResult evaluate_pair(const SilkModel<float>& model, const ScenePair& pair, const EvalOptions& opts,
                         std::uint64_t pair_seed);

MetricReport summarize(const std::vector<PairResult>& pairs, const std::vector<double>& eps);

EvalResult evaluate(const SilkModel<float>& model, const std::vector<ScenePair>& pairs, const EvalOptions& opts);
// Streams the dataset scene by scene.
EvalResult evaluate(const SilkModel<float>& model, const std::filesystem::path& dataset, int resize_short,
                    const EvalOptions& opts);

int eval_thread_count(int requested);

// One tab-separated line per pair
// (scene, pair, repeat@eps..., mma@eps..., corner_err, n_pre, n_post)
// followed by a #SUMMARY block.
void write_results(std::ostream& os, const EvalResult& result);
void write_results(const std::filesystem::path& path, const EvalResult& result);
void print_summary(std::ostream& os, const MetricReport& report);

}  // namespace silk
