#include "silk/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "silk/error.hpp"
#include "silk/metrics.hpp"

namespace silk {

void EvalOptions::validate() const {
  if (top_k < 1) throw ConfigError("top-k must be >= 1");
  if (eps.empty()) throw ConfigError("at least one epsilon is required");
  for (double e : eps) {
    if (!(e > 0.0)) throw ConfigError("epsilon values must be positive");
  }
  filter.validate();
  ransac.validate();
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

int eval_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SILK_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

PairResult evaluate_pair(const SilkModel<float>& model, const ScenePair& pair, const EvalOptions& opts,
                         std::uint64_t pair_seed) {
  const KeypointSet a = select_topk(model.infer(*pair.image_a), opts.top_k);
  const KeypointSet b = select_topk(model.infer(*pair.image_b), opts.top_k);
  const MatchSet matches = match_descriptors(a.descriptors, b.descriptors, opts.filter, opts.temperature);

  PairResult r;
  r.scene = pair.scene;
  r.pair = pair.pair;
  r.keypoints = 0.5 * static_cast<double>(a.size() + b.size());
  r.matches = matches.size();
  for (double e : opts.eps) {
    r.repeatability.push_back(
        repeatability(a.keypoints, b.keypoints, pair.h_gt, pair.image_a->shape(), pair.image_b->shape(), e));
    r.mma.push_back(mma(matches, a.keypoints, b.keypoints, pair.h_gt, e));
  }

  std::vector<PointPair> points;
  points.reserve(matches.size());
  for (const auto& m : matches.pairs) {
    points.push_back({Vec2(a.keypoints[m.a].x, a.keypoints[m.a].y), Vec2(b.keypoints[m.b].x, b.keypoints[m.b].y)});
  }
  RansacOptions ro = opts.ransac;
  ro.seed = pair_seed;
  const RansacResult est = ransac_homography(points, ro);
  r.corner_error = est.h ? corner_error(*est.h, pair.h_gt, pair.image_a->shape())
                         : std::numeric_limits<double>::infinity();
  return r;
}

namespace {

std::optional<double> mean_present(const std::vector<PairResult>& pairs,
                                   std::vector<std::optional<double>> PairResult::*field, std::size_t k) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    if (const auto& v = (p.*field)[k]) {
      acc += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void run_parallel(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  const int count = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (count == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

MetricReport summarize(const std::vector<PairResult>& pairs, const std::vector<double>& eps) {
  MetricReport rep;
  rep.eps = eps;
  rep.pairs = pairs.size();
  std::vector<double> errors;
  for (const auto& p : pairs) {
    errors.push_back(p.corner_error);
    rep.keypoints += p.keypoints;
    rep.matches += static_cast<double>(p.matches);
  }
  if (!pairs.empty()) {
    rep.keypoints /= static_cast<double>(pairs.size());
    rep.matches /= static_cast<double>(pairs.size());
  }
  for (std::size_t k = 0; k < eps.size(); ++k) {
    rep.repeatability.push_back(mean_present(pairs, &PairResult::repeatability, k));
    rep.mma.push_back(mean_present(pairs, &PairResult::mma, k));
    if (pairs.empty()) {
      rep.accuracy.push_back(std::nullopt);
    } else {
      const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= eps[k]; });
      rep.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(pairs.size()));
    }
    rep.auc.push_back(homography_auc(errors, eps[k]));
  }
  return rep;
}

EvalResult evaluate(const SilkModel<float>& model, const std::vector<ScenePair>& pairs, const EvalOptions& opts) {
  opts.validate();
  if (pairs.empty()) throw Error("no image pairs to evaluate");
  EvalResult out;
  out.pairs.resize(pairs.size());
  run_parallel(pairs.size(), eval_thread_count(opts.threads), [&](std::size_t i) {
    out.pairs[i] = evaluate_pair(model, pairs[i], opts, mix_seed(opts.seed, i));
  });
  out.report = summarize(out.pairs, opts.eps);
  return out;
}

EvalResult evaluate(const SilkModel<float>& model, const std::filesystem::path& dataset, int resize_short,
                    const EvalOptions& opts) {
  opts.validate();
  const auto scenes = list_hpatches_scenes(dataset);
  EvalResult out;
  std::size_t index = 0;
  for (const auto& scene : scenes) {
    const auto pairs = load_hpatches_scene(scene, resize_short);
    std::vector<PairResult> results(pairs.size());
    run_parallel(pairs.size(), eval_thread_count(opts.threads), [&](std::size_t i) {
      results[i] = evaluate_pair(model, pairs[i], opts, mix_seed(opts.seed, index + i));
    });
    index += pairs.size();
    out.pairs.insert(out.pairs.end(), results.begin(), results.end());
  }
  out.report = summarize(out.pairs, opts.eps);
  return out;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream s;
  s << std::setprecision(6) << *v;
  return s.str();
}

std::string eps_label(double e) {
  std::ostringstream s;
  s << e;
  return s.str();
}

}  // namespace

void write_results(std::ostream& os, const EvalResult& result) {
  const auto& eps = result.report.eps;
  os << "#scene\tpair";
  for (double e : eps) os << "\trepeat@" << eps_label(e);
  for (double e : eps) os << "\tmma@" << eps_label(e);
  os << "\tcorner_err\tn_pre\tn_post\n";
  for (const auto& p : result.pairs) {
    os << p.scene << '\t' << p.pair;
    for (const auto& v : p.repeatability) os << '\t' << fmt(v);
    for (const auto& v : p.mma) os << '\t' << fmt(v);
    os << '\t' << (std::isfinite(p.corner_error) ? fmt(p.corner_error) : "inf") << '\t' << fmt(p.keypoints) << '\t'
       << p.matches << '\n';
  }
  os << "#SUMMARY\n";
  const MetricReport& r = result.report;
  os << "#pairs\t" << r.pairs << '\n';
  for (std::size_t k = 0; k < eps.size(); ++k) {
    const std::string e = eps_label(eps[k]);
    os << "#repeatability@" << e << '\t' << fmt(r.repeatability[k]) << '\n';
    os << "#mma@" << e << '\t' << fmt(r.mma[k]) << '\n';
    os << "#homography_accuracy@" << e << '\t' << fmt(r.accuracy[k]) << '\n';
    os << "#homography_auc@" << e << '\t' << fmt(r.auc[k]) << '\n';
  }
  os << "#keypoints\t" << fmt(r.keypoints) << '\n';
  os << "#matches\t" << fmt(r.matches) << '\n';
}

void write_results(const std::filesystem::path& path, const EvalResult& result) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write results file " + path.string());
  write_results(out, result);
}

void print_summary(std::ostream& os, const MetricReport& r) {
  os << "pairs: " << r.pairs << "  keypoints: " << fmt(r.keypoints) << "  matches: " << fmt(r.matches) << '\n';
  os << std::left << std::setw(8) << "eps" << std::setw(12) << "repeat" << std::setw(12) << "mma" << std::setw(12)
     << "hom_acc" << "hom_auc\n";
  for (std::size_t k = 0; k < r.eps.size(); ++k) {
    os << std::setw(8) << eps_label(r.eps[k]) << std::setw(12) << fmt(r.repeatability[k]) << std::setw(12)
       << fmt(r.mma[k]) << std::setw(12) << fmt(r.accuracy[k]) << fmt(r.auc[k]) << '\n';
  }
}

}  // namespace silk
