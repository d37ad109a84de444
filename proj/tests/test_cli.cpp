#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "silk/checkpoint.hpp"
#include "silk/cli.hpp"
#include "silk/hpatches.hpp"
#include "silk/image_io.hpp"
#include "silk/matching.hpp"
#include "silk/viz.hpp"
#include "support/synthetic.hpp"

using namespace silk;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::initializer_list<std::string> args) {
  std::vector<std::string> owned{"silk"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : owned) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const std::string& s, const std::string& prefix) {
  std::size_t n = 0;
  std::istringstream is(s);
  for (std::string line; std::getline(is, line);) n += line.rfind(prefix, 0) == 0;
  return n;
}

// Shared fixture: a directory of training images and a one-step checkpoint.
struct Workspace {
  fs::path root;
  fs::path data;
  fs::path ckpt;
  fs::path image;

  Workspace() {
    root = fs::temp_directory_path() / "silk_cli_test";
    fs::remove_all(root);
    data = root / "data";
    fs::create_directories(data);
    const auto corpus = silk::testing::synthetic_corpus(3, 40, 48, 5);
    for (std::size_t i = 0; i < corpus.size(); ++i) write_pgm(data / ("img" + std::to_string(i) + ".pgm"), corpus[i]);
    image = data / "img0.pgm";
    ckpt = root / "model.ckpt";
    const Run r = cli({"train", "--data", data.string(), "--out", ckpt.string(), "--backbone", "vggnp-mu", "--crop",
                       "24", "--iters", "1", "--log-every", "0"});
    REQUIRE(r.code == kExitOk);
  }
};

const Workspace& workspace() {
  static const Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  const Run missing = cli({"train", "--out", "x.ckpt"});
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("--data") != std::string::npos);
  CHECK(cli({"train", "--data", ".", "--out", "x.ckpt", "--bogus", "1"}).code == kExitUsage);
  CHECK(cli({"train", "--data", ".", "--out", "x.ckpt", "--backbone", "resnet"}).code == kExitUsage);
  CHECK(cli({"train", "--data", ".", "--out", "x.ckpt", "--crop", "big"}).code == kExitUsage);
  CHECK(cli({"train", "--data", ".", "--out", "x.ckpt", "--lr", "-1"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"train", "--help"}).out.find("--iters") != std::string::npos);
}

TEST_CASE("runtime failures exit with code 1") {
  const fs::path empty = fs::temp_directory_path() / "silk_cli_empty";
  fs::create_directories(empty);
  const Run r = cli({"train", "--data", empty.string(), "--out", (empty / "m.ckpt").string(), "--backbone",
                     "vggnp-mu", "--crop", "24", "--iters", "1"});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.find(empty.string()) != std::string::npos);
}

TEST_CASE("train writes a checkpoint and the log file") {
  const Workspace& ws = workspace();
  const fs::path out = ws.root / "logged.ckpt";
  const fs::path log = ws.root / "train.log";
  const Run r = cli({"train", "--data", ws.data.string(), "--out", out.string(), "--backbone", "vggnp-mu", "--crop",
                     "24", "--iters", "2", "--log-every", "1", "--log", log.string()});
  REQUIRE(r.code == kExitOk);
  CHECK(count_lines(r.out, "iter=") == 2);
  CHECK(count_lines(read_all(log), "iter=") == 2);
  CHECK(load_checkpoint(out).training->iteration == 2);
}

TEST_CASE("config file precedence: flag over file over default") {
  const Workspace& ws = workspace();
  const fs::path cfg = ws.root / "train.cfg";
  std::ofstream(cfg) << "backbone = vggnp-mu\ncrop = 24\niters = 3\nlog-every = 1\nseed = 9\n";
  const fs::path out = ws.root / "cfg.ckpt";
  const Run r = cli({"train", "--config", cfg.string(), "--data", ws.data.string(), "--out", out.string(), "--iters",
                     "2"});
  REQUIRE(r.code == kExitOk);
  // iters from the flag, log-every from the file, padding from the default.
  CHECK(count_lines(r.out, "iter=") == 2);
  const LoadedCheckpoint ck = load_checkpoint(out);
  CHECK(ck.training->iteration == 2);
  CHECK(ck.model.config().backbone == Backbone::kVggnpMu);
  CHECK(ck.model.config().padding == Padding::kValid);

  std::ofstream(cfg) << "backbone = vggnp-mu\nunknown-key = 3\n";
  CHECK(cli({"train", "--config", cfg.string(), "--data", ws.data.string(), "--out", out.string()}).code ==
        kExitUsage);
}

TEST_CASE("training from the command line is deterministic") {
  const Workspace& ws = workspace();
  for (const char* name : {"d1.ckpt", "d2.ckpt"}) {
    REQUIRE(cli({"train", "--data", ws.data.string(), "--out", (ws.root / name).string(), "--backbone", "vggnp-mu",
                 "--crop", "24", "--iters", "2", "--seed", "4"})
                .code == kExitOk);
  }
  CHECK(read_all(ws.root / "d1.ckpt") == read_all(ws.root / "d2.ckpt"));
}

TEST_CASE("extract and match") {
  const Workspace& ws = workspace();
  const fs::path da = ws.root / "a.dsc", db = ws.root / "b.dsc";
  const Run e = cli({"extract", "--ckpt", ws.ckpt.string(), "--image", ws.image.string(), "--topk", "50", "--out",
                     da.string()});
  REQUIRE(e.code == kExitOk);
  CHECK(e.out == "50 keypoints\n");
  REQUIRE(cli({"extract", "--ckpt", ws.ckpt.string(), "--image", ws.image.string(), "--topk", "50", "--out",
               db.string()})
              .code == kExitOk);
  CHECK(read_all(da) == read_all(db));
  CHECK(load_descriptors(da).dim() == 32);

  const fs::path none = ws.root / "none.tsv", ratio = ws.root / "ratio.tsv";
  REQUIRE(cli({"match", "--desc-a", da.string(), "--desc-b", db.string(), "--out", none.string()}).code == kExitOk);
  const auto rows = read_match_tsv(none);
  CHECK(rows.size() == 50);
  for (const auto& r : rows) CHECK(r.ia == r.ib);
  REQUIRE(cli({"match", "--desc-a", da.string(), "--desc-b", db.string(), "--filter", "ratio:1.0", "--out",
               ratio.string()})
              .code == kExitOk);
  CHECK(read_all(none) == read_all(ratio));

  CHECK(cli({"match", "--desc-a", da.string(), "--desc-b", db.string(), "--filter", "lowe", "--out",
             none.string()})
            .code == kExitUsage);

  const fs::path tiny = ws.root / "tiny.pgm";
  write_pgm(tiny, ImageGray(5, 5, 0.5f));
  const Run small = cli({"extract", "--ckpt", ws.ckpt.string(), "--image", tiny.string(), "--out", da.string()});
  CHECK(small.code == kExitFailure);
  CHECK(small.err.find("7x7") != std::string::npos);
}

TEST_CASE("double-softmax filtered matches nest") {
  const Workspace& ws = workspace();
  const fs::path da = ws.root / "na.dsc", db = ws.root / "nb.dsc";
  REQUIRE(cli({"extract", "--ckpt", ws.ckpt.string(), "--image", ws.image.string(), "--topk", "80", "--out",
               da.string()})
              .code == kExitOk);
  REQUIRE(cli({"extract", "--ckpt", ws.ckpt.string(), "--image", (ws.data / "img1.pgm").string(), "--topk", "80",
               "--out", db.string()})
              .code == kExitOk);
  const fs::path lo = ws.root / "lo.tsv", hi = ws.root / "hi.tsv";
  REQUIRE(cli({"match", "--desc-a", da.string(), "--desc-b", db.string(), "--filter", "dsoftmax:0.5", "--out",
               lo.string()})
              .code == kExitOk);
  REQUIRE(cli({"match", "--desc-a", da.string(), "--desc-b", db.string(), "--filter", "dsoftmax:0.9", "--out",
               hi.string()})
              .code == kExitOk);
  const auto rl = read_match_tsv(lo), rh = read_match_tsv(hi);
  for (const auto& r : rh) {
    CHECK(std::any_of(rl.begin(), rl.end(), [&](const MatchRow& x) { return x.ia == r.ia && x.ib == r.ib; }));
  }
}

TEST_CASE("eval-hpatches on an identity mini dataset") {
  const Workspace& ws = workspace();
  const fs::path ds = ws.root / "hp";
  for (const char* scene : {"v_one", "i_two"}) {
    const fs::path dir = ds / scene;
    fs::create_directories(dir);
    const ImageGray img = silk::testing::synthetic_image(40, 50, std::hash<std::string>{}(scene));
    for (int k = 1; k <= 6; ++k) write_pgm(dir / (std::to_string(k) + ".pgm"), img);
    for (int k = 2; k <= 6; ++k) write_homography_file(dir / ("H_1_" + std::to_string(k)), Homography());
  }
  const fs::path r1 = ws.root / "r1.tsv", r2 = ws.root / "r2.tsv";
  const Run run = cli({"eval-hpatches", "--ckpt", ws.ckpt.string(), "--data", ds.string(), "--topk", "30",
                       "--resize-short", "0", "--eps", "1,3", "--out", r1.string()});
  REQUIRE(run.code == kExitOk);
  CHECK(run.out.find("pairs") != std::string::npos);
  const std::string report = read_all(r1);
  CHECK(count_lines(report, "v_one\t") == 5);
  CHECK(report.find("#repeatability@1\t1") != std::string::npos);
  CHECK(report.find("#mma@1\t1") != std::string::npos);
  CHECK(report.find("#homography_accuracy@1\t1") != std::string::npos);
  REQUIRE(cli({"eval-hpatches", "--ckpt", ws.ckpt.string(), "--data", ds.string(), "--topk", "30",
               "--resize-short", "0", "--out", r2.string()})
              .code == kExitOk);
  CHECK(read_all(r1) == read_all(r2));

  const fs::path empty = ws.root / "hp_empty";
  fs::create_directories(empty);
  CHECK(cli({"eval-hpatches", "--ckpt", ws.ckpt.string(), "--data", empty.string(), "--out", r1.string()}).code ==
        kExitFailure);
}

TEST_CASE("viz layout and colours") {
  const ImageGray a(20, 30, 0.0f), b(25, 10, 0.0f);
  const RgbImage empty = render_matches(a, b, {}, std::nullopt);
  CHECK(empty.height == 25);
  CHECK(empty.width == 40);
  CHECK(empty.pixel(22, 5) == std::array<std::uint8_t, 3>{0, 0, 0});

  const std::vector<MatchRow> good = {{0, 0, 5.5, 5.5, 5.5, 5.5, 1.0, 1.0}};
  const RgbImage green = render_matches(a, b, good, Homography());
  CHECK(green.pixel(5, 5) == kCorrectColor);
  CHECK(green.pixel(5, 35) == kCorrectColor);
  const std::vector<MatchRow> bad = {{0, 0, 5.5, 5.5, 5.5, 15.5, 1.0, 1.0}};
  CHECK(render_matches(a, b, bad, Homography()).pixel(5, 5) == kWrongColor);
  CHECK(render_matches(a, b, bad, std::nullopt).pixel(5, 5) == kNeutralColor);
}

TEST_CASE("viz command") {
  const Workspace& ws = workspace();
  const fs::path tsv = ws.root / "viz.tsv";
  std::ofstream(tsv) << "# ia ib xa ya xb yb sim prob\n0\t0\t5.5\t5.5\t5.5\t5.5\t1\t1\n";
  const fs::path h = ws.root / "H_id";
  write_homography_file(h, Homography());
  const fs::path png = ws.root / "viz.png";
  const Run r = cli({"viz", "--image-a", ws.image.string(), "--image-b", (ws.data / "img1.pgm").string(),
                     "--matches", tsv.string(), "--h-gt", h.string(), "--out", png.string()});
  REQUIRE(r.code == kExitOk);
  const ImageGray back = read_image(png);
  CHECK(back.height == 40);
  CHECK(back.width == 96);
  CHECK(back.at(5, 5) == doctest::Approx(luma(0, 255, 0)).epsilon(1e-6));

  std::ofstream(tsv) << "0\t0\t5.5\t5.5\t5.5\n";
  CHECK(cli({"viz", "--image-a", ws.image.string(), "--image-b", ws.image.string(), "--matches", tsv.string(),
             "--out", png.string()})
            .code == kExitFailure);
}
