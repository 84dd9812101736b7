#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "ecgxai/cli.hpp"
#include "ecgxai/fcn.hpp"
#include "ecgxai/signal.hpp"
#include "ecgxai/trainer.hpp"
#include "tempdir.hpp"

using namespace ecgxai;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const fs::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

const std::string kTinyLayers = "4:9:1,4:9:1,4:9:1";

// Shared small dataset: 6 per class, 24 classes.
const fs::path& tiny_data() {
  static TempDir dir("cli_data");
  static const bool made = [] {
    const auto r = run({"gen", "--samples-per-class", "6", "--out", (dir / "data").string()});
    REQUIRE(r.code == 0);
    return true;
  }();
  (void)made;
  static const fs::path data = dir / "data";
  return data;
}

}  // namespace

TEST_CASE("gen writes the requested dataset deterministically") {
  TempDir dir("gen");
  const auto a = run({"gen", "--samples-per-class", "100", "--seed", "7", "--out", (dir / "a").string()});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("N=2400") != std::string::npos);
  CHECK(signal::read_dataset(dir / "a").size() == 2400);
  const auto b = run({"gen", "--samples-per-class", "100", "--seed", "7", "--out", (dir / "b").string()});
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a" / "signals.bin") == slurp(dir / "b" / "signals.bin"));
  CHECK(fs::exists(dir / "a" / "resolved_config.txt"));

  const auto bad = run({"gen", "--samples-per-class", "0", "--out", (dir / "c").string()});
  CHECK(bad.code == cli::kExitValidation);
  CHECK_FALSE(bad.err.empty());
}

TEST_CASE("config file, flag precedence and unknown keys") {
  TempDir dir("cfg");
  std::ofstream(dir / "gen.cfg") << "# comment\nsamples_per_class=2\nclasses=3\nsteps=50\n";
  const auto r = run({"gen", "--config", (dir / "gen.cfg").string(), "--samples-per-class", "4", "--out",
                      (dir / "d").string()});
  REQUIRE(r.code == 0);
  const auto ds = signal::read_dataset(dir / "d");
  CHECK(ds.size() == 12);
  CHECK(ds.steps == 50);

  // the echoed config reproduces the run
  const auto again = run({"gen", "--config", (dir / "d" / "resolved_config.txt").string(), "--out",
                          (dir / "e").string()});
  REQUIRE(again.code == 0);
  CHECK(slurp(dir / "d" / "signals.bin") == slurp(dir / "e" / "signals.bin"));

  std::ofstream(dir / "bad.cfg") << "samples_per_clas=2\n";
  const auto bad = run({"gen", "--config", (dir / "bad.cfg").string(), "--out", (dir / "f").string()});
  CHECK(bad.code == cli::kExitValidation);
  CHECK(bad.err.find("unknown key") != std::string::npos);

  CHECK(run({"frobnicate"}).code != 0);
  CHECK(run({}).code != 0);
}

TEST_CASE("output directory falls back to the environment") {
  TempDir dir("env");
  ::setenv(cli::kOutputDirEnv, (dir / "envout").string().c_str(), 1);
  const auto r = run({"gen", "--samples-per-class", "1", "--classes", "2"});
  ::unsetenv(cli::kOutputDirEnv);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "envout" / "manifest"));
  CHECK(run({"gen", "--samples-per-class", "1"}).code == cli::kExitValidation);
}

TEST_CASE("train writes its artifacts") {
  TempDir dir("train");
  const auto r = run({"train", "--data", tiny_data().string(), "--variant", "multichannel1d", "--layers", kTinyLayers,
                      "--epochs", "2", "--batch-size", "16", "--fine-tune-epochs", "1", "--verbose=false", "--out",
                      (dir / "run").string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"model.fcnw", "history.csv", "fine_tune_history.csv", "metrics.csv", "group_metrics.csv",
                        "split.csv", "predictions.csv", "resolved_config.txt"}) {
    CHECK_MESSAGE(fs::exists(dir / "run" / f), f);
  }
  CHECK(line_count(dir / "run" / "history.csv") == 3);
  CHECK(r.out.find("params=") != std::string::npos);

  const auto bad = run({"train", "--data", tiny_data().string(), "--variant", "resnet", "--out", (dir / "x").string()});
  CHECK(bad.code == cli::kExitValidation);
  const auto missing = run({"train", "--data", (dir / "nope").string(), "--out", (dir / "y").string()});
  CHECK(missing.code != 0);
}

TEST_CASE("default multichannel checkpoint reports 531000 parameters") {
  TempDir dir("mc");
  const auto r = run({"train", "--data", tiny_data().string(), "--variant", "multichannel1d", "--epochs", "1",
                      "--lr", "0", "--verbose=false", "--out", dir.path().string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("params=531000") != std::string::npos);
  CHECK(fcn::count_params(fcn::read_checkpoint(dir / "model.fcnw")) == 531000);
}

TEST_CASE("zero learning rate reproduces the untrained model's metrics") {
  TempDir dir("lr0");
  const auto r = run({"train", "--data", tiny_data().string(), "--variant", "multichannel1d", "--layers", kTinyLayers,
                      "--epochs", "2", "--lr", "0", "--seed", "5", "--verbose=false", "--out", dir.path().string()});
  REQUIRE(r.code == 0);
  const auto ds = signal::read_dataset(tiny_data());
  const std::vector<fcn::LayerSpec> layers{{4, 9, 1}, {4, 9, 1}, {4, 9, 1}};
  const auto untrained = fcn::build_model(fcn::Variant::MultiChannel1D, layers, 24, 200, 12, 5);
  const auto split = signal::read_split(dir / "split.csv");
  train::write_metrics_csv(train::evaluate(untrained, ds, split.test), dir / "expected.csv");
  CHECK(slurp(dir / "metrics.csv") == slurp(dir / "expected.csv"));
}

TEST_CASE("explain shapes and the guided-gradcam guard") {
  TempDir dir("explain");
  const auto data = tiny_data().string();
  REQUIRE(run({"train", "--data", data, "--variant", "multichannel1d", "--layers", kTinyLayers, "--epochs", "1",
               "--verbose=false", "--out", (dir / "mc").string()})
              .code == 0);
  REQUIRE(run({"train", "--data", data, "--variant", "image2d", "--layers", "2:3:1,2:3:1,2:3:1", "--epochs", "1",
               "--verbose=false", "--out", (dir / "img").string()})
              .code == 0);
  REQUIRE(run({"train", "--data", data, "--variant", "stacked1d", "--layers", "2:20:4,2:5:1,2:5:2", "--epochs", "1",
               "--verbose=false", "--out", (dir / "st").string()})
              .code == 0);

  const auto cam = run({"explain", "--data", data, "--checkpoint", (dir / "mc" / "model.fcnw").string(), "--method",
                        "gradcam", "--samples", "0,1", "--out", (dir / "cam").string()});
  REQUIRE(cam.code == 0);
  CHECK(line_count(dir / "cam" / "sample_0.csv") == 201);
  CHECK(slurp(dir / "cam" / "sample_0.csv").rfind("score\n", 0) == 0);

  const auto ggc = run({"explain", "--data", data, "--checkpoint", (dir / "img" / "model.fcnw").string(), "--method",
                        "guided-gradcam", "--abs", "--samples", "3", "--out", (dir / "ggc").string()});
  REQUIRE(ggc.code == 0);
  CHECK(line_count(dir / "ggc" / "sample_3.csv") == 201);
  CHECK(slurp(dir / "ggc" / "sample_3.csv").rfind("t,I,II,III,aVR", 0) == 0);
  CHECK(slurp(dir / "ggc" / "sample_3.csv.meta").find("abs=1") != std::string::npos);

  const auto guard = run({"explain", "--data", data, "--checkpoint", (dir / "st" / "model.fcnw").string(), "--method",
                          "guided-gradcam", "--samples", "0", "--out", (dir / "no").string()});
  CHECK(guard.code == cli::kExitValidation);
  CHECK(guard.err.find("2400") != std::string::npos);
  CHECK(guard.err.find("stacked1d") != std::string::npos);

  const auto li = run({"lead-importance", "--data", data, "--checkpoint", (dir / "mc" / "model.fcnw").string(),
                       "--out", (dir / "li").string()});
  CHECK(li.code == cli::kExitValidation);
}

TEST_CASE("cluster skips classes that are too small") {
  TempDir dir("clu");
  const auto r = run({"cluster", "--data", tiny_data().string(), "--classes", "0,1", "--max-per-class", "4", "--out",
                      dir.path().string()});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("skipped") != std::string::npos);
  CHECK(slurp(dir / "cluster_summary.csv").find("skipped: too few samples") != std::string::npos);

  const auto ok = run({"cluster", "--data", tiny_data().string(), "--classes", "2", "--band", "20", "--out",
                       (dir / "ok").string()});
  REQUIRE(ok.code == 0);
  CHECK(fs::exists(dir / "ok" / "cluster_class_2.csv"));
  const auto again = run({"cluster", "--data", tiny_data().string(), "--classes", "2", "--band", "20", "--out",
                          (dir / "again").string()});
  CHECK(slurp(dir / "ok" / "cluster_class_2.csv") == slurp(dir / "again" / "cluster_class_2.csv"));
}

TEST_CASE("compare reproduces the reported significance levels") {
  TempDir dir("cmp");
  auto write_inputs = [&](const std::string& scheme, const std::string& good, const std::string& bad, int n_good) {
    std::ofstream p(dir / "pred.csv");
    std::ofstream b(dir / (scheme + ".csv"));
    p << "sample,label,predicted\n";
    b << "sample,scheme,region\n";
    for (int i = 0; i < 75; ++i) {
      p << i << ",0,0\n";
      b << i << ',' << scheme << ',' << (i < n_good ? good : bad) << '\n';
    }
  };
  write_inputs("easy-wpw", "MV-PL", "TV-AL", 57);
  auto r = run({"compare", "--predictions", (dir / "pred.csv").string(), "--baseline", (dir / "easy-wpw.csv").string(),
                "--scheme", "easy-wpw", "--out", (dir / "e").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("p_value=1.198e-06 significant") != std::string::npos);

  write_inputs("arruda", "LL", "RP", 54);  // class 0 lies in LL, LP and LPL
  r = run({"compare", "--predictions", (dir / "pred.csv").string(), "--baseline", (dir / "arruda.csv").string(),
           "--scheme", "arruda", "--out", (dir / "a").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("p_value=9.357e-08 significant") != std::string::npos);

  write_inputs("easy-wpw", "MV-PL", "MV-PL", 75);
  r = run({"compare", "--predictions", (dir / "pred.csv").string(), "--baseline", (dir / "easy-wpw.csv").string(),
           "--out", (dir / "same").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("p_value=1 not significant") != std::string::npos);

  r = run({"compare", "--predictions", (dir / "pred.csv").string(), "--baseline", (dir / "missing.csv").string(),
           "--out", (dir / "m").string()});
  CHECK(r.code == cli::kExitValidation);
}
