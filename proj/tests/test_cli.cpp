#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "../tools/commands.hpp"
#include "oracles.hpp"
#include "t1map/phantom.hpp"

using namespace t1map;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "t1map");
  std::vector<char *> argv;
  for (auto &a : args) {
    argv.push_back(a.data());
  }
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path &dir) {
  std::map<std::string, std::string> out;
  for (const auto &e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      out[fs::relative(e.path(), dir).string()] = slurp(e.path());
    }
  }
  return out;
}

// 64x64 phantom spec written as JSON.
fs::path write_spec(const fs::path &dir, double motion, double noise, std::uint64_t seed) {
  PhantomSpec s;
  s.grid = {64, 64, 2.1, 2.1};
  s.center_x = 32.0;
  s.center_y = 32.0;
  s.motion_amplitude = motion;
  s.noise_sigma = noise;
  s.seed = seed;
  nlohmann::json j;
  to_json(j, s);
  fs::create_directories(dir);
  std::ofstream(dir / "spec.json") << j.dump(2);
  return dir / "spec.json";
}

} // namespace

TEST_CASE("usage errors and version") {
  CHECK(run({}) == cli::kExitUsage);
  CHECK(run({"bogus"}) == cli::kExitUsage);
  CHECK(run({"fit"}) == cli::kExitUsage);
  CHECK(run({"--version"}) == cli::kExitOk);
  const auto dir = oracle::temp_dir("cli_usage");
  CHECK(run({"fit", (dir / "x").string(), "--out", (dir / "o").string(), "--ring", "septal"}) == cli::kExitUsage);
  CHECK(run({"mocor", (dir / "x").string(), "--out", (dir / "o").string(), "--iters", "abc"}) == cli::kExitUsage);
}

TEST_CASE("phantom is reproducible") {
  const auto dir = oracle::temp_dir("cli_phantom");
  const auto spec = write_spec(dir, 2.0, 10.0, 0);
  REQUIRE(run({"phantom", spec.string(), "--out", (dir / "a").string(), "--seed", "7"}) == 0);
  REQUIRE(run({"phantom", spec.string(), "--out", (dir / "b").string(), "--seed", "7"}) == 0);
  REQUIRE(run({"phantom", spec.string(), "--out", (dir / "c").string(), "--seed", "8"}) == 0);
  const auto a = tree(dir / "a");
  CHECK(a.count("manifest.json") == 1);
  CHECK(a.count("truth.json") == 1);
  CHECK(a == tree(dir / "b"));
  CHECK_FALSE(a == tree(dir / "c"));

  std::ofstream(dir / "bad.json") << R"({"radius": 3})";
  CHECK(run({"phantom", (dir / "bad.json").string(), "--out", (dir / "d").string()}) == cli::kExitUsage);
}

TEST_CASE("fit, eval and masks") {
  const auto dir = oracle::temp_dir("cli_fit");
  const auto spec = write_spec(dir, 0.0, 0.0, 1);
  REQUIRE(run({"phantom", spec.string(), "--out", (dir / "case").string()}) == 0);
  REQUIRE(run({"fit", (dir / "case").string(), "--out", (dir / "fit").string()}) == 0);
  for (const char *f : {"t1.f32", "r2.f32", "invalid.f32", "t1.ppm", "r2.ppm", "metrics.csv", "run.json"}) {
    CHECK(fs::exists(dir / "fit" / f));
  }
  const auto run_json = nlohmann::json::parse(slurp(dir / "fit" / "run.json"));
  CHECK(run_json.at("command") == "fit");
  CHECK(run_json.at("wall_time_s").is_null());
  const auto rows = read_metrics_csv(dir / "fit" / "metrics.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].method == "fit");

  SUBCASE("eval of the motion-free result") {
    REQUIRE(run({"eval", (dir / "case").string(), (dir / "fit").string(), "--out", (dir / "eval").string()}) == 0);
    const auto e = read_metrics_csv(dir / "eval" / "metrics.csv");
    REQUIRE(e.size() == 1);
    CHECK(e[0].dice == 1.0);
    CHECK(e[0].hd_mm == 0.0);
    CHECK(e[0].t1_seg[0].has_value());
    const auto summary = nlohmann::json::parse(slurp(dir / "eval" / "eval.json"));
    CHECK(summary.at("median_abs_t1_error_ms").get<double>() < 0.005 * 1100.0);
    CHECK(summary.at("invalid_myo_pixels") == 0);
  }
  SUBCASE("mask restricts the summary") {
    const auto noisy = write_spec(dir / "n", 0.0, 40.0, 2);
    REQUIRE(run({"phantom", noisy.string(), "--out", (dir / "noisy").string()}) == 0);
    const fs::path mask = dir / "noisy" / "truth_myo.f32";
    REQUIRE(run({"fit", (dir / "noisy").string(), "--out", (dir / "nfit").string(), "--mask", mask.string()}) ==
            0);
    REQUIRE(run({"fit", (dir / "noisy").string(), "--out", (dir / "nfit_all").string()}) == 0);
    const Raster r2 = load_map(dir / "nfit" / "r2.f32", 64, 64);
    const Mask invalid = load_mask(dir / "nfit" / "invalid.f32", 64, 64);
    const Mask myo = load_mask(mask, 64, 64);
    const auto masked = read_metrics_csv(dir / "nfit" / "metrics.csv");
    const auto all = read_metrics_csv(dir / "nfit_all" / "metrics.csv");
    REQUIRE(masked[0].r2_mean.has_value());
    CHECK(*masked[0].r2_mean == doctest::Approx(masked_mean(r2, myo, &invalid)).epsilon(1e-6));
    CHECK(*masked[0].r2_mean != *all[0].r2_mean);
    CHECK(masked[0].t1_seg[0].has_value());
  }
}

TEST_CASE("missing and bad inputs") {
  const auto dir = oracle::temp_dir("cli_missing");
  CHECK(run({"fit", (dir / "nowhere").string(), "--out", (dir / "o").string()}) == cli::kExitUsage);

  // constant frames cannot be normalized
  Manifest m;
  m.grid = {8, 8, 1.0, 1.0};
  m.slice_id = "flat";
  for (int i = 0; i < 5; ++i) {
    const std::string f = "f" + std::to_string(i) + ".f32";
    save_map(Raster(8, 8, 3.0), dir / f);
    m.frame_files.push_back(f);
    m.times_ms.push_back(100.0 * (i + 1));
  }
  write_manifest(m, dir / "manifest.json");
  CHECK(run({"fit", dir.string(), "--out", (dir / "o").string()}) == cli::kExitNumeric);

  const char *bin = std::getenv("T1MAP_BIN");
  if (bin) {
    const std::string cmd = std::string(bin) + " fit " + (dir / "nowhere").string() + " --out " +
                            (dir / "o2").string() + " 2> " + (dir / "err.txt").string();
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == cli::kExitUsage);
    CHECK(slurp(dir / "err.txt").find("manifest") != std::string::npos);
  }
}

TEST_CASE("icc on duplicated runs") {
  const auto dir = oracle::temp_dir("cli_icc");
  for (int k = 0; k < 4; ++k) {
    const std::string id = "case" + std::to_string(k);
    const auto spec = write_spec(dir / ("spec" + id), 0.0, 30.0, static_cast<std::uint64_t>(k));
    REQUIRE(run({"phantom", spec.string(), "--out", (dir / "cases" / id).string()}) == 0);
    REQUIRE(run({"fit", (dir / "cases" / id).string(), "--out", (dir / "runs" / id).string(), "--mask",
                 (dir / "cases" / id / "truth_myo.f32").string(), "--case", id}) == 0);
  }
  REQUIRE(run({"icc", (dir / "runs").string(), (dir / "runs").string(), "--out", (dir / "icc.csv").string()}) ==
          0);
  std::istringstream in(slurp(dir / "icc.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "segment,n,icc");
  int defined = 0;
  while (std::getline(in, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const std::string value = line.substr(c2 + 1);
    if (!value.empty()) {
      ++defined;
      CHECK(std::stod(value) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(defined == 7); // six basal segments and the pooled row

  CHECK(run({"icc", (dir / "runs").string(), (dir / "none").string(), "--out", (dir / "x.csv").string()}) ==
        cli::kExitUsage);
}

TEST_CASE("mocor outputs, overrides and LV independence") {
  const auto dir = oracle::temp_dir("cli_mocor");
  const auto spec = write_spec(dir, 2.0, 10.0, 3);
  REQUIRE(run({"phantom", spec.string(), "--out", (dir / "case").string()}) == 0);
  std::ofstream(dir / "cfg.json") << R"({"lambda3": 0.0, "iters": 5})";

  REQUIRE(run({"mocor", (dir / "case").string(), "--out", (dir / "m1").string(), "--config",
               (dir / "cfg.json").string(), "--iters", "4", "--case", "c"}) == 0);
  for (const char *f : {"t1.f32", "corrected_00.f32", "field_dx_00.f32", "field_dy_10.f32", "loss_trace.csv",
                        "diagnostics.json", "metrics.csv", "run.json"}) {
    CHECK(fs::exists(dir / "m1" / f));
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "m1" / "run.json"));
  CHECK(manifest.at("config").at("iters") == 4);
  CHECK(manifest.at("config").at("lambda3") == 0.0);
  std::istringstream trace(slurp(dir / "m1" / "loss_trace.csv"));
  int lines = 0;
  for (std::string l; std::getline(trace, l);) {
    ++lines;
  }
  CHECK(lines == 1 + 5);
  const auto rows = read_metrics_csv(dir / "m1" / "metrics.csv");
  CHECK(rows[0].method == "mocor");
  CHECK(rows[0].mean_detj.has_value());

  SUBCASE("same output path twice is bit-identical") {
    const auto first = tree(dir / "m1");
    REQUIRE(run({"mocor", (dir / "case").string(), "--out", (dir / "m1").string(), "--config",
                 (dir / "cfg.json").string(), "--iters", "4", "--case", "c"}) == 0);
    CHECK(first == tree(dir / "m1"));
  }
  SUBCASE("shuffled LV masks do not matter with lambda3 = 0") {
    fs::copy(dir / "case", dir / "shuffled", fs::copy_options::recursive);
    for (int i = 0; i < 11; ++i) {
      char a[32], b[32];
      std::snprintf(a, sizeof a, "lv_%02d.f32", i);
      std::snprintf(b, sizeof b, "lv_%02d.f32", (i + 4) % 11);
      fs::copy_file(dir / "case" / a, dir / "shuffled" / b, fs::copy_options::overwrite_existing);
    }
    REQUIRE(slurp(dir / "shuffled" / "lv_04.f32") != slurp(dir / "case" / "lv_04.f32"));
    REQUIRE(run({"mocor", (dir / "shuffled").string(), "--out", (dir / "m2").string(), "--config",
                 (dir / "cfg.json").string(), "--iters", "4", "--case", "c"}) == 0);
    auto a = tree(dir / "m1");
    auto b = tree(dir / "m2");
    a.erase("run.json");
    b.erase("run.json");
    CHECK(a == b);
  }
  SUBCASE("invalid overrides") {
    CHECK(run({"mocor", (dir / "case").string(), "--out", (dir / "m3").string(), "--lambda2", "-1"}) ==
          cli::kExitUsage);
    std::ofstream(dir / "bad.json") << R"({"learning_rate": 1})";
    CHECK(run({"mocor", (dir / "case").string(), "--out", (dir / "m3").string(), "--config",
               (dir / "bad.json").string()}) == cli::kExitUsage);
  }
}
