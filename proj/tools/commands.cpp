#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "t1map/confidence.hpp"
#include "t1map/curvefit.hpp"
#include "t1map/log.hpp"
#include "t1map/phantom.hpp"

#ifndef T1MAP_VERSION
#define T1MAP_VERSION "unknown"
#endif

namespace t1map::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr DisplayRange kT1Display{0.0, 2000.0};
constexpr DisplayRange kR2Display{0.0, 1.0};

using Clock = std::chrono::steady_clock;

void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }
}

std::string indexed(const char *stem, std::size_t i, const char *ext = ".f32") {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02zu%s", stem, i, ext);
  return buf;
}

std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path &path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception &e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string case_name(const fs::path &series) {
  const fs::path dir = fs::is_directory(series) ? series : series.parent_path();
  std::string name = fs::absolute(dir).lexically_normal().filename().string();
  if (name.empty()) {
    name = fs::absolute(dir).lexically_normal().parent_path().filename().string();
  }
  return name;
}

std::vector<std::string> channel_names(SequenceKind kind) {
  if (kind == SequenceKind::Stone) {
    return {"m0", "t1"};
  }
  return {"a", "b", "t1star"};
}

void write_maps(const FitMaps &maps, const fs::path &out) {
  save_map(maps.t1, out / "t1.f32");
  save_map(maps.r2, out / "r2.f32");
  save_mask(maps.invalid, out / "invalid.f32");
  const auto names = channel_names(maps.params.kind);
  for (std::size_t k = 0; k < names.size(); ++k) {
    save_map(maps.params.channels[k], out / ("param_" + names[k] + ".f32"));
  }
  const Mask valid = [&] {
    Mask m(maps.invalid.height(), maps.invalid.width());
    for (std::size_t i = 0; i < m.size(); ++i) {
      m.set(i, !maps.invalid[i]);
    }
    return m;
  }();
  render_ppm(maps.t1, kT1Display, out / "t1.ppm", &valid);
  render_ppm(maps.r2, kR2Display, out / "r2.ppm", &valid);
}

SegmentalReport summarize_segments(const Raster &t1, const Mask &invalid, const Mask &myo,
                                   const SummaryOptions &s, std::optional<std::pair<double, double>> center = {}) {
  if (!center) {
    double cx = 0.0;
    double cy = 0.0;
    for (int y = 0; y < myo.height(); ++y) {
      for (int x = 0; x < myo.width(); ++x) {
        if (myo(y, x)) {
          cx += x;
          cy += y;
        }
      }
    }
    const double n = static_cast<double>(myo.count());
    center = {cx / n, cy / n};
  }
  const LabelMap labels = aha16_labels(myo, center->first, center->second, s.ref_angle, s.ring);
  return segmental_means(t1, labels, &invalid);
}

struct FieldSummary {
  double mean_det = 1.0;
  double fold_percent = 0.0;
};

FieldSummary summarize_fields(std::span<const DisplacementField> fields, int reference) {
  double det = 0.0;
  std::size_t folds = 0;
  std::size_t interior = 0;
  int n = 0;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (static_cast<int>(i) == reference) {
      continue;
    }
    const auto js = jacobian_stats(fields[i]);
    det += js.mean_det;
    folds += js.nonpositive;
    interior += js.interior;
    ++n;
  }
  FieldSummary s;
  if (n > 0) {
    s.mean_det = det / n;
    s.fold_percent = interior == 0 ? 0.0 : 100.0 * static_cast<double>(folds) / static_cast<double>(interior);
  }
  return s;
}

// Written last; lists every other file in the output directory.
void write_run_manifest(const fs::path &out, const std::string &command, const json &config, const json &inputs,
                        std::uint64_t seed, std::optional<double> wall_time) {
  std::vector<std::string> files;
  for (const auto &e : fs::directory_iterator(out)) {
    if (e.is_regular_file() && e.path().filename() != "run.json") {
      files.push_back(e.path().filename().string());
    }
  }
  std::sort(files.begin(), files.end());
  json j{{"command", command},
         {"version", T1MAP_VERSION},
         {"config", config},
         {"inputs", inputs},
         {"output", out.string()},
         {"files", files},
         {"seed", seed},
         {"wall_time_s", wall_time ? json(*wall_time) : json(nullptr)}};
  write_file_atomic(out / "run.json", j.dump(2) + "\n");
}

std::optional<double> elapsed(Clock::time_point start, bool record) {
  if (!record) {
    return std::nullopt;
  }
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void write_loss_trace(std::span<const LossTerms> trace, const fs::path &path) {
  std::string out = "iteration,fit,smooth,seg,total\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto &t = trace[i];
    out += std::to_string(i) + "," + number(t.fit) + "," + number(t.smooth) + "," + number(t.seg) + "," +
           number(t.total) + "\n";
  }
  write_file_atomic(path, out);
}

std::vector<MetricsRow> collect_rows(const fs::path &p) {
  if (!fs::is_directory(p)) {
    return read_metrics_csv(p);
  }
  std::vector<fs::path> files;
  for (const auto &e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file() && e.path().filename() == "metrics.csv") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw IoError("no metrics.csv under " + p.string());
  }
  std::vector<MetricsRow> rows;
  for (const auto &f : files) {
    auto r = read_metrics_csv(f);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

} // namespace

int cmd_fit(const FitCommand &c) {
  const auto start = Clock::now();
  const Series series = normalize_minmax(load_series(c.series));
  std::optional<Mask> mask;
  if (c.mask) {
    mask = load_mask(*c.mask, series.grid.height, series.grid.width);
  }
  const FitMaps maps = fit_map(series, nullptr, FitOptions{}, c.jobs);

  ensure_dir(c.out);
  write_maps(maps, c.out);

  MetricsRow row;
  row.case_id = c.summary.case_id.empty() ? case_name(c.series) : c.summary.case_id;
  row.slice = series.slice_id;
  row.method = "fit";
  const Mask region = mask ? *mask : Mask(series.grid.height, series.grid.width, true);
  row.r2_mean = masked_mean(maps.r2, region, &maps.invalid);
  if (mask) {
    set_segments(row, summarize_segments(maps.t1, maps.invalid, *mask, c.summary));
  }
  write_metrics_csv(std::span(&row, 1), c.out / "metrics.csv");

  json inputs{{"series", c.series.string()}};
  if (c.mask) {
    inputs["mask"] = c.mask->string();
  }
  write_run_manifest(c.out, "fit", json{{"jobs", c.jobs}}, inputs, 0, elapsed(start, c.record_timing));
  return kExitOk;
}

int cmd_mocor(const MocorCommand &c) {
  const auto start = Clock::now();
  c.config.validate();
  const fs::path manifest = resolve_manifest(c.series);
  const Series series = normalize_minmax(load_series(manifest));
  const std::vector<SegFrame> segs = load_segmentations(manifest);
  const CaseResult r = run_mbss_t1(series, segs, c.config, c.jobs);

  ensure_dir(c.out);
  write_maps(r.maps, c.out);
  for (std::size_t i = 0; i < series.size(); ++i) {
    save_map(r.corrected_frames[i], c.out / indexed("corrected", i));
    save_map(r.fields[i].dx, c.out / indexed("field_dx", i));
    save_map(r.fields[i].dy, c.out / indexed("field_dy", i));
  }
  write_loss_trace(r.loss_trace, c.out / "loss_trace.csv");

  json frames = json::array();
  for (std::size_t i = 0; i < r.diagnostics.size(); ++i) {
    const auto &d = r.diagnostics[i];
    frames.push_back({{"frame", i}, {"mean_det", d.mean_det}, {"nonpositive", d.nonpositive}, {"interior", d.interior}});
  }
  json diag{{"reference", r.reference},
            {"members", r.selection.members},
            {"fallback", r.selection.fallback},
            {"initial_loss", r.loss_trace.front().total},
            {"final_loss", r.loss_trace.back().total},
            {"frames", frames}};
  write_file_atomic(c.out / "diagnostics.json", diag.dump(2) + "\n");

  MetricsRow row;
  row.case_id = c.summary.case_id.empty() ? case_name(c.series) : c.summary.case_id;
  row.slice = series.slice_id;
  row.method = "mocor";
  const FieldSummary field_summary = summarize_fields(r.fields, r.reference);
  row.mean_detj = field_summary.mean_det;
  row.folds = field_summary.fold_percent;
  if (!segs.empty()) {
    const Mask &myo = segs[r.reference].myo;
    row.r2_mean = masked_mean(r.maps.r2, myo, &r.maps.invalid);
    const Overlap o = registration_overlap(segs, r.fields, r.reference, series.grid);
    row.dice = o.dice;
    row.hd_mm = o.hd_mm;
    set_segments(row, summarize_segments(r.maps.t1, r.maps.invalid, myo, c.summary));
  } else {
    row.r2_mean = masked_mean(r.maps.r2, Mask(series.grid.height, series.grid.width, true), &r.maps.invalid);
  }
  write_metrics_csv(std::span(&row, 1), c.out / "metrics.csv");

  json config;
  to_json(config, c.config);
  json inputs{{"series", c.series.string()}};
  if (c.config_file) {
    inputs["config"] = c.config_file->string();
  }
  write_run_manifest(c.out, "mocor", config, inputs, c.config.seed, elapsed(start, c.record_timing));
  log::info("mocor: loss " + number(r.loss_trace.front().total) + " -> " + number(r.loss_trace.back().total));
  return kExitOk;
}

int cmd_phantom(const PhantomCommand &c) {
  PhantomSpec spec;
  if (c.spec) {
    spec = phantom_spec_from_json(read_json(*c.spec));
  }
  if (c.seed) {
    spec.seed = *c.seed;
  }
  const PhantomCase pc = make_phantom(spec);
  write_phantom(pc, c.out);
  return kExitOk;
}

int cmd_eval(const EvalCommand &c) {
  const fs::path manifest = resolve_manifest(c.truth);
  const Manifest m = read_manifest(manifest);
  const int h = m.grid.height;
  const int w = m.grid.width;
  const PhantomTruth truth = load_phantom_truth(manifest.parent_path());
  const std::vector<SegFrame> segs = load_segmentations(manifest);

  const Raster t1 = load_map(c.result / "t1.f32", h, w);
  const Raster r2 = load_map(c.result / "r2.f32", h, w);
  const Mask invalid = load_mask(c.result / "invalid.f32", h, w);

  const std::size_t n = m.frame_files.size();
  std::vector<DisplacementField> fields(n, DisplacementField(h, w));
  const bool registered = fs::exists(c.result / indexed("field_dx", 0));
  if (registered) {
    for (std::size_t i = 0; i < n; ++i) {
      fields[i].dx = load_map(c.result / indexed("field_dx", i), h, w);
      fields[i].dy = load_map(c.result / indexed("field_dy", i), h, w);
    }
  }
  int reference = truth.reference_frame;
  if (fs::exists(c.result / "diagnostics.json")) {
    reference = read_json(c.result / "diagnostics.json").at("reference").get<int>();
  }
  std::string method = "result";
  if (fs::exists(c.result / "run.json")) {
    method = read_json(c.result / "run.json").value("command", method);
  }

  MetricsRow row;
  row.case_id = c.summary.case_id.empty() ? case_name(c.truth) : c.summary.case_id;
  row.slice = m.slice_id;
  row.method = method;
  row.r2_mean = masked_mean(r2, truth.myo, &invalid);
  if (segs.size() >= 2) {
    const Overlap o = registration_overlap(segs, fields, reference, m.grid);
    row.dice = o.dice;
    row.hd_mm = o.hd_mm;
  }
  if (registered) {
    const FieldSummary s = summarize_fields(fields, reference);
    row.mean_detj = s.mean_det;
    row.folds = s.fold_percent;
  }
  set_segments(row, summarize_segments(t1, invalid, truth.myo, c.summary,
                                       std::pair{truth.center_x, truth.center_y}));

  std::vector<double> errors;
  std::size_t invalid_myo = 0;
  for (std::size_t i = 0; i < t1.size(); ++i) {
    if (!truth.myo[i]) {
      continue;
    }
    if (invalid[i]) {
      ++invalid_myo;
      continue;
    }
    errors.push_back(std::abs(t1[i] - truth.t1[i]));
  }
  json summary{{"myo_pixels", truth.myo.count()}, {"invalid_myo_pixels", invalid_myo}};
  if (!errors.empty()) {
    std::sort(errors.begin(), errors.end());
    const std::size_t k = errors.size();
    const double median = k % 2 ? errors[k / 2] : 0.5 * (errors[k / 2 - 1] + errors[k / 2]);
    double mean = 0.0;
    for (double e : errors) {
      mean += e;
    }
    summary["median_abs_t1_error_ms"] = median;
    summary["mean_abs_t1_error_ms"] = mean / static_cast<double>(k);
  }

  ensure_dir(c.out);
  write_metrics_csv(std::span(&row, 1), c.out / "metrics.csv");
  write_file_atomic(c.out / "eval.json", summary.dump(2) + "\n");
  return kExitOk;
}

int cmd_icc(const IccCommand &c) {
  const auto a = collect_rows(c.test);
  const auto b = collect_rows(c.retest);
  using Key = std::pair<std::string, std::string>;
  std::map<Key, const MetricsRow *> retest;
  for (const auto &r : b) {
    if (!retest.emplace(Key{r.case_id, r.slice}, &r).second) {
      throw IoError("duplicate row for case " + r.case_id + " slice " + r.slice + " in " + c.retest.string());
    }
  }
  std::vector<std::pair<const MetricsRow *, const MetricsRow *>> pairs;
  std::map<Key, int> seen;
  for (const auto &r : a) {
    if (seen[Key{r.case_id, r.slice}]++ > 0) {
      throw IoError("duplicate row for case " + r.case_id + " slice " + r.slice + " in " + c.test.string());
    }
    const auto it = retest.find(Key{r.case_id, r.slice});
    if (it != retest.end()) {
      pairs.emplace_back(&r, it->second);
    }
  }
  if (pairs.empty()) {
    throw IoError("no (case, slice) rows in common");
  }

  auto icc_cell = [](const std::vector<double> &x, const std::vector<double> &y) -> std::string {
    try {
      return number(icc3(x, y));
    } catch (const std::exception &e) {
      log::warn(std::string("icc: ") + e.what());
      return "";
    }
  };

  std::string out = "segment,n,icc\n";
  std::vector<double> all_x;
  std::vector<double> all_y;
  for (int s = 0; s < kAhaSegments; ++s) {
    std::vector<double> x;
    std::vector<double> y;
    for (const auto &[p, q] : pairs) {
      if (p->t1_seg[s] && q->t1_seg[s]) {
        x.push_back(*p->t1_seg[s]);
        y.push_back(*q->t1_seg[s]);
      }
    }
    all_x.insert(all_x.end(), x.begin(), x.end());
    all_y.insert(all_y.end(), y.begin(), y.end());
    char label[8];
    std::snprintf(label, sizeof label, "%02d", s + 1);
    out += std::string(label) + "," + std::to_string(x.size()) + "," + (x.empty() ? "" : icc_cell(x, y)) + "\n";
  }
  out += "all," + std::to_string(all_x.size()) + "," + (all_x.empty() ? "" : icc_cell(all_x, all_y)) + "\n";

  const fs::path target = c.out.extension() == ".csv" ? c.out : c.out / "icc.csv";
  if (target.has_parent_path()) {
    ensure_dir(target.parent_path());
  }
  write_file_atomic(target, out);
  return kExitOk;
}

namespace {

AhaRing parse_ring(const std::string &s) {
  if (s == "basal") {
    return AhaRing::Basal;
  }
  if (s == "mid") {
    return AhaRing::Mid;
  }
  if (s == "apical") {
    return AhaRing::Apical;
  }
  throw CLI::ValidationError("--ring", "expected basal, mid or apical");
}

void add_summary_flags(CLI::App *app, SummaryOptions &s, std::string &ring) {
  app->add_option("--case", s.case_id, "Case identifier in the metrics CSV");
  app->add_option("--ref-angle", s.ref_angle, "AHA sector origin, degrees counterclockwise");
  app->add_option("--ring", ring, "AHA ring of the slice: basal, mid or apical");
}

} // namespace

int run_cli(int argc, char **argv) {
  CLI::App app{"Joint motion correction and T1 mapping"};
  app.set_version_flag("--version", T1MAP_VERSION);
  app.require_subcommand(1);

  FitCommand fit;
  std::string fit_ring = "basal";
  std::string fit_mask;
  auto *fit_cmd = app.add_subcommand("fit", "Per-pixel fit without motion correction");
  fit_cmd->add_option("series", fit.series, "Series directory or manifest")->required();
  fit_cmd->add_option("--out", fit.out, "Output directory")->required();
  fit_cmd->add_option("--mask", fit_mask, "Mask (float32 raster) for summaries");
  fit_cmd->add_option("--jobs", fit.jobs, "Worker threads")->check(CLI::PositiveNumber);
  fit_cmd->add_flag("--record-timing", fit.record_timing, "Store wall time in run.json");
  add_summary_flags(fit_cmd, fit.summary, fit_ring);

  MocorCommand mocor;
  std::string mocor_ring = "basal";
  std::string config_file;
  std::map<std::string, double> real_flags;
  std::map<std::string, long long> int_flags;
  auto *mocor_cmd = app.add_subcommand("mocor", "Joint motion correction and mapping");
  mocor_cmd->add_option("series", mocor.series, "Series directory or manifest")->required();
  mocor_cmd->add_option("--out", mocor.out, "Output directory")->required();
  mocor_cmd->add_option("--config", config_file, "JSON config; flags take precedence");
  mocor_cmd->add_option("--jobs", mocor.jobs, "Worker threads")->check(CLI::PositiveNumber);
  mocor_cmd->add_flag("--record-timing", mocor.record_timing, "Store wall time in run.json");
  add_summary_flags(mocor_cmd, mocor.summary, mocor_ring);
  std::map<std::string, CLI::Option *> real_opts;
  std::map<std::string, CLI::Option *> int_opts;
  for (const char *key : {"lambda1", "lambda2", "lambda3", "alpha", "gamma", "lr", "lr_final"}) {
    real_opts[key] = mocor_cmd->add_option(std::string("--") + key, real_flags[key]);
  }
  for (const char *key : {"iters", "steps", "refit_every", "seed"}) {
    int_opts[key] = mocor_cmd->add_option(std::string("--") + key, int_flags[key]);
  }

  PhantomCommand phantom;
  std::string spec_file;
  std::uint64_t phantom_seed = 0;
  auto *phantom_cmd = app.add_subcommand("phantom", "Write a synthetic case");
  phantom_cmd->add_option("spec", spec_file, "Phantom spec JSON (defaults when omitted)");
  phantom_cmd->add_option("--out", phantom.out, "Output directory")->required();
  auto *seed_opt = phantom_cmd->add_option("--seed", phantom_seed, "Overrides the spec seed");

  EvalCommand eval;
  std::string eval_ring = "basal";
  auto *eval_cmd = app.add_subcommand("eval", "Metrics of a result against phantom truth");
  eval_cmd->add_option("truth", eval.truth, "Phantom directory")->required();
  eval_cmd->add_option("result", eval.result, "Output directory of fit or mocor")->required();
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();
  add_summary_flags(eval_cmd, eval.summary, eval_ring);

  IccCommand icc;
  auto *icc_cmd = app.add_subcommand("icc", "Segmental ICC(3,1) between two runs");
  icc_cmd->add_option("test", icc.test, "metrics.csv or a directory searched for them")->required();
  icc_cmd->add_option("retest", icc.retest, "metrics.csv or a directory searched for them")->required();
  icc_cmd->add_option("--out", icc.out, "Output directory or .csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fit_cmd) {
      fit.summary.ring = parse_ring(fit_ring);
      if (!fit_mask.empty()) {
        fit.mask = fit_mask;
      }
      return cmd_fit(fit);
    }
    if (*mocor_cmd) {
      mocor.summary.ring = parse_ring(mocor_ring);
      if (!config_file.empty()) {
        mocor.config_file = config_file;
        try {
          update_from_json(mocor.config, read_json(config_file));
        } catch (const nlohmann::json::exception &e) {
          throw std::invalid_argument(config_file + ": " + e.what());
        }
      }
      json overrides = json::object();
      for (const auto &[key, opt] : real_opts) {
        if (opt->count() > 0) {
          overrides[key] = real_flags[key];
        }
      }
      for (const auto &[key, opt] : int_opts) {
        if (opt->count() > 0) {
          if (key == "seed") {
            if (int_flags[key] < 0) {
              throw std::invalid_argument("--seed must be >= 0");
            }
            overrides[key] = static_cast<std::uint64_t>(int_flags[key]);
          } else {
            overrides[key] = int_flags[key];
          }
        }
      }
      update_from_json(mocor.config, overrides);
      return cmd_mocor(mocor);
    }
    if (*phantom_cmd) {
      if (!spec_file.empty()) {
        phantom.spec = spec_file;
      }
      if (seed_opt->count() > 0) {
        phantom.seed = phantom_seed;
      }
      return cmd_phantom(phantom);
    }
    if (*eval_cmd) {
      eval.summary.ring = parse_ring(eval_ring);
      return cmd_eval(eval);
    }
    if (*icc_cmd) {
      return cmd_icc(icc);
    }
  } catch (const NumericError &e) {
    log::error(e.what());
    return kExitNumeric;
  } catch (const CLI::Error &e) {
    log::error(e.what());
    return kExitUsage;
  } catch (const std::exception &e) {
    log::error(e.what());
    return kExitUsage;
  }
  return kExitUsage;
}

} // namespace t1map::cli
