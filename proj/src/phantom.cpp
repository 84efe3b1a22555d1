#include "t1map/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

namespace t1map {

namespace fs = std::filesystem;
using nlohmann::json;

void PhantomSpec::validate() const {
  grid.validate();
  if (!(inner_radius > 0.0 && inner_radius < outer_radius)) {
    throw std::invalid_argument("phantom needs 0 < inner_radius < outer_radius");
  }
  if (outer_radius >= 0.5 * std::min(grid.height, grid.width)) {
    throw std::invalid_argument("phantom outer_radius must be below min(H, W) / 2");
  }
  if (!(lv_radius > 0.0 && lv_radius <= inner_radius)) {
    throw std::invalid_argument("phantom needs 0 < lv_radius <= inner_radius");
  }
  if (center_x - outer_radius < 0.0 || center_x + outer_radius > grid.width - 1 ||
      center_y - outer_radius < 0.0 || center_y + outer_radius > grid.height - 1) {
    throw std::invalid_argument("phantom annulus does not fit inside the grid");
  }
  for (double t1 : {t1_myo, t1_blood, t1_background}) {
    if (!(t1 > 0.0)) {
      throw std::invalid_argument("phantom T1 values must be positive");
    }
  }
  for (double m0 : {m0_myo, m0_blood, m0_background}) {
    if (!(m0 >= 0.0)) {
      throw std::invalid_argument("phantom M0 values must be >= 0");
    }
  }
  if (kind == SequenceKind::Molli && !(look_locker_ratio > 1.0)) {
    throw std::invalid_argument("phantom look_locker_ratio must exceed 1");
  }
  if (!(motion_amplitude >= 0.0) || !(noise_sigma >= 0.0)) {
    throw std::invalid_argument("phantom motion_amplitude and noise_sigma must be >= 0");
  }
  if (motion_amplitude > 0.0 && !(motion_smoothness > 0.0)) {
    throw std::invalid_argument("phantom motion_smoothness must be positive");
  }
  if (!(conf_level >= 0.0 && conf_level <= 1.0)) {
    throw std::invalid_argument("phantom conf_level must lie in [0, 1]");
  }
  const auto t = effective_times();
  if (t.size() < 4) {
    throw std::invalid_argument("phantom needs at least 4 time points");
  }
  for (double v : t) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("phantom times must be finite and >= 0");
    }
  }
  if (reference_frame < 0 || reference_frame >= static_cast<int>(t.size())) {
    throw std::invalid_argument("phantom reference_frame out of range");
  }
}

std::vector<double> PhantomSpec::effective_times() const {
  if (!times.empty()) {
    return times;
  }
  return kind == SequenceKind::Stone ? default_stone_times() : default_molli_times();
}

std::vector<double> default_stone_times() {
  std::vector<double> t(11);
  for (int i = 0; i < 11; ++i) {
    t[i] = 100.0 * std::pow(45.0, i / 10.0);
  }
  t.back() = 4500.0;
  return t;
}

std::vector<double> default_molli_times() { return {100.0, 180.0, 900.0, 980.0, 1700.0, 1780.0, 2500.0, 3300.0}; }

void to_json(json &j, const PhantomSpec &s) {
  j = json{{"height", s.grid.height},
           {"width", s.grid.width},
           {"spacing_mm", {s.grid.spacing_x, s.grid.spacing_y}},
           {"sequence", to_string(s.kind)},
           {"times", s.effective_times()},
           {"center", {s.center_x, s.center_y}},
           {"inner_radius", s.inner_radius},
           {"outer_radius", s.outer_radius},
           {"lv_radius", s.lv_radius},
           {"t1_myo", s.t1_myo},
           {"t1_blood", s.t1_blood},
           {"t1_background", s.t1_background},
           {"m0_myo", s.m0_myo},
           {"m0_blood", s.m0_blood},
           {"m0_background", s.m0_background},
           {"look_locker_ratio", s.look_locker_ratio},
           {"motion_amplitude", s.motion_amplitude},
           {"motion_smoothness", s.motion_smoothness},
           {"noise_sigma", s.noise_sigma},
           {"reference_frame", s.reference_frame},
           {"conf_level", s.conf_level},
           {"seed", s.seed},
           {"slice_id", s.slice_id}};
}

PhantomSpec phantom_spec_from_json(const json &j) {
  if (!j.is_object()) {
    throw std::invalid_argument("phantom spec must be a JSON object");
  }
  PhantomSpec s;
  try {
    for (const auto &[key, v] : j.items()) {
      if (key == "height") {
        s.grid.height = v.get<int>();
      } else if (key == "width") {
        s.grid.width = v.get<int>();
      } else if (key == "spacing_mm") {
        if (!v.is_array() || v.size() != 2) {
          throw std::invalid_argument("spacing_mm must be [sx, sy]");
        }
        s.grid.spacing_x = v[0].get<double>();
        s.grid.spacing_y = v[1].get<double>();
      } else if (key == "sequence") {
        s.kind = sequence_kind_from_string(v.get<std::string>());
      } else if (key == "times") {
        s.times = v.get<std::vector<double>>();
      } else if (key == "center") {
        if (!v.is_array() || v.size() != 2) {
          throw std::invalid_argument("center must be [x, y]");
        }
        s.center_x = v[0].get<double>();
        s.center_y = v[1].get<double>();
      } else if (key == "inner_radius") {
        s.inner_radius = v.get<double>();
      } else if (key == "outer_radius") {
        s.outer_radius = v.get<double>();
      } else if (key == "lv_radius") {
        s.lv_radius = v.get<double>();
      } else if (key == "t1_myo") {
        s.t1_myo = v.get<double>();
      } else if (key == "t1_blood") {
        s.t1_blood = v.get<double>();
      } else if (key == "t1_background") {
        s.t1_background = v.get<double>();
      } else if (key == "m0_myo") {
        s.m0_myo = v.get<double>();
      } else if (key == "m0_blood") {
        s.m0_blood = v.get<double>();
      } else if (key == "m0_background") {
        s.m0_background = v.get<double>();
      } else if (key == "look_locker_ratio") {
        s.look_locker_ratio = v.get<double>();
      } else if (key == "motion_amplitude") {
        s.motion_amplitude = v.get<double>();
      } else if (key == "motion_smoothness") {
        s.motion_smoothness = v.get<double>();
      } else if (key == "noise_sigma") {
        s.noise_sigma = v.get<double>();
      } else if (key == "reference_frame") {
        s.reference_frame = v.get<int>();
      } else if (key == "conf_level") {
        s.conf_level = v.get<double>();
      } else if (key == "seed") {
        s.seed = v.get<std::uint64_t>();
      } else if (key == "slice_id") {
        s.slice_id = v.get<std::string>();
      } else {
        throw std::invalid_argument("unknown phantom spec key '" + key + "'");
      }
    }
  } catch (const json::exception &e) {
    throw std::invalid_argument(std::string("phantom spec: ") + e.what());
  }
  return s;
}

namespace {

enum class Region { Background, Blood, Myo };

Region region_at(const PhantomSpec &s, int y, int x) {
  const double r = std::hypot(x - s.center_x, y - s.center_y);
  if (r >= s.inner_radius && r <= s.outer_radius) {
    return Region::Myo;
  }
  if (r < s.lv_radius) {
    return Region::Blood;
  }
  return Region::Background;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double &v : k) {
    v /= sum;
  }
  return k;
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    i = i < 0 ? -i - 1 : 2 * n - i - 1;
  }
  return i;
}

// Separable Gaussian filter, symmetric padding.
Raster gaussian_filter(const Raster &in, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int h = in.height();
  const int w = in.width();
  Raster tmp(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[i + radius] * in(y, reflect(x + i, w));
      }
      tmp(y, x) = acc;
    }
  }
  Raster out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[i + radius] * tmp(reflect(y + i, h), x);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

// Smooth random velocity whose peak magnitude over the heart disc
// (radius outer_radius about the center) equals motion_amplitude.
VelocityField random_velocity(const PhantomSpec &s, std::mt19937_64 &rng) {
  VelocityField v(s.grid.height, s.grid.width);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Raster *c : {&v.vx, &v.vy}) {
    for (double &x : c->values()) {
      x = normal(rng);
    }
    *c = gaussian_filter(*c, s.motion_smoothness / 2.0);
  }
  double peak = 0.0;
  for (int y = 0; y < v.height(); ++y) {
    for (int x = 0; x < v.width(); ++x) {
      if (std::hypot(2.0 * x - s.center_x, 2.0 * y - s.center_y) <= s.outer_radius) {
        peak = std::max(peak, std::hypot(v.vx(y, x), v.vy(y, x)));
      }
    }
  }
  if (peak > 0.0) {
    v *= s.motion_amplitude / peak;
  }
  return v;
}

std::string frame_name(const char *stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02zu.f32", stem, i);
  return buf;
}

} // namespace

Raster add_rician(const Raster &values, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) {
    throw std::invalid_argument("add_rician needs sigma >= 0");
  }
  Raster out(values.height(), values.width());
  if (sigma == 0.0) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      out[i] = std::abs(values[i]);
    }
    return out;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double n1 = normal(rng);
    const double n2 = normal(rng);
    out[i] = std::hypot(values[i] + n1, n2);
  }
  return out;
}

PhantomCase make_phantom(const PhantomSpec &spec) {
  spec.validate();
  const int h = spec.grid.height;
  const int w = spec.grid.width;
  const auto times = spec.effective_times();
  const std::size_t n = times.size();

  PhantomCase c;
  c.spec = spec;
  c.truth_params = ParamMap(spec.kind, h, w);
  c.truth_t1 = Raster(h, w);
  c.truth_myo = Mask(h, w);
  c.truth_lv = Mask(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = c.truth_t1.index(y, x);
      const Region reg = region_at(spec, y, x);
      double t1 = spec.t1_background;
      double m0 = spec.m0_background;
      if (reg == Region::Myo) {
        t1 = spec.t1_myo;
        m0 = spec.m0_myo;
        c.truth_myo.set(i, true);
      } else if (reg == Region::Blood) {
        t1 = spec.t1_blood;
        m0 = spec.m0_blood;
        c.truth_lv.set(i, true);
      }
      c.truth_t1[i] = t1;
      if (spec.kind == SequenceKind::Stone) {
        c.truth_params.set(i, StoneParams{m0, t1});
      } else {
        c.truth_params.set(i, MolliParams{m0, spec.look_locker_ratio * m0, t1 / (spec.look_locker_ratio - 1.0)});
      }
    }
  }

  std::mt19937_64 rng(spec.seed);
  c.truth_fields.resize(n, DisplacementField(h, w));
  for (std::size_t f = 0; f < n; ++f) {
    if (static_cast<int>(f) == spec.reference_frame || spec.motion_amplitude == 0.0) {
      continue;
    }
    c.truth_fields[f] = integrate_svf(random_velocity(spec, rng));
  }

  c.series.grid = spec.grid;
  c.series.kind = spec.kind;
  c.series.slice_id = spec.slice_id;
  c.series.frames.resize(n);
  c.segs.resize(n);
  const Raster myo = c.truth_myo.to_raster();
  const Raster lv = c.truth_lv.to_raster();
  for (std::size_t f = 0; f < n; ++f) {
    const Raster clean = warp_image(synth_frame(c.truth_params, times[f], true), c.truth_fields[f]);
    const std::uint64_t noise_seed = rng();
    c.series.frames[f].values = add_rician(clean, spec.noise_sigma, noise_seed);
    c.series.frames[f].t_ms = times[f];

    SegFrame &s = c.segs[f];
    s.myo = Mask::threshold(warp_image(myo, c.truth_fields[f]));
    s.lv = Mask::threshold(warp_image(lv, c.truth_fields[f]));
    const double level = static_cast<int>(f) == spec.reference_frame ? 1.0 : spec.conf_level;
    s.conf = Raster(h, w);
    for (std::size_t i = 0; i < s.conf.size(); ++i) {
      s.conf[i] = (s.myo[i] || s.lv[i]) ? level : 0.0;
    }
  }
  return c;
}

void write_phantom(const PhantomCase &c, const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }
  Manifest m;
  m.kind = c.series.kind;
  m.grid = c.series.grid;
  m.slice_id = c.series.slice_id;
  for (std::size_t f = 0; f < c.series.size(); ++f) {
    const std::string name = frame_name("frame", f);
    save_map(c.series.frames[f].values, dir / name);
    m.frame_files.push_back(name);
    m.times_ms.push_back(c.series.frames[f].t_ms);

    SegmentationFiles s{frame_name("myo", f), frame_name("lv", f), frame_name("conf", f)};
    save_mask(c.segs[f].myo, dir / s.myo);
    save_mask(c.segs[f].lv, dir / s.lv);
    save_map(c.segs[f].conf, dir / s.conf);
    m.segmentations.push_back(s);

    save_map(c.truth_fields[f].dx, dir / frame_name("truth_dx", f));
    save_map(c.truth_fields[f].dy, dir / frame_name("truth_dy", f));
  }
  save_map(c.truth_t1, dir / "truth_t1.f32");
  save_mask(c.truth_myo, dir / "truth_myo.f32");
  save_mask(c.truth_lv, dir / "truth_lv.f32");

  json spec;
  to_json(spec, c.spec);
  json truth{{"spec", spec}, {"reference_frame", c.spec.reference_frame}};
  write_file_atomic(dir / "truth.json", truth.dump(2) + "\n");
  write_manifest(m, dir / "manifest.json");
}

PhantomTruth load_phantom_truth(const fs::path &dir) {
  std::ifstream in(dir / "truth.json");
  if (!in) {
    throw IoError("cannot open " + (dir / "truth.json").string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw IoError("truth.json: " + std::string(e.what()));
  }
  PhantomSpec spec;
  try {
    spec = phantom_spec_from_json(j.at("spec"));
  } catch (const std::exception &e) {
    throw IoError("truth.json: " + std::string(e.what()));
  }
  PhantomTruth t;
  const int h = spec.grid.height;
  const int w = spec.grid.width;
  t.t1 = load_map(dir / "truth_t1.f32", h, w);
  t.myo = load_mask(dir / "truth_myo.f32", h, w);
  t.lv = load_mask(dir / "truth_lv.f32", h, w);
  t.reference_frame = spec.reference_frame;
  t.center_x = spec.center_x;
  t.center_y = spec.center_y;
  return t;
}

} // namespace t1map
