#include "t1map/imaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace t1map {

namespace fs = std::filesystem;
using nlohmann::json;

void Grid2D::validate() const {
  if (height < 8 || width < 8) {
    throw std::invalid_argument("grid must be at least 8x8, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (!(spacing_x > 0.0) || !(spacing_y > 0.0)) {
    throw std::invalid_argument("pixel spacing must be positive");
  }
}

Raster::Raster(int height, int width, double fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) {
    throw std::invalid_argument("raster dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

void Raster::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Raster::min() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }

double Raster::max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

bool Raster::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mask::Mask(int height, int width, bool fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) {
    throw std::invalid_argument("mask dimensions must be non-negative");
  }
  bits_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill ? 1 : 0);
}

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }

Raster Mask::to_raster() const {
  Raster r(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    r[i] = bits_[i] ? 1.0 : 0.0;
  }
  return r;
}

Mask Mask::threshold(const Raster &r, double threshold) {
  Mask m(r.height(), r.width());
  for (std::size_t i = 0; i < r.size(); ++i) {
    m.bits_[i] = r[i] >= threshold ? 1 : 0;
  }
  return m;
}

Mask Mask::from_binary_raster(const Raster &r) {
  Mask m(r.height(), r.width());
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] == 1.0) {
      m.bits_[i] = 1;
    } else if (r[i] != 0.0) {
      throw IoError("mask raster contains a value other than 0 or 1");
    }
  }
  return m;
}

Mask operator|(const Mask &a, const Mask &b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("mask shapes differ");
  }
  Mask out = a;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i]) {
      out.set(i, true);
    }
  }
  return out;
}

Mask operator&(const Mask &a, const Mask &b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("mask shapes differ");
  }
  Mask out(a.height(), a.width());
  for (std::size_t i = 0; i < b.size(); ++i) {
    out.set(i, a[i] && b[i]);
  }
  return out;
}

std::string to_string(SequenceKind kind) { return kind == SequenceKind::Stone ? "STONE" : "MOLLI"; }

SequenceKind sequence_kind_from_string(const std::string &s) {
  if (s == "STONE") {
    return SequenceKind::Stone;
  }
  if (s == "MOLLI") {
    return SequenceKind::Molli;
  }
  throw IoError("unknown sequence kind '" + s + "'");
}

std::vector<double> Series::times() const {
  std::vector<double> t;
  t.reserve(frames.size());
  for (const auto &f : frames) {
    t.push_back(f.t_ms);
  }
  return t;
}

std::vector<double> Series::samples(std::size_t pixel) const {
  std::vector<double> s;
  s.reserve(frames.size());
  for (const auto &f : frames) {
    s.push_back(f.values[pixel]);
  }
  return s;
}

void Series::validate() const {
  grid.validate();
  if (frames.size() < 4) {
    throw std::invalid_argument("series needs at least 4 frames, got " + std::to_string(frames.size()));
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto &f = frames[i];
    if (f.values.height() != grid.height || f.values.width() != grid.width) {
      throw std::invalid_argument("frame " + std::to_string(i) + " does not match the series grid");
    }
    if (!std::isfinite(f.t_ms) || f.t_ms < 0.0) {
      throw std::invalid_argument("frame " + std::to_string(i) + " has an invalid time");
    }
    if (!f.values.all_finite()) {
      throw NumericError("frame " + std::to_string(i) + " contains non-finite values");
    }
  }
}

namespace {

std::string read_bytes(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

float load_le_float(const char *p) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) {
    bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
  }
  return std::bit_cast<float>(bits);
}

void store_le_float(float v, char *p) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big) {
    bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
  }
  std::memcpy(p, &bits, 4);
}

} // namespace

void write_file_atomic(const fs::path &path, const std::string &bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw IoError("short write to " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

void save_map(const Raster &raster, const fs::path &path) {
  std::string bytes(raster.size() * 4, '\0');
  for (std::size_t i = 0; i < raster.size(); ++i) {
    store_le_float(static_cast<float>(raster[i]), bytes.data() + 4 * i);
  }
  write_file_atomic(path, bytes);
}

Raster load_map(const fs::path &path, int height, int width) {
  const std::string bytes = read_bytes(path);
  const std::size_t expected = static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 4;
  if (bytes.size() != expected) {
    throw IoError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                  std::to_string(bytes.size()));
  }
  Raster r(height, width);
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = static_cast<double>(load_le_float(bytes.data() + 4 * i));
  }
  return r;
}

void save_mask(const Mask &mask, const fs::path &path) { save_map(mask.to_raster(), path); }

Mask load_mask(const fs::path &path, int height, int width) {
  return Mask::from_binary_raster(load_map(path, height, width));
}

fs::path resolve_manifest(const fs::path &path) {
  if (fs::is_directory(path)) {
    return path / "manifest.json";
  }
  return path;
}

Manifest read_manifest(const fs::path &manifest_path) {
  const fs::path path = resolve_manifest(manifest_path);
  if (!fs::exists(path)) {
    throw IoError("manifest not found: " + path.string());
  }
  json j;
  try {
    j = json::parse(read_bytes(path));
  } catch (const json::exception &e) {
    throw IoError(path.string() + ": " + e.what());
  }

  Manifest m;
  try {
    m.kind = sequence_kind_from_string(j.at("sequence").get<std::string>());
    m.grid.height = j.at("height").get<int>();
    m.grid.width = j.at("width").get<int>();
    const auto &sp = j.at("spacing_mm");
    if (!sp.is_array() || sp.size() != 2) {
      throw IoError("spacing_mm must be a two-element array");
    }
    m.grid.spacing_x = sp[0].get<double>();
    m.grid.spacing_y = sp[1].get<double>();
    m.slice_id = j.value("slice_id", std::string{});
    for (const auto &f : j.at("frames")) {
      m.frame_files.push_back(f.at("file").get<std::string>());
      m.times_ms.push_back(f.at("t_ms").get<double>());
    }
    if (j.contains("segmentations") && !j.at("segmentations").is_null()) {
      for (const auto &s : j.at("segmentations")) {
        m.segmentations.push_back(
            {s.at("myo").get<std::string>(), s.at("lv").get<std::string>(), s.at("conf").get<std::string>()});
      }
    }
  } catch (const json::exception &e) {
    throw IoError(path.string() + ": malformed manifest: " + e.what());
  }
  try {
    m.grid.validate();
  } catch (const std::invalid_argument &e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (!m.segmentations.empty() && m.segmentations.size() != m.frame_files.size()) {
    throw IoError(path.string() + ": segmentation count does not match frame count");
  }
  return m;
}

void write_manifest(const Manifest &m, const fs::path &manifest_path) {
  json j;
  j["sequence"] = to_string(m.kind);
  j["height"] = m.grid.height;
  j["width"] = m.grid.width;
  j["spacing_mm"] = {m.grid.spacing_x, m.grid.spacing_y};
  j["slice_id"] = m.slice_id;
  j["frames"] = json::array();
  for (std::size_t i = 0; i < m.frame_files.size(); ++i) {
    j["frames"].push_back({{"file", m.frame_files[i]}, {"t_ms", m.times_ms[i]}});
  }
  if (!m.segmentations.empty()) {
    j["segmentations"] = json::array();
    for (const auto &s : m.segmentations) {
      j["segmentations"].push_back({{"myo", s.myo}, {"lv", s.lv}, {"conf", s.conf}});
    }
  }
  write_file_atomic(manifest_path, j.dump(2) + "\n");
}

Series load_series(const fs::path &manifest_path) {
  const fs::path path = resolve_manifest(manifest_path);
  const Manifest m = read_manifest(path);
  if (m.frame_files.size() < 4) {
    throw IoError("series needs at least 4 frames, manifest lists " + std::to_string(m.frame_files.size()));
  }
  const fs::path base = path.parent_path();

  Series s;
  s.grid = m.grid;
  s.kind = m.kind;
  s.slice_id = m.slice_id;
  for (std::size_t i = 0; i < m.frame_files.size(); ++i) {
    Frame f;
    f.values = load_map(base / m.frame_files[i], m.grid.height, m.grid.width);
    f.t_ms = m.times_ms[i];
    if (!f.values.all_finite()) {
      throw IoError(m.frame_files[i] + ": non-finite value");
    }
    if (f.values.min() < 0.0) {
      throw IoError(m.frame_files[i] + ": negative value in magnitude data");
    }
    if (!std::isfinite(f.t_ms) || f.t_ms < 0.0) {
      throw IoError(m.frame_files[i] + ": invalid t_ms");
    }
    s.frames.push_back(std::move(f));
  }
  return s;
}

Series normalize_minmax(const Series &series) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto &f : series.frames) {
    lo = std::min(lo, f.values.min());
    hi = std::max(hi, f.values.max());
  }
  if (!(hi > lo)) {
    throw NumericError("cannot normalize a constant series");
  }
  const double span = hi - lo;
  Series out = series;
  for (auto &f : out.frames) {
    for (double &v : f.values.values()) {
      v = (v - lo) / span;
    }
  }
  return out;
}

Rgb colormap(double u) {
  u = std::clamp(u, 0.0, 1.0);
  // Piecewise-linear ramp through fixed anchors.
  static constexpr double anchors[][3] = {
      {0, 0, 0}, {85, 10, 130}, {205, 40, 60}, {250, 170, 20}, {255, 255, 255}};
  constexpr int segments = 4;
  const double s = u * segments;
  const int k = std::min(static_cast<int>(s), segments - 1);
  const double f = s - k;
  auto lerp = [&](int c) {
    return static_cast<std::uint8_t>(std::lround(anchors[k][c] + f * (anchors[k + 1][c] - anchors[k][c])));
  };
  return {lerp(0), lerp(1), lerp(2)};
}

void render_ppm(const Raster &raster, DisplayRange range, const fs::path &path, const Mask *mask) {
  if (!(range.low < range.high)) {
    throw std::invalid_argument("display range must satisfy low < high");
  }
  if (mask && !mask->same_shape_as(raster)) {
    throw std::invalid_argument("mask shape does not match raster");
  }
  std::string bytes = "P6\n" + std::to_string(raster.width()) + " " + std::to_string(raster.height()) + "\n255\n";
  const std::size_t header = bytes.size();
  bytes.resize(header + raster.size() * 3);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    Rgb c;
    if (!mask || (*mask)[i]) {
      const double v = std::clamp(raster[i], range.low, range.high);
      c = colormap((v - range.low) / (range.high - range.low));
    }
    bytes[header + 3 * i] = static_cast<char>(c.r);
    bytes[header + 3 * i + 1] = static_cast<char>(c.g);
    bytes[header + 3 * i + 2] = static_cast<char>(c.b);
  }
  write_file_atomic(path, bytes);
}

} // namespace t1map
