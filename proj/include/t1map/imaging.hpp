#pragma once

// Raster containers, series manifests and raw float32 map I/O.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace t1map {

/// Input or output could not be read/written, or a file violates its format.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure: degenerate data, non-finite values, undefined statistics.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Grid2D {
  int height = 0;
  int width = 0;
  double spacing_x = 1.0; // mm per pixel along columns
  double spacing_y = 1.0; // mm per pixel along rows

  std::size_t size() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  bool same_shape(const Grid2D &o) const { return height == o.height && width == o.width; }

  /// Throws std::invalid_argument unless height, width >= 8 and spacing > 0.
  void validate() const;
};

/// Row-major real raster, origin top-left, (y, x) = (row, column).
class Raster {
public:
  Raster() = default;
  Raster(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Raster &o) const { return height_ == o.height_ && width_ == o.width_; }

  double &operator()(int y, int x) { return data_[index(y, x)]; }
  double operator()(int y, int x) const { return data_[index(y, x)]; }
  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  void fill(double v);
  double min() const;
  double max() const;
  bool all_finite() const;

  bool operator==(const Raster &) const = default;

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Binary raster.
class Mask {
public:
  Mask() = default;
  Mask(int height, int width, bool fill = false);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }
  bool same_shape(const Mask &o) const { return height_ == o.height_ && width_ == o.width_; }
  template <class R> bool same_shape_as(const R &r) const { return height_ == r.height() && width_ == r.width(); }

  bool operator()(int y, int x) const { return bits_[index(y, x)] != 0; }
  void set(int y, int x, bool v) { bits_[index(y, x)] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  std::size_t count() const;
  Raster to_raster() const;
  /// Pixels with value >= threshold become 1.
  static Mask threshold(const Raster &r, double threshold = 0.5);
  /// Strict conversion: every value must be exactly 0 or 1.
  static Mask from_binary_raster(const Raster &r);

  bool operator==(const Mask &) const = default;

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

Mask operator|(const Mask &a, const Mask &b);
Mask operator&(const Mask &a, const Mask &b);

enum class SequenceKind { Stone, Molli };

std::string to_string(SequenceKind kind);
SequenceKind sequence_kind_from_string(const std::string &s);

struct Frame {
  Raster values;
  double t_ms = 0.0;
};

struct Series {
  Grid2D grid;
  SequenceKind kind = SequenceKind::Stone;
  std::string slice_id;
  std::vector<Frame> frames;

  std::size_t size() const { return frames.size(); }
  std::vector<double> times() const;
  /// Signal samples of pixel i across all frames, in frame order.
  std::vector<double> samples(std::size_t pixel) const;

  /// Checks N >= 4, shared grid, finite non-negative values and times.
  void validate() const;
};

/// Per-frame segmentation file names as listed in a manifest.
struct SegmentationFiles {
  std::string myo;
  std::string lv;
  std::string conf;
};

/// Parsed manifest JSON, before any raster is read.
struct Manifest {
  SequenceKind kind = SequenceKind::Stone;
  Grid2D grid;
  std::string slice_id;
  std::vector<std::string> frame_files;
  std::vector<double> times_ms;
  std::vector<SegmentationFiles> segmentations;
};

Manifest read_manifest(const std::filesystem::path &manifest_path);
void write_manifest(const Manifest &m, const std::filesystem::path &manifest_path);

/// Accepts either a manifest file or a directory containing manifest.json.
std::filesystem::path resolve_manifest(const std::filesystem::path &path);

Series load_series(const std::filesystem::path &manifest_path);

/// Global min-max over all frames jointly. Throws NumericError when constant.
Series normalize_minmax(const Series &series);

/// float32 little-endian, row-major, no header.
void save_map(const Raster &raster, const std::filesystem::path &path);
Raster load_map(const std::filesystem::path &path, int height, int width);
void save_mask(const Mask &mask, const std::filesystem::path &path);
Mask load_mask(const std::filesystem::path &path, int height, int width);

struct DisplayRange {
  double low = 0.0;
  double high = 1.0;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb &) const = default;
};

/// Built-in ramp for u in [0,1] (black-purple-red-yellow-white).
Rgb colormap(double u);

/// Binary P6 PPM. Values are clipped to `range`; pixels outside `mask` are black.
void render_ppm(const Raster &raster, DisplayRange range, const std::filesystem::path &path,
                const Mask *mask = nullptr);

/// Writes `bytes` to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path &path, const std::string &bytes);

} // namespace t1map
