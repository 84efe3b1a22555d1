#pragma once

// Evaluation: overlap and surface distance of masks, test-retest ICC,
// AHA-16 segmental statistics and the per-case metrics CSV.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "t1map/confidence.hpp"
#include "t1map/field.hpp"
#include "t1map/imaging.hpp"

namespace t1map {

/// 2|a & b| / (|a| + |b|). Throws NumericError when both are empty.
double dice(const Mask &a, const Mask &b);

/// Symmetric Hausdorff distance in mm between the boundary pixels of two
/// masks (mask pixels with a 4-neighbor outside the mask or the grid).
/// Throws NumericError when either mask is empty.
double hausdorff(const Mask &a, const Mask &b, const Grid2D &grid);

/// ICC(3,1), consistency, two raters. Throws std::invalid_argument for
/// fewer than 3 targets or non-finite values, NumericError when all targets
/// have the same mean.
double icc3(std::span<const double> test, std::span<const double> retest);

enum class AhaRing { Basal, Mid, Apical };

std::string to_string(AhaRing ring);
/// Ring of slice `index` in a stack of 5 slices ordered base to apex: B, B, M, M, A.
AhaRing ring_for_slice(int index);

inline constexpr int kAhaSegments = 16;

/// Segment labels 1..16 on myocardium pixels, 0 elsewhere.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;

  int operator()(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelMap &) const = default;
};

/// Angles run counterclockwise on screen (y down) from `ref_angle_deg`.
/// Basal and mid rings have six 60 degree sectors, labels 1-6 and 7-12;
/// the apical ring has four 90 degree sectors, labels 13-16.
LabelMap aha16_labels(const Mask &myo, double center_x, double center_y, double ref_angle_deg, AhaRing ring);

struct SegmentalReport {
  std::array<double, kAhaSegments> segment_means{}; // NaN where the count is 0
  std::array<std::size_t, kAhaSegments> segment_counts{};
  std::optional<double> icc;
};

/// Mean of t1 over valid pixels of each segment. `invalid` may be null.
SegmentalReport segmental_means(const Raster &t1, const LabelMap &labels, const Mask *invalid = nullptr);

/// Accumulates a slice into a report spanning several slices.
void merge_into(SegmentalReport &total, const SegmentalReport &slice);

struct Overlap {
  double dice = 0.0;
  double hd_mm = 0.0;
};

/// Mean over frames i != reference of dice and hausdorff between the
/// reference myocardium and frame i's myocardium pulled back by fields[i]
/// and re-thresholded at 0.5. Identity fields measure the uncorrected overlap.
Overlap registration_overlap(std::span<const SegFrame> segs, std::span<const DisplacementField> fields,
                             int reference, const Grid2D &grid);

/// Mean of `r2` over the pixels of `mask` that are not invalid.
double masked_mean(const Raster &values, const Mask &mask, const Mask *invalid = nullptr);

struct MetricsRow {
  std::string case_id;
  std::string slice;
  std::string method;
  std::optional<double> r2_mean;
  std::optional<double> dice;
  std::optional<double> hd_mm;
  std::optional<double> mean_detj;
  std::optional<double> folds;
  std::array<std::optional<double>, kAhaSegments> t1_seg{};
};

/// Copies the defined segment means of a report into a row.
void set_segments(MetricsRow &row, const SegmentalReport &report);

std::string metrics_csv_header();
/// Undefined values are written as empty fields.
std::string to_csv(std::span<const MetricsRow> rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string &text);
void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path &path);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path &path);

} // namespace t1map
