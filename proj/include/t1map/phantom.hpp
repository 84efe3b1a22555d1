#pragma once

// Synthetic short-axis phantom with known recovery parameters, per-frame
// motion and segmentations: an annular myocardium around a blood pool.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "t1map/confidence.hpp"
#include "t1map/field.hpp"
#include "t1map/imaging.hpp"
#include "t1map/signal.hpp"

namespace t1map {

struct PhantomSpec {
  Grid2D grid{160, 160, 2.1, 2.1};
  SequenceKind kind = SequenceKind::Stone;
  std::vector<double> times; // empty: default schedule for `kind`
  double center_x = 80.0;
  double center_y = 80.0;
  double inner_radius = 12.0; // myocardium annulus, pixels
  double outer_radius = 18.0;
  double lv_radius = 12.0;    // blood pool disc; <= inner_radius
  double t1_myo = 1100.0;
  double t1_blood = 1700.0;
  double t1_background = 300.0;
  double m0_myo = 1000.0;
  double m0_blood = 1100.0;
  double m0_background = 700.0;
  double look_locker_ratio = 1.9; // MOLLI B/A; T1* = T1 / (ratio - 1)
  double motion_amplitude = 0.0;  // peak velocity magnitude over the heart disc, pixels
  double motion_smoothness = 12.0; // Gaussian sigma, pixels
  double noise_sigma = 0.0;        // Rician sigma, signal units
  int reference_frame = 0;         // frame left without motion
  double conf_level = 0.98;        // confidence of every other frame's segmentation
  std::uint64_t seed = 0;
  std::string slice_id = "phantom";

  /// Throws std::invalid_argument on infeasible geometry or settings.
  void validate() const;
  std::vector<double> effective_times() const;
};

/// 11 samples log-spaced over [100, 4500] ms.
std::vector<double> default_stone_times();
/// 5(3)3-style schedule: two inversion trains, 8 samples in [100, 3500] ms.
std::vector<double> default_molli_times();

void to_json(nlohmann::json &j, const PhantomSpec &s);
/// Missing keys keep their defaults; unknown keys are rejected.
PhantomSpec phantom_spec_from_json(const nlohmann::json &j);

struct PhantomCase {
  PhantomSpec spec;
  ParamMap truth_params;
  Raster truth_t1; // corrected T1, ms
  std::vector<DisplacementField> truth_fields;
  Series series;
  std::vector<SegFrame> segs;
  Mask truth_myo; // reference geometry
  Mask truth_lv;
};

PhantomCase make_phantom(const PhantomSpec &spec);

/// sqrt((v + n1)^2 + n2^2) with n1, n2 ~ N(0, sigma^2).
Raster add_rician(const Raster &values, double sigma, std::uint64_t seed);

/// Writes manifest.json, frames, segmentations and truth_* rasters to `dir`.
void write_phantom(const PhantomCase &c, const std::filesystem::path &dir);

struct PhantomTruth {
  Raster t1;
  Mask myo;
  Mask lv;
  int reference_frame = 0;
  double center_x = 0.0;
  double center_y = 0.0;
};

/// Reads the truth_* files written by write_phantom.
PhantomTruth load_phantom_truth(const std::filesystem::path &dir);

} // namespace t1map
