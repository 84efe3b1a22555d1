#pragma once

// Inversion-recovery signal equations and the Look-Locker correction.

#include <array>
#include <cstddef>
#include <vector>

#include "t1map/imaging.hpp"

namespace t1map {

/// Three-parameter Look-Locker model  A - B exp(-t / T1*).
struct MolliParams {
  double a = 0.0;
  double b = 0.0;
  double t1star = 0.0; // ms
};

/// Two-parameter ideal inversion model  M0 (1 - 2 exp(-t / T1)).
struct StoneParams {
  double m0 = 0.0;
  double t1 = 0.0; // ms
};

double molli_signal(const MolliParams &p, double t);
double stone_signal(const StoneParams &p, double t);

/// d/d(A, B, T1*) of molli_signal.
std::array<double, 3> molli_gradient(const MolliParams &p, double t);
/// d/d(M0, T1) of stone_signal.
std::array<double, 2> stone_gradient(const StoneParams &p, double t);

struct LookLockerT1 {
  double t1 = 0.0;       // ms
  bool physical = false; // false when B/A <= 1
};

/// T1 = T1* (B/A - 1). Throws std::invalid_argument when A <= 0.
LookLockerT1 molli_correct(const MolliParams &p);

/// Physiological box used by the fitter.
struct ParamBounds {
  double t1_min = 1.0;
  double t1_max = 5000.0;
  double amplitude_max_factor = 10.0; // times the largest observed sample
};

/// Per-pixel parameter maps. STONE channels: {M0, T1}; MOLLI: {A, B, T1*}.
struct ParamMap {
  SequenceKind kind = SequenceKind::Stone;
  std::vector<Raster> channels;

  ParamMap() = default;
  ParamMap(SequenceKind kind, int height, int width);

  static std::size_t channel_count(SequenceKind kind) { return kind == SequenceKind::Stone ? 2 : 3; }
  int height() const { return channels.empty() ? 0 : channels.front().height(); }
  int width() const { return channels.empty() ? 0 : channels.front().width(); }

  StoneParams stone_at(std::size_t i) const { return {channels[0][i], channels[1][i]}; }
  MolliParams molli_at(std::size_t i) const { return {channels[0][i], channels[1][i], channels[2][i]}; }
  void set(std::size_t i, const StoneParams &p);
  void set(std::size_t i, const MolliParams &p);

  /// Signed model value at pixel i; 0 where the time constant is not positive.
  double evaluate(std::size_t i, double t) const;

  bool operator==(const ParamMap &) const = default;
};

/// Pixelwise model evaluation at time t; absolute value when `magnitude`.
Raster synth_frame(const ParamMap &params, double t, bool magnitude);

} // namespace t1map
