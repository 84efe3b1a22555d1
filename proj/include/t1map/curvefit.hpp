#pragma once

// Per-pixel least-squares estimation of recovery parameters from magnitude
// samples, with polarity restoration of the early (inverted) samples.

#include <span>
#include <variant>
#include <vector>

#include "t1map/imaging.hpp"
#include "t1map/levmar.hpp"
#include "t1map/signal.hpp"

namespace t1map {

struct FitOptions {
  ParamBounds bounds;
  LmOptions solver;
  /// Multipliers applied to the zero-crossing T1 seed.
  std::vector<double> seed_factors{1.0, 0.5, 2.0};
};

struct FitResult {
  std::variant<StoneParams, MolliParams> params;
  double corrected_t1 = 0.0; // ms; Look-Locker corrected for MOLLI, T1 for STONE
  double r2 = 0.0;
  double residual_norm = 0.0;
  int polarity_flips = 0;
  bool converged = false;
  bool degenerate = false; // no usable signal
  bool physical = true;    // MOLLI: B/A > 1

  bool valid() const { return !degenerate && physical; }
};

/// Minimizes sum_i (f(theta, t_i) - sigma_i s_i)^2 over the parameters and
/// over polarity patterns that negate the k earliest samples, k < N.
/// Throws std::invalid_argument on too few or negative samples.
FitResult fit_pixel(std::span<const double> samples, std::span<const double> times, SequenceKind kind,
                    const FitOptions &options = {});

/// 1 - SS_res / SS_tot. Throws NumericError when `observed` is constant.
double r_squared(std::span<const double> observed, std::span<const double> predicted);

/// Value stored in every map at pixels that were not fitted or failed.
inline constexpr double kInvalidPixelValue = 0.0;

struct FitMaps {
  ParamMap params;
  Raster t1;      // corrected T1, ms
  Raster r2;
  Mask invalid;   // outside the mask, degenerate, or non-physical
  Mask fitted;    // pixels that were fitted (the mask, or everything)
};

/// fit_pixel at every pixel of `mask` (all pixels when null). `jobs` > 1
/// splits rows across threads; the output does not depend on `jobs`.
FitMaps fit_map(const Series &series, const Mask *mask = nullptr, const FitOptions &options = {}, int jobs = 1);

} // namespace t1map
