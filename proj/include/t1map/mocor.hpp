#pragma once

// Joint motion correction and parametric mapping for one slice series.
//
// Minimizes  lambda1 * L_fit + lambda2 * L_smooth + lambda3 * L_seg  over one
// stationary velocity field per frame and the per-pixel recovery parameters,
// alternating exact per-pixel refits of the parameters with Adam steps on the
// velocity fields. The reference frame's field is pinned to zero.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "t1map/confidence.hpp"
#include "t1map/curvefit.hpp"
#include "t1map/field.hpp"
#include "t1map/imaging.hpp"
#include "t1map/signal.hpp"

namespace t1map {

struct MocorConfig {
  double lambda1 = 1.0;
  double lambda2 = 5000.0;
  double lambda3 = 80000.0;
  double alpha = 0.9;
  double gamma = 0.99;
  double lr = 0.05;        // Adam step in velocity pixels
  double lr_final = 0.005; // the step decays geometrically from lr to lr_final
  int iters = 300;
  int steps = kDefaultIntegrationSteps;
  int refit_every = 10;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on negative weights, iters < 1, etc.
  void validate() const;
};

void to_json(nlohmann::json &j, const MocorConfig &c);
/// Missing keys keep their current value; unknown keys are rejected.
void update_from_json(MocorConfig &c, const nlohmann::json &j);

struct LossTerms {
  double fit = 0.0;
  double smooth = 0.0;
  double seg = 0.0;
  double total = 0.0;
};

/// sum_i sum_x ((S_i - R_i) K)^2
double loss_fit(std::span<const Raster> synths, std::span<const Raster> registered, const Mask &extended);

/// sum_i grad_penalty(v_i)
double loss_smooth(std::span<const VelocityField> velocities);

inline constexpr double kDiceEpsilon = 1e-6;

/// 1 - (2 sum ab + eps) / (sum a^2 + sum b^2 + eps)
double soft_dice_loss(const Raster &a, const Raster &b);
/// Gradient of soft_dice_loss w.r.t. b.
Raster soft_dice_loss_grad(const Raster &a, const Raster &b);

/// Sum over trusted frames i != r of the soft Dice losses between the
/// reference masks and the warped myocardium and LV masks of frame i.
/// Zero in fallback selections.
double loss_seg(const ConfidenceSelection &selection, std::span<const SegFrame> segs,
                std::span<const DisplacementField> fields);

/// |f(theta, t_i)| for every frame time, zeroed outside `extended`.
std::vector<Raster> synthesize(const ParamMap &params, std::span<const double> times, const Mask &extended);

struct LossEvaluation {
  LossTerms terms;
  std::vector<VelocityField> gradient; // empty unless requested
};

/// The objective for one series with fixed segmentations and selection.
class JointObjective {
public:
  JointObjective(const Series &series, std::span<const SegFrame> segs, ConfidenceSelection selection,
                 const MocorConfig &config);

  const ConfidenceSelection &selection() const { return selection_; }
  const Series &series() const { return series_; }

  /// Replaces the recovery parameters (and with them the synthetic frames).
  void set_params(const ParamMap &params);
  const std::vector<Raster> &synths() const { return synths_; }

  /// Loss and, when `with_gradient`, its exact gradient w.r.t. every velocity
  /// node. The reference frame's gradient is zero.
  LossEvaluation evaluate(std::span<const VelocityField> velocities, bool with_gradient) const;

private:
  Series series_;
  std::vector<SegFrame> segs_;
  ConfidenceSelection selection_;
  MocorConfig config_;
  std::vector<Raster> synths_;
  Raster extended_;
  Raster ref_myo_;
  Raster ref_lv_;
  std::vector<Raster> myo_;
  std::vector<Raster> lv_;
};

struct MocorState {
  ParamMap params;
  std::vector<VelocityField> velocities;
};

/// Evaluates the objective at a hand-built state.
LossEvaluation total_loss(const Series &series, std::span<const SegFrame> segs, const MocorState &state,
                          const MocorConfig &config, bool with_gradient = true);

struct CaseResult {
  std::vector<Raster> corrected_frames;
  std::vector<DisplacementField> fields;
  std::vector<VelocityField> velocity;
  FitMaps maps; // parameters, corrected T1, R^2 and invalid pixels
  int reference = 0;
  ConfidenceSelection selection;
  std::vector<LossTerms> loss_trace; // one entry per iteration plus the final state
  std::vector<JacobianStats> diagnostics;
};

/// Full pipeline for one normalized series. `segs` may be empty, which
/// selects the fallback (no segmentation loss, K = whole grid).
/// Throws NumericError when the loss becomes non-finite.
CaseResult run_mbss_t1(const Series &series, std::span<const SegFrame> segs, const MocorConfig &config,
                       int jobs = 1);

} // namespace t1map
