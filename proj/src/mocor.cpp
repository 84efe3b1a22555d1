#include "t1map/mocor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "t1map/log.hpp"

namespace t1map {

using nlohmann::json;

void MocorConfig::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(alpha > 0.0 && alpha < 1.0) || !(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("need 0 < alpha < 1 and 0 < gamma <= 1");
  }
  if (!(lr > 0.0) || !(lr_final > 0.0)) {
    throw std::invalid_argument("learning rates must be positive");
  }
  if (iters < 1) {
    throw std::invalid_argument("iters must be >= 1");
  }
  if (steps < 1) {
    throw std::invalid_argument("integration steps must be >= 1");
  }
  if (refit_every < 1) {
    throw std::invalid_argument("refit_every must be >= 1");
  }
}

void to_json(json &j, const MocorConfig &c) {
  j = json{{"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"lambda3", c.lambda3}, {"alpha", c.alpha},
           {"gamma", c.gamma},     {"lr", c.lr},           {"lr_final", c.lr_final}, {"iters", c.iters},
           {"steps", c.steps},     {"refit_every", c.refit_every}, {"seed", c.seed}};
}

void update_from_json(MocorConfig &c, const json &j) {
  if (!j.is_object()) {
    throw std::invalid_argument("config must be a JSON object");
  }
  for (const auto &[key, value] : j.items()) {
    if (key == "lambda1") {
      c.lambda1 = value.get<double>();
    } else if (key == "lambda2") {
      c.lambda2 = value.get<double>();
    } else if (key == "lambda3") {
      c.lambda3 = value.get<double>();
    } else if (key == "alpha") {
      c.alpha = value.get<double>();
    } else if (key == "gamma") {
      c.gamma = value.get<double>();
    } else if (key == "lr") {
      c.lr = value.get<double>();
    } else if (key == "lr_final") {
      c.lr_final = value.get<double>();
    } else if (key == "iters") {
      c.iters = value.get<int>();
    } else if (key == "steps") {
      c.steps = value.get<int>();
    } else if (key == "refit_every") {
      c.refit_every = value.get<int>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
}

double loss_fit(std::span<const Raster> synths, std::span<const Raster> registered, const Mask &extended) {
  if (synths.size() != registered.size()) {
    throw std::invalid_argument("loss_fit: frame counts differ");
  }
  double total = 0.0;
  for (std::size_t f = 0; f < synths.size(); ++f) {
    const auto &s = synths[f];
    const auto &r = registered[f];
    if (!s.same_shape(r) || !extended.same_shape_as(s)) {
      throw std::invalid_argument("loss_fit: shape mismatch");
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (extended[i]) {
        const double d = s[i] - r[i];
        total += d * d;
      }
    }
  }
  return total;
}

double loss_smooth(std::span<const VelocityField> velocities) {
  double total = 0.0;
  for (const auto &v : velocities) {
    total += grad_penalty(v).value;
  }
  return total;
}

namespace {

struct DiceSums {
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
};

DiceSums dice_sums(const Raster &a, const Raster &b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("soft Dice: shape mismatch");
  }
  DiceSums s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s.ab += a[i] * b[i];
    s.aa += a[i] * a[i];
    s.bb += b[i] * b[i];
  }
  return s;
}

} // namespace

double soft_dice_loss(const Raster &a, const Raster &b) {
  const auto s = dice_sums(a, b);
  return 1.0 - (2.0 * s.ab + kDiceEpsilon) / (s.aa + s.bb + kDiceEpsilon);
}

Raster soft_dice_loss_grad(const Raster &a, const Raster &b) {
  const auto s = dice_sums(a, b);
  const double num = 2.0 * s.ab + kDiceEpsilon;
  const double den = s.aa + s.bb + kDiceEpsilon;
  Raster g(b.height(), b.width());
  for (std::size_t i = 0; i < b.size(); ++i) {
    g[i] = -(2.0 * a[i] * den - num * 2.0 * b[i]) / (den * den);
  }
  return g;
}

double loss_seg(const ConfidenceSelection &selection, std::span<const SegFrame> segs,
                std::span<const DisplacementField> fields) {
  if (!selection.segmentation_enabled()) {
    return 0.0;
  }
  const auto &ref = segs[static_cast<std::size_t>(selection.reference)];
  const Raster ref_myo = ref.myo.to_raster();
  const Raster ref_lv = ref.lv.to_raster();
  double total = 0.0;
  for (int i : selection.members) {
    if (i == selection.reference) {
      continue;
    }
    const auto idx = static_cast<std::size_t>(i);
    total += soft_dice_loss(ref_myo, warp_image(segs[idx].myo.to_raster(), fields[idx]));
    total += soft_dice_loss(ref_lv, warp_image(segs[idx].lv.to_raster(), fields[idx]));
  }
  return total;
}

std::vector<Raster> synthesize(const ParamMap &params, std::span<const double> times, const Mask &extended) {
  std::vector<Raster> out;
  out.reserve(times.size());
  for (double t : times) {
    Raster s(params.height(), params.width());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (extended[i]) {
        s[i] = std::abs(params.evaluate(i, t));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

JointObjective::JointObjective(const Series &series, std::span<const SegFrame> segs, ConfidenceSelection selection,
                               const MocorConfig &config)
    : series_(series), segs_(segs.begin(), segs.end()), selection_(std::move(selection)), config_(config) {
  if (!segs_.empty() && segs_.size() != series_.size()) {
    throw std::invalid_argument("segmentation count does not match frame count");
  }
  if (!selection_.extended.same_shape_as(series_.frames.front().values)) {
    throw std::invalid_argument("extended mask does not match the series grid");
  }
  extended_ = selection_.extended.to_raster();
  if (selection_.segmentation_enabled()) {
    ref_myo_ = segs_[static_cast<std::size_t>(selection_.reference)].myo.to_raster();
    ref_lv_ = segs_[static_cast<std::size_t>(selection_.reference)].lv.to_raster();
    for (const auto &s : segs_) {
      myo_.push_back(s.myo.to_raster());
      lv_.push_back(s.lv.to_raster());
    }
  }
  synths_.assign(series_.size(), Raster(series_.grid.height, series_.grid.width));
}

void JointObjective::set_params(const ParamMap &params) {
  if (params.height() != series_.grid.height || params.width() != series_.grid.width) {
    throw std::invalid_argument("parameter maps do not match the series grid");
  }
  synths_ = synthesize(params, series_.times(), selection_.extended);
}

LossEvaluation JointObjective::evaluate(std::span<const VelocityField> velocities, bool with_gradient) const {
  const std::size_t n = series_.size();
  if (velocities.size() != n) {
    throw std::invalid_argument("one velocity field per frame is required");
  }
  const int h = series_.grid.height;
  const int w = series_.grid.width;
  const bool seg_on = selection_.segmentation_enabled() && config_.lambda3 != 0.0;
  std::vector<bool> in_g(n, false);
  for (int i : selection_.members) {
    in_g[static_cast<std::size_t>(i)] = true;
  }

  LossEvaluation out;
  if (with_gradient) {
    out.gradient.reserve(n);
  }
  for (std::size_t f = 0; f < n; ++f) {
    const auto &v = velocities[f];
    if (v.full_height != h || v.full_width != w) {
      throw std::invalid_argument("velocity field does not match the series grid");
    }
    const bool is_ref = static_cast<int>(f) == selection_.reference;
    const DisplacementField d = is_ref ? DisplacementField(h, w) : integrate_svf(v, config_.steps);
    const Raster &image = series_.frames[f].values;
    const Raster registered = warp_image(image, d);

    // Fit term and its cotangent on the registered frame.
    Raster cot_fit(h, w);
    double fit = 0.0;
    for (std::size_t i = 0; i < registered.size(); ++i) {
      if (extended_[i] != 0.0) {
        const double diff = synths_[f][i] - registered[i];
        fit += diff * diff;
        cot_fit[i] = -2.0 * config_.lambda1 * diff;
      }
    }
    out.terms.fit += fit;

    const auto pen = grad_penalty(v);
    out.terms.smooth += pen.value;

    double seg = 0.0;
    const bool seg_frame = seg_on && in_g[f] && !is_ref;
    Raster warped_myo, warped_lv;
    if (seg_frame) {
      warped_myo = warp_image(myo_[f], d);
      warped_lv = warp_image(lv_[f], d);
      seg = soft_dice_loss(ref_myo_, warped_myo) + soft_dice_loss(ref_lv_, warped_lv);
      out.terms.seg += seg;
    }

    if (!with_gradient) {
      continue;
    }
    VelocityField grad(h, w);
    if (!is_ref) {
      DisplacementField cot_field = vjp_warp_field(image, d, cot_fit);
      if (seg_frame) {
        Raster g_myo = soft_dice_loss_grad(ref_myo_, warped_myo);
        Raster g_lv = soft_dice_loss_grad(ref_lv_, warped_lv);
        for (std::size_t i = 0; i < g_myo.size(); ++i) {
          g_myo[i] *= config_.lambda3;
          g_lv[i] *= config_.lambda3;
        }
        cot_field += vjp_warp_field(myo_[f], d, g_myo);
        cot_field += vjp_warp_field(lv_[f], d, g_lv);
      }
      grad = vjp_integrate(v, cot_field, config_.steps);
      VelocityField smooth_grad = pen.gradient;
      smooth_grad *= config_.lambda2;
      grad += smooth_grad;
    }
    out.gradient.push_back(std::move(grad));
  }
  out.terms.total =
      config_.lambda1 * out.terms.fit + config_.lambda2 * out.terms.smooth + config_.lambda3 * out.terms.seg;
  return out;
}

namespace {

ConfidenceSelection selection_for(const Series &series, std::span<const SegFrame> segs, const MocorConfig &config) {
  if (segs.empty()) {
    ConfidenceSelection sel;
    sel.fallback = true;
    sel.reference = static_cast<int>(series.size()) - 1;
    sel.extended = Mask(series.grid.height, series.grid.width, true);
    return sel;
  }
  if (segs.size() != series.size()) {
    throw std::invalid_argument("segmentation count does not match frame count");
  }
  return select(segs, config.alpha, config.gamma);
}

std::string describe(const LossTerms &t) {
  std::ostringstream ss;
  ss << "fit=" << t.fit << " smooth=" << t.smooth << " seg=" << t.seg << " total=" << t.total;
  return ss.str();
}

Series registered_series(const Series &series, std::span<const DisplacementField> fields) {
  Series out = series;
  for (std::size_t f = 0; f < series.size(); ++f) {
    out.frames[f].values = warp_image(series.frames[f].values, fields[f]);
  }
  return out;
}

std::vector<DisplacementField> integrate_all(std::span<const VelocityField> velocities, int reference, int steps) {
  std::vector<DisplacementField> fields;
  fields.reserve(velocities.size());
  for (std::size_t f = 0; f < velocities.size(); ++f) {
    const auto &v = velocities[f];
    fields.push_back(static_cast<int>(f) == reference ? DisplacementField(v.full_height, v.full_width)
                                                      : integrate_svf(v, steps));
  }
  return fields;
}

} // namespace

LossEvaluation total_loss(const Series &series, std::span<const SegFrame> segs, const MocorState &state,
                          const MocorConfig &config, bool with_gradient) {
  JointObjective objective(series, segs, selection_for(series, segs, config), config);
  objective.set_params(state.params);
  return objective.evaluate(state.velocities, with_gradient);
}

CaseResult run_mbss_t1(const Series &series, std::span<const SegFrame> segs, const MocorConfig &config, int jobs) {
  config.validate();
  series.validate();
  const int h = series.grid.height;
  const int w = series.grid.width;
  const std::size_t n = series.size();

  CaseResult result;
  result.selection = selection_for(series, segs, config);
  result.reference = result.selection.reference;
  const Mask &extended = result.selection.extended;
  JointObjective objective(series, segs, result.selection, config);

  std::vector<VelocityField> velocities(n, VelocityField(h, w));
  objective.set_params(fit_map(series, &extended, {}, jobs).params);

  // Adam moments per velocity node.
  std::vector<VelocityField> m1(n, VelocityField(h, w));
  std::vector<VelocityField> m2(n, VelocityField(h, w));
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  const double decay = config.iters > 1 ? std::pow(config.lr_final / config.lr, 1.0 / (config.iters - 1)) : 1.0;

  auto check_finite = [&](const LossTerms &t, int it) {
    if (!std::isfinite(t.total)) {
      throw NumericError("non-finite loss at iteration " + std::to_string(it) + ": " + describe(t));
    }
  };

  for (int it = 0; it < config.iters; ++it) {
    if (it > 0 && it % config.refit_every == 0) {
      const auto fields = integrate_all(velocities, result.reference, config.steps);
      objective.set_params(fit_map(registered_series(series, fields), &extended, {}, jobs).params);
    }
    auto eval = objective.evaluate(velocities, true);
    check_finite(eval.terms, it);
    result.loss_trace.push_back(eval.terms);
    log::debug("iter " + std::to_string(it) + " " + describe(eval.terms));

    const double lr = config.lr * std::pow(decay, it);
    const double bc1 = 1.0 - std::pow(beta1, it + 1);
    const double bc2 = 1.0 - std::pow(beta2, it + 1);
    for (std::size_t f = 0; f < n; ++f) {
      if (static_cast<int>(f) == result.reference) {
        continue;
      }
      auto step = [&](Raster &param, Raster &mom1, Raster &mom2, const Raster &grad) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          mom1[i] = beta1 * mom1[i] + (1.0 - beta1) * grad[i];
          mom2[i] = beta2 * mom2[i] + (1.0 - beta2) * grad[i] * grad[i];
          param[i] -= lr * (mom1[i] / bc1) / (std::sqrt(mom2[i] / bc2) + eps);
        }
      };
      step(velocities[f].vx, m1[f].vx, m2[f].vx, eval.gradient[f].vx);
      step(velocities[f].vy, m1[f].vy, m2[f].vy, eval.gradient[f].vy);
    }
  }

  result.fields = integrate_all(velocities, result.reference, config.steps);
  const Series registered = registered_series(series, result.fields);
  result.maps = fit_map(registered, nullptr, {}, jobs);
  objective.set_params(result.maps.params);
  const auto final_eval = objective.evaluate(velocities, false);
  check_finite(final_eval.terms, config.iters);
  result.loss_trace.push_back(final_eval.terms);
  log::info("final " + describe(final_eval.terms));

  for (const auto &f : registered.frames) {
    result.corrected_frames.push_back(f.values);
  }
  for (const auto &d : result.fields) {
    result.diagnostics.push_back(jacobian_stats(d));
  }
  result.velocity = std::move(velocities);
  return result;
}

} // namespace t1map
