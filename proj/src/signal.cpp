#include "t1map/signal.hpp"

#include <cmath>
#include <stdexcept>

namespace t1map {

double molli_signal(const MolliParams &p, double t) { return p.a - p.b * std::exp(-t / p.t1star); }

double stone_signal(const StoneParams &p, double t) { return p.m0 * (1.0 - 2.0 * std::exp(-t / p.t1)); }

std::array<double, 3> molli_gradient(const MolliParams &p, double t) {
  const double e = std::exp(-t / p.t1star);
  return {1.0, -e, -p.b * e * t / (p.t1star * p.t1star)};
}

std::array<double, 2> stone_gradient(const StoneParams &p, double t) {
  const double e = std::exp(-t / p.t1);
  return {1.0 - 2.0 * e, -2.0 * p.m0 * e * t / (p.t1 * p.t1)};
}

LookLockerT1 molli_correct(const MolliParams &p) {
  if (!(p.a > 0.0)) {
    throw std::invalid_argument("Look-Locker correction requires A > 0");
  }
  const double ratio = p.b / p.a;
  return {p.t1star * (ratio - 1.0), ratio > 1.0};
}

ParamMap::ParamMap(SequenceKind k, int height, int width) : kind(k) {
  channels.assign(channel_count(k), Raster(height, width));
}

void ParamMap::set(std::size_t i, const StoneParams &p) {
  channels[0][i] = p.m0;
  channels[1][i] = p.t1;
}

void ParamMap::set(std::size_t i, const MolliParams &p) {
  channels[0][i] = p.a;
  channels[1][i] = p.b;
  channels[2][i] = p.t1star;
}

double ParamMap::evaluate(std::size_t i, double t) const {
  // Unfitted pixels carry a zero time constant and synthesize to 0.
  if (kind == SequenceKind::Stone) {
    const auto p = stone_at(i);
    return p.t1 > 0.0 ? stone_signal(p, t) : 0.0;
  }
  const auto p = molli_at(i);
  return p.t1star > 0.0 ? molli_signal(p, t) : 0.0;
}

Raster synth_frame(const ParamMap &params, double t, bool magnitude) {
  Raster out(params.height(), params.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = params.evaluate(i, t);
    out[i] = magnitude ? std::abs(v) : v;
  }
  return out;
}

} // namespace t1map
