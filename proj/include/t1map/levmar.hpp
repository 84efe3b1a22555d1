#pragma once

// Small dense Levenberg-Marquardt solver with box projection.
//
// The model is queried one sample at a time, so no Jacobian storage is
// needed and a solve allocates nothing.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace t1map {

struct LmOptions {
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  double xtol = 1e-8;          // relative parameter change that ends the solve
  int max_iterations = 200;
  double max_damping = 1e16;   // a solve that needs more damping has stalled
};

template <int P> struct LmResult {
  Eigen::Matrix<double, P, 1> params;
  double cost = 0.0; // sum of squared residuals
  int iterations = 0;
  bool converged = false;
};

/// Model concept:
///   int size() const;
///   double residual(const Eigen::Matrix<double,P,1>& x, int i, Eigen::Matrix<double,P,1>& grad) const;
/// residual() returns r_i(x) and writes dr_i/dx into grad.
///
/// Scaled damping (JtJ + mu diag(JtJ)) keeps iterates invariant under
/// per-parameter rescaling. When `accepted_costs` is non-null, the cost after
/// each accepted step is appended (first entry is the initial cost).
template <int P, class Model>
LmResult<P> levenberg_marquardt(const Model &model, Eigen::Matrix<double, P, 1> x,
                                const Eigen::Matrix<double, P, 1> &lower,
                                const Eigen::Matrix<double, P, 1> &upper, const LmOptions &opt = {},
                                std::vector<double> *accepted_costs = nullptr) {
  using Vec = Eigen::Matrix<double, P, 1>;
  using Mat = Eigen::Matrix<double, P, P>;

  auto project = [&](Vec v) {
    for (int k = 0; k < P; ++k) {
      v[k] = std::clamp(v[k], lower[k], upper[k]);
    }
    return v;
  };
  auto cost_of = [&](const Vec &v) {
    Vec g;
    double c = 0.0;
    for (int i = 0; i < model.size(); ++i) {
      const double r = model.residual(v, i, g);
      c += r * r;
    }
    return c;
  };
  auto normal_equations = [&](const Vec &v, Mat &jtj, Vec &jtr) {
    jtj.setZero();
    jtr.setZero();
    Vec g;
    double c = 0.0;
    for (int i = 0; i < model.size(); ++i) {
      const double r = model.residual(v, i, g);
      c += r * r;
      jtj.noalias() += g * g.transpose();
      jtr.noalias() += g * r;
    }
    return c;
  };

  LmResult<P> out;
  x = project(x);
  Mat jtj;
  Vec jtr;
  double cost = normal_equations(x, jtj, jtr);
  if (accepted_costs) {
    accepted_costs->push_back(cost);
  }
  double mu = opt.initial_damping;

  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (cost == 0.0) {
      out.converged = true;
      break;
    }
    Mat a = jtj;
    const double diag_floor = 1e-12 * std::max(jtj.diagonal().maxCoeff(), 1e-300);
    for (int k = 0; k < P; ++k) {
      a(k, k) += mu * std::max(jtj(k, k), diag_floor);
    }
    const Vec step = a.ldlt().solve(-jtr);
    const Vec candidate = project(x + step);
    const double candidate_cost = cost_of(candidate);

    if (std::isfinite(candidate_cost) && candidate_cost < cost) {
      double change = 0.0;
      for (int k = 0; k < P; ++k) {
        const double scale = std::max(std::abs(x[k]), 1e-300);
        change = std::max(change, std::abs(candidate[k] - x[k]) / scale);
      }
      x = candidate;
      cost = normal_equations(x, jtj, jtr);
      if (accepted_costs) {
        accepted_costs->push_back(cost);
      }
      mu = std::max(mu / opt.damping_factor, 1e-12);
      if (change < opt.xtol) {
        out.converged = true;
        ++it;
        break;
      }
    } else {
      mu *= opt.damping_factor;
      if (mu > opt.max_damping) {
        out.converged = true;
        ++it;
        break;
      }
    }
  }
  out.params = x;
  out.cost = cost;
  out.iterations = it;
  return out;
}

} // namespace t1map
