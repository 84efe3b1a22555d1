#include "t1map/curvefit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace t1map {

namespace {

struct StoneModel {
  std::span<const double> t;
  std::span<const double> y;

  int size() const { return static_cast<int>(t.size()); }
  double residual(const Eigen::Vector2d &x, int i, Eigen::Vector2d &g) const {
    const double e = std::exp(-t[i] / x[1]);
    g[0] = 1.0 - 2.0 * e;
    g[1] = -2.0 * x[0] * e * t[i] / (x[1] * x[1]);
    return x[0] * g[0] - y[i];
  }
};

struct MolliModel {
  std::span<const double> t;
  std::span<const double> y;

  int size() const { return static_cast<int>(t.size()); }
  double residual(const Eigen::Vector3d &x, int i, Eigen::Vector3d &g) const {
    const double e = std::exp(-t[i] / x[2]);
    g[0] = 1.0;
    g[1] = -e;
    g[2] = -x[1] * e * t[i] / (x[2] * x[2]);
    return x[0] - x[1] * e - y[i];
  }
};

template <int P, class Model>
void fit_candidates(const Model &model_proto, std::span<const double> samples, std::span<const std::size_t> order,
                    const std::vector<Eigen::Matrix<double, P, 1>> &seeds,
                    const Eigen::Matrix<double, P, 1> &lower, const Eigen::Matrix<double, P, 1> &upper,
                    const LmOptions &solver, std::vector<double> &restored, LmResult<P> &best, int &best_flips,
                    std::vector<double> &best_restored) {
  const std::size_t n = samples.size();
  bool have_best = false;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      restored[order[j]] = j < k ? -samples[order[j]] : samples[order[j]];
    }
    Model model = model_proto;
    model.y = restored;
    for (const auto &seed : seeds) {
      const auto res = levenberg_marquardt<P>(model, seed, lower, upper, solver);
      if (!have_best || res.cost < best.cost) {
        best = res;
        best_flips = static_cast<int>(k);
        best_restored = restored;
        have_best = true;
      }
    }
  }
}

} // namespace

double r_squared(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size() || observed.size() < 2) {
    throw std::invalid_argument("r_squared needs two equal-length inputs of size >= 2");
  }
  const double mean = std::accumulate(observed.begin(), observed.end(), 0.0) / static_cast<double>(observed.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    ss_res += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
    ss_tot += (observed[i] - mean) * (observed[i] - mean);
  }
  if (ss_tot == 0.0) {
    throw NumericError("R^2 is undefined for constant observations");
  }
  return 1.0 - ss_res / ss_tot;
}

FitResult fit_pixel(std::span<const double> samples, std::span<const double> times, SequenceKind kind,
                    const FitOptions &options) {
  const std::size_t n = samples.size();
  const std::size_t min_n = kind == SequenceKind::Stone ? 3 : 4;
  if (times.size() != n) {
    throw std::invalid_argument("samples and times differ in length");
  }
  if (n < min_n) {
    throw std::invalid_argument("fit needs at least " + std::to_string(min_n) + " samples");
  }
  double max_sample = 0.0;
  for (double s : samples) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("magnitude samples must be finite and non-negative");
    }
    max_sample = std::max(max_sample, s);
  }

  FitResult result;
  if (kind == SequenceKind::Stone) {
    result.params = StoneParams{};
  } else {
    result.params = MolliParams{};
  }
  if (max_sample == 0.0) {
    result.degenerate = true;
    return result;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  // Zero-crossing seed from the smallest magnitude; amplitude from the latest sample.
  std::size_t min_idx = order[0];
  for (std::size_t j : order) {
    if (samples[j] < samples[min_idx]) {
      min_idx = j;
    }
  }
  const auto &b = options.bounds;
  const double t1_seed = std::clamp(times[min_idx] / std::log(2.0), b.t1_min, b.t1_max);
  const double amp_max = b.amplitude_max_factor * max_sample;
  const double amp_min = 1e-9 * max_sample;
  double amp_seed = samples[order[n - 1]];
  if (amp_seed <= 0.0) {
    amp_seed = max_sample;
  }

  std::vector<double> restored(n);
  std::vector<double> best_restored(n);
  std::vector<double> predicted(n);
  int flips = 0;

  if (kind == SequenceKind::Stone) {
    std::vector<Eigen::Vector2d> seeds;
    for (double f : options.seed_factors) {
      seeds.emplace_back(amp_seed, std::clamp(f * t1_seed, b.t1_min, b.t1_max));
    }
    const Eigen::Vector2d lower(amp_min, b.t1_min);
    const Eigen::Vector2d upper(amp_max, b.t1_max);
    LmResult<2> best;
    best.params.setZero();
    fit_candidates<2>(StoneModel{times, {}}, samples, order, seeds, lower, upper, options.solver, restored, best,
                      flips, best_restored);
    const StoneParams p{best.params[0], best.params[1]};
    result.params = p;
    result.corrected_t1 = p.t1;
    result.residual_norm = std::sqrt(best.cost);
    result.converged = best.converged;
    for (std::size_t i = 0; i < n; ++i) {
      predicted[i] = stone_signal(p, times[i]);
    }
  } else {
    std::vector<Eigen::Vector3d> seeds;
    for (double f : options.seed_factors) {
      seeds.emplace_back(amp_seed, 2.0 * amp_seed, std::clamp(f * t1_seed, b.t1_min, b.t1_max));
    }
    const Eigen::Vector3d lower(amp_min, amp_min, b.t1_min);
    const Eigen::Vector3d upper(amp_max, amp_max, b.t1_max);
    LmResult<3> best;
    best.params.setZero();
    fit_candidates<3>(MolliModel{times, {}}, samples, order, seeds, lower, upper, options.solver, restored, best,
                      flips, best_restored);
    const MolliParams p{best.params[0], best.params[1], best.params[2]};
    const auto corrected = molli_correct(p);
    result.params = p;
    result.corrected_t1 = corrected.t1;
    result.physical = corrected.physical;
    result.residual_norm = std::sqrt(best.cost);
    result.converged = best.converged;
    for (std::size_t i = 0; i < n; ++i) {
      predicted[i] = molli_signal(p, times[i]);
    }
  }
  result.polarity_flips = flips;

  const bool constant =
      std::all_of(best_restored.begin(), best_restored.end(), [&](double v) { return v == best_restored[0]; });
  if (constant) {
    result.degenerate = true;
    result.r2 = 0.0;
  } else {
    result.r2 = r_squared(best_restored, predicted);
  }
  return result;
}

FitMaps fit_map(const Series &series, const Mask *mask, const FitOptions &options, int jobs) {
  const int h = series.grid.height;
  const int w = series.grid.width;
  if (mask && (mask->height() != h || mask->width() != w)) {
    throw std::invalid_argument("fit mask does not match the series grid");
  }
  FitMaps out;
  out.params = ParamMap(series.kind, h, w);
  out.t1 = Raster(h, w, kInvalidPixelValue);
  out.r2 = Raster(h, w, kInvalidPixelValue);
  out.invalid = Mask(h, w, true);
  out.fitted = mask ? *mask : Mask(h, w, true);

  const std::vector<double> times = series.times();
  auto fit_rows = [&](int row_begin, int row_end) {
    std::vector<double> samples(series.size());
    for (int y = row_begin; y < row_end; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
        if (!out.fitted[i]) {
          continue;
        }
        for (std::size_t f = 0; f < series.size(); ++f) {
          samples[f] = series.frames[f].values[i];
        }
        const FitResult r = fit_pixel(samples, times, series.kind, options);
        std::visit([&](const auto &p) { out.params.set(i, p); }, r.params);
        out.t1[i] = r.corrected_t1;
        out.r2[i] = r.r2;
        out.invalid.set(i, !r.valid());
      }
    }
  };

  jobs = std::clamp(jobs, 1, h);
  if (jobs == 1) {
    fit_rows(0, h);
  } else {
    std::vector<std::jthread> workers;
    for (int j = 0; j < jobs; ++j) {
      const int b = h * j / jobs;
      const int e = h * (j + 1) / jobs;
      workers.emplace_back(fit_rows, b, e);
    }
  }
  return out;
}

} // namespace t1map
