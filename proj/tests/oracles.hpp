#pragma once

// Independent reference computations used as test oracles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "t1map/imaging.hpp"

namespace oracle {

// Brute-force fit of the magnitude recovery models.
//
// For a trial time constant tau every sign pattern that negates the k earliest
// samples is tried and the amplitudes are solved by linear least squares on
// the signed data. The profile cost is scanned on a log grid and the best
// bracket is refined by golden-section search.
struct FitOracle {
  double tau = 0.0;   // T1 (STONE) or T1* (MOLLI)
  double a = 0.0;     // M0 or A
  double b = 0.0;     // MOLLI B
  double cost = 0.0;
};

inline double profile_cost(std::span<const double> y, std::span<const double> t, bool molli, double tau,
                           double *out_a = nullptr, double *out_b = nullptr) {
  const std::size_t n = y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return t[i] < t[j]; });
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> s(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      s[order[j]] = j < k ? -y[order[j]] : y[order[j]];
    }
    double a = 0.0;
    double b = 0.0;
    double cost = 0.0;
    if (!molli) {
      // s ~ a * g, g = 1 - 2 e
      double gg = 0.0;
      double gs = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = 1.0 - 2.0 * std::exp(-t[i] / tau);
        gg += g * g;
        gs += g * s[i];
      }
      a = std::max(gs / gg, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = a * (1.0 - 2.0 * std::exp(-t[i] / tau)) - s[i];
        cost += r * r;
      }
    } else {
      // s ~ a - b e: 2x2 normal equations
      double s11 = 0.0, s12 = 0.0, s22 = 0.0, r1 = 0.0, r2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = -std::exp(-t[i] / tau);
        s11 += 1.0;
        s12 += e;
        s22 += e * e;
        r1 += s[i];
        r2 += e * s[i];
      }
      const double det = s11 * s22 - s12 * s12;
      a = (r1 * s22 - r2 * s12) / det;
      b = (s11 * r2 - s12 * r1) / det;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = a - b * std::exp(-t[i] / tau) - s[i];
        cost += r * r;
      }
    }
    if (cost < best) {
      best = cost;
      if (out_a) {
        *out_a = a;
      }
      if (out_b) {
        *out_b = b;
      }
    }
  }
  return best;
}

inline FitOracle brute_force_fit(std::span<const double> y, std::span<const double> t, bool molli,
                                 double tau_min = 1.0, double tau_max = 5000.0, int grid = 4000) {
  const double lmin = std::log(tau_min);
  const double lmax = std::log(tau_max);
  auto at = [&](int i) { return std::exp(lmin + (lmax - lmin) * i / (grid - 1)); };
  int best_i = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    const double c = profile_cost(y, t, molli, at(i));
    if (c < best) {
      best = c;
      best_i = i;
    }
  }
  double lo = std::log(at(std::max(0, best_i - 1)));
  double hi = std::log(at(std::min(grid - 1, best_i + 1)));
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - phi * (hi - lo);
  double x2 = lo + phi * (hi - lo);
  double f1 = profile_cost(y, t, molli, std::exp(x1));
  double f2 = profile_cost(y, t, molli, std::exp(x2));
  while (hi - lo > 1e-14) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = profile_cost(y, t, molli, std::exp(x1));
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = profile_cost(y, t, molli, std::exp(x2));
    }
  }
  FitOracle o;
  o.tau = std::exp(0.5 * (lo + hi));
  o.cost = profile_cost(y, t, molli, o.tau, &o.a, &o.b);
  return o;
}

// Boundary pixels (4-neighborhood) as physical coordinates, all-pairs distances.
inline double hausdorff_all_pairs(const t1map::Mask &a, const t1map::Mask &b, double sx, double sy) {
  auto pts = [&](const t1map::Mask &m) {
    std::vector<std::pair<double, double>> p;
    for (int y = 0; y < m.height(); ++y) {
      for (int x = 0; x < m.width(); ++x) {
        if (!m(y, x)) {
          continue;
        }
        bool edge = false;
        const int dy[4] = {-1, 1, 0, 0};
        const int dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int yy = y + dy[k];
          const int xx = x + dx[k];
          if (yy < 0 || xx < 0 || yy >= m.height() || xx >= m.width() || !m(yy, xx)) {
            edge = true;
          }
        }
        if (edge) {
          p.emplace_back(y * sy, x * sx);
        }
      }
    }
    return p;
  };
  const auto pa = pts(a);
  const auto pb = pts(b);
  std::vector<std::vector<double>> d(pa.size(), std::vector<double>(pb.size()));
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pb.size(); ++j) {
      d[i][j] = std::hypot(pa[i].first - pb[j].first, pa[i].second - pb[j].second);
    }
  }
  double h = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    h = std::max(h, *std::min_element(d[i].begin(), d[i].end()));
  }
  for (std::size_t j = 0; j < pb.size(); ++j) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      m = std::min(m, d[i][j]);
    }
    h = std::max(h, m);
  }
  return h;
}

// ICC(3,1) from the textbook two-way ANOVA table (targets x raters).
inline double icc31_anova(const std::vector<std::vector<double>> &x) {
  const std::size_t n = x.size();
  const std::size_t k = x.front().size();
  double grand = 0.0;
  for (const auto &row : x) {
    for (double v : row) {
      grand += v;
    }
  }
  grand /= static_cast<double>(n * k);
  double sst = 0.0, ssr = 0.0, ssc = 0.0;
  for (const auto &row : x) {
    for (double v : row) {
      sst += (v - grand) * (v - grand);
    }
    const double m = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(k);
    ssr += static_cast<double>(k) * (m - grand) * (m - grand);
  }
  for (std::size_t j = 0; j < k; ++j) {
    double m = 0.0;
    for (const auto &row : x) {
      m += row[j];
    }
    m /= static_cast<double>(n);
    ssc += static_cast<double>(n) * (m - grand) * (m - grand);
  }
  const double sse = sst - ssr - ssc;
  const double msr = ssr / static_cast<double>(n - 1);
  const double mse = sse / static_cast<double>((n - 1) * (k - 1));
  return (msr - mse) / (msr + static_cast<double>(k - 1) * mse);
}

inline t1map::Raster random_raster(int h, int w, std::mt19937_64 &rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  t1map::Raster r(h, w);
  for (double &v : r.values()) {
    v = u(rng);
  }
  return r;
}

inline double dot(const t1map::Raster &a, const t1map::Raster &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

inline std::filesystem::path temp_dir(const std::string &name) {
  auto p = std::filesystem::temp_directory_path() / ("t1map_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace oracle
