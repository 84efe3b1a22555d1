#include "t1map/field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace t1map {

namespace {

struct AxisWeights {
  int i0 = 0;
  int i1 = 0;
  double f = 0.0; // weight of i1
};

AxisWeights locate(double p, int n) {
  if (n == 1) {
    return {0, 0, 0.0};
  }
  const double pc = std::clamp(p, 0.0, static_cast<double>(n - 1));
  int i0 = static_cast<int>(std::floor(pc));
  i0 = std::min(i0, n - 2);
  return {i0, i0 + 1, pc - i0};
}

/// Slope of the 1D piecewise-linear profile g at position p on [0, n-1].
template <class Profile> double profile_slope(const Profile &g, double p, int n, const AxisWeights &w) {
  if (n == 1 || p < 0.0 || p > n - 1) {
    return 0.0;
  }
  const double fl = std::floor(p);
  if (fl == p) {
    const int j = static_cast<int>(p);
    const double right = j < n - 1 ? g(j + 1) - g(j) : 0.0;
    const double left = j > 0 ? g(j) - g(j - 1) : 0.0;
    return 0.5 * (right + left);
  }
  return g(w.i1) - g(w.i0);
}

void require_same(const Raster &a, const Raster &b, const char *what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

} // namespace

DisplacementField &DisplacementField::operator+=(const DisplacementField &o) {
  require_same(dx, o.dx, "DisplacementField +=");
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] += o.dx[i];
    dy[i] += o.dy[i];
  }
  return *this;
}

DisplacementField &DisplacementField::operator*=(double s) {
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] *= s;
    dy[i] *= s;
  }
  return *this;
}

VelocityField::VelocityField(int fh, int fw)
    : vx(half_extent(fh), half_extent(fw)), vy(half_extent(fh), half_extent(fw)), full_height(fh), full_width(fw) {}

VelocityField &VelocityField::operator+=(const VelocityField &o) {
  require_same(vx, o.vx, "VelocityField +=");
  for (std::size_t i = 0; i < vx.size(); ++i) {
    vx[i] += o.vx[i];
    vy[i] += o.vy[i];
  }
  return *this;
}

VelocityField &VelocityField::operator*=(double s) {
  for (std::size_t i = 0; i < vx.size(); ++i) {
    vx[i] *= s;
    vy[i] *= s;
  }
  return *this;
}

VelocityField operator-(const VelocityField &v) {
  VelocityField out = v;
  out *= -1.0;
  return out;
}

double sample_bilinear(const Raster &r, double y, double x) {
  const auto wy = locate(y, r.height());
  const auto wx = locate(x, r.width());
  const double top = (1.0 - wx.f) * r(wy.i0, wx.i0) + wx.f * r(wy.i0, wx.i1);
  const double bottom = (1.0 - wx.f) * r(wy.i1, wx.i0) + wx.f * r(wy.i1, wx.i1);
  return (1.0 - wy.f) * top + wy.f * bottom;
}

BilinearSample sample_bilinear_grad(const Raster &r, double y, double x) {
  const auto wy = locate(y, r.height());
  const auto wx = locate(x, r.width());
  BilinearSample s;
  const double top = (1.0 - wx.f) * r(wy.i0, wx.i0) + wx.f * r(wy.i0, wx.i1);
  const double bottom = (1.0 - wx.f) * r(wy.i1, wx.i0) + wx.f * r(wy.i1, wx.i1);
  s.value = (1.0 - wy.f) * top + wy.f * bottom;

  auto row_profile = [&](int j) { return (1.0 - wy.f) * r(wy.i0, j) + wy.f * r(wy.i1, j); };
  auto col_profile = [&](int i) { return (1.0 - wx.f) * r(i, wx.i0) + wx.f * r(i, wx.i1); };
  s.d_dx = profile_slope(row_profile, x, r.width(), wx);
  s.d_dy = profile_slope(col_profile, y, r.height(), wy);
  return s;
}

void splat_bilinear(Raster &target, double y, double x, double weight) {
  const auto wy = locate(y, target.height());
  const auto wx = locate(x, target.width());
  target(wy.i0, wx.i0) += weight * (1.0 - wy.f) * (1.0 - wx.f);
  target(wy.i0, wx.i1) += weight * (1.0 - wy.f) * wx.f;
  target(wy.i1, wx.i0) += weight * wy.f * (1.0 - wx.f);
  target(wy.i1, wx.i1) += weight * wy.f * wx.f;
}

Raster warp_image(const Raster &image, const DisplacementField &d) {
  require_same(image, d.dx, "warp_image");
  Raster out(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      out(y, x) = sample_bilinear(image, y + d.dy(y, x), x + d.dx(y, x));
    }
  }
  return out;
}

WarpVjp vjp_warp(const Raster &image, const DisplacementField &d, const Raster &cotangent) {
  require_same(image, d.dx, "vjp_warp");
  require_same(image, cotangent, "vjp_warp");
  WarpVjp g{Raster(image.height(), image.width()), DisplacementField(image.height(), image.width())};
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double c = cotangent(y, x);
      if (c == 0.0) {
        continue;
      }
      const double py = y + d.dy(y, x);
      const double px = x + d.dx(y, x);
      const auto s = sample_bilinear_grad(image, py, px);
      g.field.dx(y, x) = c * s.d_dx;
      g.field.dy(y, x) = c * s.d_dy;
      splat_bilinear(g.image, py, px, c);
    }
  }
  return g;
}

DisplacementField vjp_warp_field(const Raster &image, const DisplacementField &d, const Raster &cotangent) {
  require_same(image, d.dx, "vjp_warp_field");
  require_same(image, cotangent, "vjp_warp_field");
  DisplacementField g(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double c = cotangent(y, x);
      if (c == 0.0) {
        continue;
      }
      const auto s = sample_bilinear_grad(image, y + d.dy(y, x), x + d.dx(y, x));
      g.dx(y, x) = c * s.d_dx;
      g.dy(y, x) = c * s.d_dy;
    }
  }
  return g;
}

DisplacementField compose(const DisplacementField &outer, const DisplacementField &inner, double s) {
  require_same(outer.dx, inner.dx, "compose");
  DisplacementField out(inner.height(), inner.width());
  const double inv = 1.0 / s;
  for (int y = 0; y < inner.height(); ++y) {
    for (int x = 0; x < inner.width(); ++x) {
      const double py = y + inner.dy(y, x) * inv;
      const double px = x + inner.dx(y, x) * inv;
      out.dx(y, x) = inner.dx(y, x) + sample_bilinear(outer.dx, py, px);
      out.dy(y, x) = inner.dy(y, x) + sample_bilinear(outer.dy, py, px);
    }
  }
  return out;
}

ComposeVjp vjp_compose(const DisplacementField &outer, const DisplacementField &inner,
                       const DisplacementField &cot, double s) {
  require_same(outer.dx, inner.dx, "vjp_compose");
  require_same(inner.dx, cot.dx, "vjp_compose");
  ComposeVjp g{DisplacementField(outer.height(), outer.width()), DisplacementField(inner.height(), inner.width())};
  const double inv = 1.0 / s;
  for (int y = 0; y < inner.height(); ++y) {
    for (int x = 0; x < inner.width(); ++x) {
      const double cx = cot.dx(y, x);
      const double cy = cot.dy(y, x);
      if (cx == 0.0 && cy == 0.0) {
        continue;
      }
      const double py = y + inner.dy(y, x) * inv;
      const double px = x + inner.dx(y, x) * inv;
      const auto sx = sample_bilinear_grad(outer.dx, py, px);
      const auto sy = sample_bilinear_grad(outer.dy, py, px);
      g.inner.dx(y, x) += cx + inv * (cx * sx.d_dx + cy * sy.d_dx);
      g.inner.dy(y, x) += cy + inv * (cx * sx.d_dy + cy * sy.d_dy);
      splat_bilinear(g.outer.dx, py, px, cx);
      splat_bilinear(g.outer.dy, py, px, cy);
    }
  }
  return g;
}

DisplacementField upsample_half(const DisplacementField &half, int fh, int fw) {
  DisplacementField out(fh, fw);
  for (int y = 0; y < fh; ++y) {
    for (int x = 0; x < fw; ++x) {
      out.dx(y, x) = sample_bilinear(half.dx, 0.5 * y, 0.5 * x);
      out.dy(y, x) = sample_bilinear(half.dy, 0.5 * y, 0.5 * x);
    }
  }
  return out;
}

DisplacementField vjp_upsample_half(const DisplacementField &cot, int hh, int hw) {
  DisplacementField g(hh, hw);
  for (int y = 0; y < cot.height(); ++y) {
    for (int x = 0; x < cot.width(); ++x) {
      splat_bilinear(g.dx, 0.5 * y, 0.5 * x, cot.dx(y, x));
      splat_bilinear(g.dy, 0.5 * y, 0.5 * x, cot.dy(y, x));
    }
  }
  return g;
}

namespace {

// Forward squaring chain at half resolution; tape[k] is the field before step k.
std::vector<DisplacementField> squaring_tape(const VelocityField &v, int steps) {
  if (steps < 0) {
    throw std::invalid_argument("integration steps must be non-negative");
  }
  std::vector<DisplacementField> tape;
  tape.reserve(static_cast<std::size_t>(steps) + 1);
  DisplacementField d(v.height(), v.width());
  const double scale = std::ldexp(1.0, -steps);
  for (std::size_t i = 0; i < v.vx.size(); ++i) {
    d.dx[i] = v.vx[i] * scale;
    d.dy[i] = v.vy[i] * scale;
  }
  tape.push_back(std::move(d));
  for (int k = 0; k < steps; ++k) {
    tape.push_back(compose(tape.back(), tape.back(), 2.0));
  }
  return tape;
}

} // namespace

DisplacementField integrate_svf(const VelocityField &v, int steps) {
  const auto tape = squaring_tape(v, steps);
  return upsample_half(tape.back(), v.full_height, v.full_width);
}

VelocityField vjp_integrate(const VelocityField &v, const DisplacementField &cot, int steps) {
  if (cot.height() != v.full_height || cot.width() != v.full_width) {
    throw std::invalid_argument("vjp_integrate: cotangent does not match the full-resolution grid");
  }
  const auto tape = squaring_tape(v, steps);
  DisplacementField g = vjp_upsample_half(cot, v.height(), v.width());
  for (int k = steps - 1; k >= 0; --k) {
    const auto &d = tape[static_cast<std::size_t>(k)];
    auto parts = vjp_compose(d, d, g, 2.0);
    parts.outer += parts.inner;
    g = std::move(parts.outer);
  }
  VelocityField out(v.full_height, v.full_width);
  const double scale = std::ldexp(1.0, -steps);
  for (std::size_t i = 0; i < out.vx.size(); ++i) {
    out.vx[i] = g.dx[i] * scale;
    out.vy[i] = g.dy[i] * scale;
  }
  return out;
}

JacobianStats jacobian_stats(const DisplacementField &d) {
  if (d.height() < 3 || d.width() < 3) {
    throw std::invalid_argument("jacobian_stats needs at least a 3x3 field");
  }
  JacobianStats st;
  double sum = 0.0;
  for (int y = 1; y < d.height() - 1; ++y) {
    for (int x = 1; x < d.width() - 1; ++x) {
      const double dxx = 0.5 * (d.dx(y, x + 1) - d.dx(y, x - 1));
      const double dxy = 0.5 * (d.dx(y + 1, x) - d.dx(y - 1, x));
      const double dyx = 0.5 * (d.dy(y, x + 1) - d.dy(y, x - 1));
      const double dyy = 0.5 * (d.dy(y + 1, x) - d.dy(y - 1, x));
      const double det = (1.0 + dxx) * (1.0 + dyy) - dxy * dyx;
      sum += det;
      if (det <= 0.0) {
        ++st.nonpositive;
      }
      ++st.interior;
    }
  }
  st.mean_det = sum / static_cast<double>(st.interior);
  return st;
}

SmoothnessPenalty grad_penalty(const VelocityField &v) {
  const int h = v.height();
  const int w = v.width();
  if (h < 2 || w < 2) {
    throw std::invalid_argument("grad_penalty needs at least a 2x2 field");
  }
  SmoothnessPenalty p;
  p.gradient = VelocityField(v.full_height, v.full_width);
  const double norm = 1.0 / static_cast<double>(v.vx.size());
  double total = 0.0;
  auto accumulate = [&](const Raster &c, Raster &g) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (x + 1 < w) {
          const double diff = c(y, x + 1) - c(y, x);
          total += diff * diff;
          g(y, x + 1) += 2.0 * norm * diff;
          g(y, x) -= 2.0 * norm * diff;
        }
        if (y + 1 < h) {
          const double diff = c(y + 1, x) - c(y, x);
          total += diff * diff;
          g(y + 1, x) += 2.0 * norm * diff;
          g(y, x) -= 2.0 * norm * diff;
        }
      }
    }
  };
  accumulate(v.vx, p.gradient.vx);
  accumulate(v.vy, p.gradient.vy);
  p.value = total * norm;
  return p;
}

} // namespace t1map
