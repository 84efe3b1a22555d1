#pragma once

// Deformation fields: stationary-velocity-field exponentiation by scaling and
// squaring, bilinear warping, Jacobian analysis and the smoothness penalty,
// each with the vector-Jacobian products needed for gradient descent.
//
// Conventions: components are (dx, dy) in full-resolution pixels; a warp
// samples the source at x + d(x); all sampling clamps to the border.
// Velocity fields live on a half-resolution grid whose node j sits on full
// pixel 2j.

#include <cstddef>

#include "t1map/imaging.hpp"

namespace t1map {

inline int half_extent(int n) { return (n + 1) / 2; }

struct DisplacementField {
  Raster dx;
  Raster dy;

  DisplacementField() = default;
  DisplacementField(int height, int width) : dx(height, width), dy(height, width) {}

  int height() const { return dx.height(); }
  int width() const { return dx.width(); }
  bool same_shape(const DisplacementField &o) const { return dx.same_shape(o.dx); }

  DisplacementField &operator+=(const DisplacementField &o);
  DisplacementField &operator*=(double s);
  bool operator==(const DisplacementField &) const = default;
};

struct VelocityField {
  Raster vx; // half resolution, values in full-resolution pixels
  Raster vy;
  int full_height = 0;
  int full_width = 0;

  VelocityField() = default;
  /// Zero field for a full-resolution grid of the given size.
  VelocityField(int full_height, int full_width);

  int height() const { return vx.height(); }
  int width() const { return vx.width(); }

  VelocityField &operator+=(const VelocityField &o);
  VelocityField &operator*=(double s);
  bool operator==(const VelocityField &) const = default;
};

VelocityField operator-(const VelocityField &v);

/// Bilinear value and partial derivatives w.r.t. the sample position.
/// At an exact node the derivative is the mean of the one-sided slopes
/// (a clamped side counts as slope 0).
struct BilinearSample {
  double value = 0.0;
  double d_dy = 0.0;
  double d_dx = 0.0;
};

double sample_bilinear(const Raster &r, double y, double x);
BilinearSample sample_bilinear_grad(const Raster &r, double y, double x);
/// Adjoint of sample_bilinear w.r.t. the raster values.
void splat_bilinear(Raster &target, double y, double x, double weight);

Raster warp_image(const Raster &image, const DisplacementField &d);

struct WarpVjp {
  Raster image;
  DisplacementField field;
};
WarpVjp vjp_warp(const Raster &image, const DisplacementField &d, const Raster &cotangent);
/// Field part of vjp_warp only.
DisplacementField vjp_warp_field(const Raster &image, const DisplacementField &d, const Raster &cotangent);

/// Displacement of (id + outer) o (id + inner):  inner(x) + outer(x + inner(x) / s),
/// with s the number of pixels per grid node of both fields.
DisplacementField compose(const DisplacementField &outer, const DisplacementField &inner,
                          double pixels_per_node = 1.0);

struct ComposeVjp {
  DisplacementField outer;
  DisplacementField inner;
};
ComposeVjp vjp_compose(const DisplacementField &outer, const DisplacementField &inner,
                       const DisplacementField &cotangent, double pixels_per_node = 1.0);

/// Half-resolution field to a full-resolution grid (values unchanged).
DisplacementField upsample_half(const DisplacementField &half, int full_height, int full_width);
DisplacementField vjp_upsample_half(const DisplacementField &cotangent, int half_height, int half_width);

inline constexpr int kDefaultIntegrationSteps = 7;

/// exp(v) by scaling and squaring at half resolution, then upsampled.
DisplacementField integrate_svf(const VelocityField &v, int steps = kDefaultIntegrationSteps);
VelocityField vjp_integrate(const VelocityField &v, const DisplacementField &cotangent,
                            int steps = kDefaultIntegrationSteps);

struct JacobianStats {
  double mean_det = 1.0;
  std::size_t nonpositive = 0;
  std::size_t interior = 0;
};

/// det J of x -> x + d(x) by central differences over interior pixels.
JacobianStats jacobian_stats(const DisplacementField &d);

struct SmoothnessPenalty {
  double value = 0.0;
  VelocityField gradient;
};

/// Mean over velocity nodes of the squared forward-difference gradient norm.
SmoothnessPenalty grad_penalty(const VelocityField &v);

} // namespace t1map
