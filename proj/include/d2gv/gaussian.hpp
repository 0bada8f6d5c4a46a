#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace d2gv {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;

/// One 2D Gaussian primitive in full-resolution pixel coordinates.
///
/// Scales are kept in log-space so any real parameter vector describes a
/// valid kernel. There is no opacity field; color absorbs it.
template <typename Scalar = double>
struct Gaussian2 {
  Vec2<Scalar> mu = Vec2<Scalar>::Zero();
  Scalar log_sx = 0;
  Scalar log_sy = 0;
  Scalar theta = 0;
  Vec3<Scalar> color = Vec3<Scalar>::Zero();

  Scalar sx() const { return std::exp(log_sx); }
  Scalar sy() const { return std::exp(log_sy); }

  static Gaussian2 from_scales(const Vec2<Scalar>& mu, Scalar sx, Scalar sy, Scalar theta,
                               const Vec3<Scalar>& color = Vec3<Scalar>::Zero()) {
    Gaussian2 g;
    g.mu = mu;
    g.log_sx = std::log(sx);
    g.log_sy = std::log(sy);
    g.theta = theta;
    g.color = color;
    return g;
  }

  template <typename Other>
  Gaussian2<Other> cast() const {
    Gaussian2<Other> g;
    g.mu = mu.template cast<Other>();
    g.log_sx = static_cast<Other>(log_sx);
    g.log_sy = static_cast<Other>(log_sy);
    g.theta = static_cast<Other>(theta);
    g.color = color.template cast<Other>();
    return g;
  }

  bool finite() const {
    return mu.allFinite() && std::isfinite(log_sx) && std::isfinite(log_sy) &&
           std::isfinite(theta) && color.allFinite();
  }
};

using Gaussian2d = Gaussian2<double>;
using Gaussian2f = Gaussian2<float>;

/// Rotation angle reduced into [0, pi).
template <typename Scalar>
Scalar canonical_theta(Scalar theta) {
  const Scalar pi = std::numbers::pi_v<Scalar>;
  Scalar t = std::fmod(theta, pi);
  if (t < 0) t += pi;
  if (t >= pi) t -= pi;
  return t;
}

/// Symmetric 2x2 covariance [[a, b], [b, c]].
template <typename Scalar = double>
struct Covariance2 {
  Scalar a = 1;
  Scalar b = 0;
  Scalar c = 1;

  Scalar det() const { return a * c - b * b; }
  Mat2<Scalar> matrix() const { return (Mat2<Scalar>() << a, b, b, c).finished(); }
  Covariance2 inverse() const {
    const Scalar d = det();
    return {c / d, -b / d, a / d};
  }
  Covariance2 scaled(Scalar k) const { return {a * k, b * k, c * k}; }
  Covariance2 operator+(const Covariance2& o) const { return {a + o.a, b + o.b, c + o.c}; }

  /// d^T * this * d
  Scalar quad(const Vec2<Scalar>& d) const {
    return a * d.x() * d.x() + 2 * b * d.x() * d.y() + c * d.y() * d.y();
  }

  // Eigenvalues of a symmetric 2x2, in closed form.
  Scalar lambda_max() const {
    const Scalar half_tr = (a + c) / 2;
    const Scalar r = std::hypot((a - c) / 2, b);
    return half_tr + r;
  }
  Scalar lambda_min() const {
    const Scalar half_tr = (a + c) / 2;
    const Scalar r = std::hypot((a - c) / 2, b);
    // det / lambda_max avoids cancellation for very anisotropic kernels
    return det() / (half_tr + r);
  }
};

/// R(theta) diag(sx^2, sy^2) R(theta)^T
template <typename Scalar>
Covariance2<Scalar> covariance(const Gaussian2<Scalar>& g) {
  const Scalar cs = std::cos(g.theta);
  const Scalar sn = std::sin(g.theta);
  const Scalar vx = std::exp(2 * g.log_sx);
  const Scalar vy = std::exp(2 * g.log_sy);
  return {cs * cs * vx + sn * sn * vy, cs * sn * (vx - vy), sn * sn * vx + cs * cs * vy};
}

/// Inverse covariance built directly from the factorization, which keeps
/// precision for large scale ratios.
template <typename Scalar>
Covariance2<Scalar> precision(const Gaussian2<Scalar>& g) {
  const Scalar cs = std::cos(g.theta);
  const Scalar sn = std::sin(g.theta);
  const Scalar ix = std::exp(-2 * g.log_sx);
  const Scalar iy = std::exp(-2 * g.log_sy);
  return {cs * cs * ix + sn * sn * iy, cs * sn * (ix - iy), sn * sn * ix + cs * cs * iy};
}

/// exp(-1/2 d^T Sigma^-1 d), d = x - mu.
template <typename Scalar>
Scalar kernel_eval(const Gaussian2<Scalar>& g, const Vec2<Scalar>& x) {
  return std::exp(Scalar(-0.5) * precision(g).quad(x - g.mu));
}

/// Largest std-dev of the kernel measured in a pixel grid whose spacing is
/// `raster_scale` full-resolution pixels.
template <typename Scalar>
Scalar footprint_sigma_max(const Gaussian2<Scalar>& g, Scalar raster_scale) {
  const Covariance2<Scalar> rasterized = covariance(g).scaled(Scalar(1) / (raster_scale * raster_scale));
  return std::sqrt(rasterized.lambda_max());
}

/// Squared L2 norm of the kernel: pi * sx * sy.
template <typename Scalar>
Scalar l2_norm_sq(const Gaussian2<Scalar>& g) {
  return std::numbers::pi_v<Scalar> * std::exp(g.log_sx + g.log_sy);
}

/// <phi_i, phi_j> over the plane.
template <typename Scalar>
Scalar gram_entry(const Gaussian2<Scalar>& gi, const Gaussian2<Scalar>& gj) {
  const Covariance2<Scalar> prec_sum = precision(gi) + precision(gj);
  const Covariance2<Scalar> cov_sum = covariance(gi) + covariance(gj);
  const Vec2<Scalar> d = gi.mu - gj.mu;
  return 2 * std::numbers::pi_v<Scalar> / std::sqrt(prec_sum.det()) *
         std::exp(Scalar(-0.5) * cov_sum.inverse().quad(d));
}

/// Normalized inner product G_ij / sqrt(G_ii G_jj).
template <typename Scalar>
Scalar correlation_entry(const Gaussian2<Scalar>& gi, const Gaussian2<Scalar>& gj) {
  const Covariance2<Scalar> cov_sum = covariance(gi) + covariance(gj);
  const Vec2<Scalar> d = gi.mu - gj.mu;
  // (det Si det Sj)^(1/4) = sqrt(sx_i sy_i sx_j sy_j)
  const Scalar root_dets = std::exp((gi.log_sx + gi.log_sy + gj.log_sx + gj.log_sy) / 2);
  return 2 * root_dets / std::sqrt(cov_sum.det()) * std::exp(Scalar(-0.5) * cov_sum.inverse().quad(d));
}

}  // namespace d2gv
