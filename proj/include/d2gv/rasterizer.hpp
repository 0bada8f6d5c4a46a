#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "d2gv/gaussian.hpp"
#include "d2gv/image.hpp"
#include "d2gv/parallel.hpp"

namespace d2gv {

struct RasterOptions {
  /// Contributions with Mahalanobis distance above this are dropped.
  double cutoff = 3.5;
  int tile_size = 16;
  /// 0 uses the global thread setting.
  int threads = 0;
};

/// Per-primitive partials of a scalar loss.
template <typename Scalar = double>
struct GaussianGrad {
  Vec2<Scalar> d_mu = Vec2<Scalar>::Zero();
  Scalar d_log_sx = 0;
  Scalar d_log_sy = 0;
  Scalar d_theta = 0;
  Vec3<Scalar> d_color = Vec3<Scalar>::Zero();

  GaussianGrad& operator+=(const GaussianGrad& o) {
    d_mu += o.d_mu;
    d_log_sx += o.d_log_sx;
    d_log_sy += o.d_log_sy;
    d_theta += o.d_theta;
    d_color += o.d_color;
    return *this;
  }
  bool finite() const {
    return d_mu.allFinite() && std::isfinite(d_log_sx) && std::isfinite(d_log_sy) && std::isfinite(d_theta) &&
           d_color.allFinite();
  }
};

template <typename Scalar = double>
using GradientBuffer = std::vector<GaussianGrad<Scalar>>;

namespace detail {

template <typename Scalar>
struct Splat {
  Vec2<Scalar> mu;
  Covariance2<Scalar> prec;
  Vec3<Scalar> color;
  int x0, x1, y0, y1;  // inclusive output-pixel bounds; empty when x0 > x1
};

/// Primitive indices overlapping each tile, in ascending index order.
struct TileBins {
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<int>> lists;
};

template <typename Scalar>
std::vector<Splat<Scalar>> prepare_splats(std::span<const Gaussian2<Scalar>> gaussians, int width, int height,
                                          Scalar raster_scale, double cutoff) {
  std::vector<Splat<Scalar>> splats(gaussians.size());
  for (std::size_t n = 0; n < gaussians.size(); ++n) {
    const auto& g = gaussians[n];
    const Covariance2<Scalar> cov = covariance(g);
    Splat<Scalar>& s = splats[n];
    s.mu = g.mu;
    s.prec = precision(g);
    s.color = g.color;
    // sample point of pixel p is (p + 0.5) * raster_scale
    const double ex = cutoff * std::sqrt(static_cast<double>(cov.a));
    const double ey = cutoff * std::sqrt(static_cast<double>(cov.c));
    const double r = static_cast<double>(raster_scale);
    const double mx = static_cast<double>(g.mu.x());
    const double my = static_cast<double>(g.mu.y());
    const double fx0 = std::ceil((mx - ex) / r - 0.5);
    const double fx1 = std::floor((mx + ex) / r - 0.5);
    const double fy0 = std::ceil((my - ey) / r - 0.5);
    const double fy1 = std::floor((my + ey) / r - 0.5);
    s.x0 = static_cast<int>(std::clamp(fx0, 0.0, static_cast<double>(width)));
    s.x1 = static_cast<int>(std::clamp(fx1, -1.0, static_cast<double>(width - 1)));
    s.y0 = static_cast<int>(std::clamp(fy0, 0.0, static_cast<double>(height)));
    s.y1 = static_cast<int>(std::clamp(fy1, -1.0, static_cast<double>(height - 1)));
  }
  return splats;
}

template <typename Scalar>
TileBins bin_splats(const std::vector<Splat<Scalar>>& splats, int width, int height, int tile) {
  TileBins bins;
  bins.tiles_x = (width + tile - 1) / tile;
  bins.tiles_y = (height + tile - 1) / tile;
  bins.lists.resize(static_cast<std::size_t>(bins.tiles_x) * bins.tiles_y);
  for (std::size_t n = 0; n < splats.size(); ++n) {
    const auto& s = splats[n];
    if (s.x0 > s.x1 || s.y0 > s.y1) continue;
    for (int ty = s.y0 / tile; ty <= s.y1 / tile; ++ty) {
      for (int tx = s.x0 / tile; tx <= s.x1 / tile; ++tx) {
        bins.lists[ty * bins.tiles_x + tx].push_back(static_cast<int>(n));
      }
    }
  }
  return bins;
}

inline void check_dims(int width, int height, double raster_scale) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("render: zero-dimension image");
  if (!(raster_scale > 0)) throw std::invalid_argument("render: raster_scale must be positive");
}

}  // namespace detail

/// Sums c_n * exp(-1/2 d^T Sigma_n^-1 d) over all primitives at each pixel
/// sample point (p + 0.5) * raster_scale. Per-pixel accumulation follows
/// primitive index order and tiles own disjoint pixels, so the result does
/// not depend on thread count.
template <typename Scalar>
Image<Scalar> render(std::span<const Gaussian2<Scalar>> gaussians, int width, int height, Scalar raster_scale = 1,
                     const RasterOptions& opts = {}) {
  detail::check_dims(width, height, static_cast<double>(raster_scale));
  Image<Scalar> out(width, height);
  const auto splats = detail::prepare_splats(gaussians, width, height, raster_scale, opts.cutoff);
  const auto bins = detail::bin_splats(splats, width, height, opts.tile_size);
  const Scalar cut2 = static_cast<Scalar>(opts.cutoff * opts.cutoff);

  parallel_for(
      bins.lists.size(),
      [&](std::size_t t) {
        const auto& list = bins.lists[t];
        if (list.empty()) return;
        const int tx0 = (static_cast<int>(t) % bins.tiles_x) * opts.tile_size;
        const int ty0 = (static_cast<int>(t) / bins.tiles_x) * opts.tile_size;
        const int tx1 = std::min(width, tx0 + opts.tile_size) - 1;
        const int ty1 = std::min(height, ty0 + opts.tile_size) - 1;
        // splat-major within the tile: each pixel still sums in ascending index order
        for (int n : list) {
          const auto& s = splats[n];
          const int x0 = std::max(s.x0, tx0), x1 = std::min(s.x1, tx1);
          const int y0 = std::max(s.y0, ty0), y1 = std::min(s.y1, ty1);
          for (int py = y0; py <= y1; ++py) {
            const Scalar dy = (py + Scalar(0.5)) * raster_scale - s.mu.y();
            Scalar* row = &out.pixels[3 * (static_cast<Eigen::Index>(py) * width)];
            for (int px = x0; px <= x1; ++px) {
              const Scalar dx = (px + Scalar(0.5)) * raster_scale - s.mu.x();
              const Scalar q = s.prec.a * dx * dx + 2 * s.prec.b * dx * dy + s.prec.c * dy * dy;
              if (q > cut2) continue;
              const Scalar w = std::exp(Scalar(-0.5) * q);
              Scalar* p = row + 3 * px;
              p[0] += s.color[0] * w;
              p[1] += s.color[1] * w;
              p[2] += s.color[2] * w;
            }
          }
        }
      },
      opts.threads);
  return out;
}

template <typename Scalar>
Image<Scalar> render(const std::vector<Gaussian2<Scalar>>& gaussians, int width, int height, Scalar raster_scale = 1,
                     const RasterOptions& opts = {}) {
  return render(std::span<const Gaussian2<Scalar>>(gaussians), width, height, raster_scale, opts);
}

/// Renders a full-resolution extent at downsample factor r >= 1; output
/// dimensions are ceil(full / r).
template <typename Scalar>
Image<Scalar> render_at_scale(std::span<const Gaussian2<Scalar>> subset, int full_width, int full_height, Scalar r,
                              const RasterOptions& opts = {}) {
  if (!(r >= 1)) throw std::invalid_argument("render_at_scale: scale must be >= 1");
  return render(subset, scaled_extent(full_width, static_cast<double>(r)),
                scaled_extent(full_height, static_cast<double>(r)), r, opts);
}

/// Analytic gradients of a loss L given dL/dpixel (`loss_grad`) for the
/// image produced by render(gaussians, width, height, raster_scale).
/// Per-tile partial sums are merged in tile order.
template <typename Scalar>
GradientBuffer<Scalar> render_backward(std::span<const Gaussian2<Scalar>> gaussians, const Image<Scalar>& loss_grad,
                                       int width, int height, Scalar raster_scale = 1,
                                       const RasterOptions& opts = {}) {
  detail::check_dims(width, height, static_cast<double>(raster_scale));
  if (loss_grad.width != width || loss_grad.height != height) {
    throw std::invalid_argument("render_backward: loss gradient shape does not match render target");
  }
  const auto splats = detail::prepare_splats(gaussians, width, height, raster_scale, opts.cutoff);
  const auto bins = detail::bin_splats(splats, width, height, opts.tile_size);
  const Scalar cut2 = static_cast<Scalar>(opts.cutoff * opts.cutoff);

  // Per tile, per listed primitive: dL/dmu (2), dL/dprecision a,b,c (3), dL/dcolor (3).
  using Partial = std::array<Scalar, 8>;
  std::vector<std::vector<Partial>> scratch(bins.lists.size());

  parallel_for(
      bins.lists.size(),
      [&](std::size_t t) {
        const auto& list = bins.lists[t];
        if (list.empty()) return;
        auto& acc = scratch[t];
        acc.assign(list.size(), Partial{});
        const int tx0 = (static_cast<int>(t) % bins.tiles_x) * opts.tile_size;
        const int ty0 = (static_cast<int>(t) / bins.tiles_x) * opts.tile_size;
        const int tx1 = std::min(width, tx0 + opts.tile_size) - 1;
        const int ty1 = std::min(height, ty0 + opts.tile_size) - 1;
        for (std::size_t k = 0; k < list.size(); ++k) {
          const auto& s = splats[list[k]];
          const int x0 = std::max(s.x0, tx0), x1 = std::min(s.x1, tx1);
          const int y0 = std::max(s.y0, ty0), y1 = std::min(s.y1, ty1);
          Partial& p = acc[k];
          for (int py = y0; py <= y1; ++py) {
            const Scalar dy = (py + Scalar(0.5)) * raster_scale - s.mu.y();
            const Scalar* row = &loss_grad.pixels[3 * (static_cast<Eigen::Index>(py) * width)];
            for (int px = x0; px <= x1; ++px) {
              const Scalar* g = row + 3 * px;
              if (g[0] == 0 && g[1] == 0 && g[2] == 0) continue;
              const Scalar dx = (px + Scalar(0.5)) * raster_scale - s.mu.x();
              const Scalar q = s.prec.a * dx * dx + 2 * s.prec.b * dx * dy + s.prec.c * dy * dy;
              if (q > cut2) continue;
              const Scalar w = std::exp(Scalar(-0.5) * q);
              p[5] += g[0] * w;
              p[6] += g[1] * w;
              p[7] += g[2] * w;
              const Scalar dl_dw = g[0] * s.color[0] + g[1] * s.color[1] + g[2] * s.color[2];
              const Scalar dl_dq = Scalar(-0.5) * w * dl_dw;
              // q = d^T P d with d = x - mu
              p[0] += dl_dq * Scalar(-2) * (s.prec.a * dx + s.prec.b * dy);
              p[1] += dl_dq * Scalar(-2) * (s.prec.b * dx + s.prec.c * dy);
              p[2] += dl_dq * dx * dx;
              p[3] += dl_dq * 2 * dx * dy;
              p[4] += dl_dq * dy * dy;
            }
          }
        }
      },
      opts.threads);

  std::vector<Partial> merged(gaussians.size(), Partial{});
  for (std::size_t t = 0; t < bins.lists.size(); ++t) {
    const auto& list = bins.lists[t];
    for (std::size_t k = 0; k < scratch[t].size(); ++k) {
      Partial& dst = merged[list[k]];
      for (int i = 0; i < 8; ++i) dst[i] += scratch[t][k][i];
    }
  }

  GradientBuffer<Scalar> grads(gaussians.size());
  for (std::size_t n = 0; n < gaussians.size(); ++n) {
    const auto& g = gaussians[n];
    const auto& p = merged[n];
    const Scalar cs = std::cos(g.theta);
    const Scalar sn = std::sin(g.theta);
    const Scalar ix = std::exp(-2 * g.log_sx);
    const Scalar iy = std::exp(-2 * g.log_sy);
    const Scalar da = p[2], db = p[3], dc = p[4];
    GaussianGrad<Scalar>& out = grads[n];
    out.d_mu = Vec2<Scalar>(p[0], p[1]);
    out.d_color = Vec3<Scalar>(p[5], p[6], p[7]);
    // P = R diag(ix, iy) R^T
    out.d_log_sx = Scalar(-2) * ix * (da * cs * cs + db * cs * sn + dc * sn * sn);
    out.d_log_sy = Scalar(-2) * iy * (da * sn * sn - db * cs * sn + dc * cs * cs);
    out.d_theta = da * 2 * cs * sn * (iy - ix) + db * (cs * cs - sn * sn) * (ix - iy) + dc * 2 * cs * sn * (ix - iy);
  }
  return grads;
}

template <typename Scalar>
GradientBuffer<Scalar> render_backward(const std::vector<Gaussian2<Scalar>>& gaussians, const Image<Scalar>& loss_grad,
                                       int width, int height, Scalar raster_scale = 1,
                                       const RasterOptions& opts = {}) {
  return render_backward(std::span<const Gaussian2<Scalar>>(gaussians), loss_grad, width, height, raster_scale, opts);
}

}  // namespace d2gv
