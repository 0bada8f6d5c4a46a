#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "d2gv/image.hpp"

namespace d2gv {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) with peak 1.0, capped at kPsnrCap (identical images
/// report the cap).
template <typename Scalar>
double psnr(const Image<Scalar>& a, const Image<Scalar>& b) {
  require_same_shape(a, b, "psnr");
  const double mse = (a.pixels.template cast<double>() - b.pixels.template cast<double>()).square().mean();
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

template <typename Scalar>
double mse(const Image<Scalar>& a, const Image<Scalar>& b) {
  require_same_shape(a, b, "mse");
  return (a.pixels.template cast<double>() - b.pixels.template cast<double>()).square().mean();
}

/// Standard SSIM constants for unit dynamic range.
struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

namespace detail {

inline std::vector<double> gaussian_window(const SsimParams& p) {
  std::vector<double> w(static_cast<std::size_t>(p.window));
  const int half = p.window / 2;
  double sum = 0;
  for (int i = 0; i < p.window; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-double((i - half) * (i - half)) / (2 * p.sigma * p.sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

/// Single-channel plane, row-major.
struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0) {}
  double& operator()(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

template <typename Scalar>
Plane channel(const Image<Scalar>& img, int ch) {
  Plane p(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p(x, y) = static_cast<double>(img.at(x, y, ch));
  return p;
}

/// Window sums over in-bounds taps along one axis, for renormalized borders.
inline std::vector<double> border_norm(int n, const std::vector<double>& w) {
  const int half = static_cast<int>(w.size()) / 2;
  std::vector<double> z(static_cast<std::size_t>(n), 0.0);
  for (int p = 0; p < n; ++p)
    for (int k = -half; k <= half; ++k)
      if (p + k >= 0 && p + k < n) z[static_cast<std::size_t>(p)] += w[static_cast<std::size_t>(k + half)];
  return z;
}

/// Same-size filtering with weights renormalized over the in-bounds taps.
/// transpose=true applies the adjoint operator.
inline Plane filter_same(const Plane& in, const std::vector<double>& w, bool transpose) {
  const int half = static_cast<int>(w.size()) / 2;
  const auto zx = border_norm(in.w, w);
  const auto zy = border_norm(in.h, w);
  Plane src = in;
  if (transpose) {
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) src(x, y) /= zx[static_cast<std::size_t>(x)] * zy[static_cast<std::size_t>(y)];
  }
  Plane tmp(in.w, in.h);
  std::vector<double> padded(static_cast<std::size_t>(in.w + 2 * half), 0.0);
  for (int y = 0; y < in.h; ++y) {
    std::copy_n(&src.v[static_cast<std::size_t>(y) * in.w], in.w, padded.begin() + half);
    double* dst = &tmp.v[static_cast<std::size_t>(y) * in.w];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double wk = w[k];
      const double* p = padded.data() + k;
      for (int x = 0; x < in.w; ++x) dst[x] += wk * p[x];
    }
  }
  Plane out(in.w, in.h);
  std::vector<double> acc(static_cast<std::size_t>(in.w));
  for (int y = 0; y < in.h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const int k0 = std::max(-half, -y), k1 = std::min(half, in.h - 1 - y);
    for (int k = k0; k <= k1; ++k) {
      const double wk = w[static_cast<std::size_t>(k + half)];
      const double* row = &tmp.v[static_cast<std::size_t>(y + k) * in.w];
      for (int x = 0; x < in.w; ++x) acc[static_cast<std::size_t>(x)] += wk * row[x];
    }
    for (int x = 0; x < in.w; ++x) {
      const double a = acc[static_cast<std::size_t>(x)];
      out(x, y) = transpose ? a : a / (zx[static_cast<std::size_t>(x)] * zy[static_cast<std::size_t>(y)]);
    }
  }
  return out;
}

/// Valid-mode filtering: output (w - win + 1) x (h - win + 1).
inline Plane filter_valid(const Plane& in, const std::vector<double>& w) {
  const int win = static_cast<int>(w.size());
  const int ow = in.w - win + 1, oh = in.h - win + 1;
  Plane tmp(ow, in.h);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < win; ++k) acc += w[static_cast<std::size_t>(k)] * in(x + k, y);
      tmp(x, y) = acc;
    }
  Plane out(ow, oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < win; ++k) acc += w[static_cast<std::size_t>(k)] * tmp(x, y + k);
      out(x, y) = acc;
    }
  return out;
}

inline Plane multiply(const Plane& a, const Plane& b) {
  Plane out(a.w, a.h);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

struct SsimChannel {
  double ssim = 0;  // mean of the full SSIM map
  double cs = 0;    // mean of the contrast-structure map
  Plane grad;       // d(ssim)/d(x), only when requested
};

/// SSIM statistics of x against y. `same` renormalizes the window at the
/// borders and keeps the input size; otherwise valid-mode filtering.
inline SsimChannel ssim_channel(const Plane& x, const Plane& y, const SsimParams& p, bool same, bool want_grad) {
  const auto w = gaussian_window(p);
  const double c1 = (p.k1) * (p.k1), c2 = (p.k2) * (p.k2);
  auto filt = [&](const Plane& in) { return same ? filter_same(in, w, false) : filter_valid(in, w); };
  const Plane mx = filt(x), my = filt(y);
  const Plane exx = filt(multiply(x, x)), eyy = filt(multiply(y, y)), exy = filt(multiply(x, y));
  const std::size_t np = mx.v.size();
  SsimChannel out;
  Plane d_mx, d_exx, d_exy;
  if (want_grad) {
    d_mx = Plane(mx.w, mx.h);
    d_exx = Plane(mx.w, mx.h);
    d_exy = Plane(mx.w, mx.h);
  }
  double sum_s = 0, sum_cs = 0;
  for (std::size_t i = 0; i < np; ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double vx = exx.v[i] - ux * ux, vy = eyy.v[i] - uy * uy, cxy = exy.v[i] - ux * uy;
    const double a1 = 2 * ux * uy + c1, a2 = 2 * cxy + c2;
    const double b1 = ux * ux + uy * uy + c1, b2 = vx + vy + c2;
    const double s = (a1 * a2) / (b1 * b2);
    sum_s += s;
    sum_cs += a2 / b2;
    if (want_grad) {
      const double ds_da1 = a2 / (b1 * b2), ds_da2 = a1 / (b1 * b2);
      const double ds_db1 = -s / b1, ds_db2 = -s / b2;
      d_mx.v[i] = (ds_da1 * 2 * uy + ds_db1 * 2 * ux - ds_da2 * 2 * uy - ds_db2 * 2 * ux) / np;
      d_exx.v[i] = ds_db2 / np;
      d_exy.v[i] = 2 * ds_da2 / np;
    }
  }
  out.ssim = sum_s / np;
  out.cs = sum_cs / np;
  if (want_grad) {
    if (!same) throw std::logic_error("ssim_channel: gradient only available in same mode");
    const Plane g_mx = filter_same(d_mx, w, true);
    const Plane g_exx = filter_same(d_exx, w, true);
    const Plane g_exy = filter_same(d_exy, w, true);
    out.grad = Plane(x.w, x.h);
    for (std::size_t i = 0; i < out.grad.v.size(); ++i) {
      out.grad.v[i] = g_mx.v[i] + 2 * x.v[i] * g_exx.v[i] + y.v[i] * g_exy.v[i];
    }
  }
  return out;
}

inline Plane downsample2(const Plane& in) {
  Plane out(in.w / 2, in.h / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out(x, y) = 0.25 * (in(2 * x, 2 * y) + in(2 * x + 1, 2 * y) + in(2 * x, 2 * y + 1) + in(2 * x + 1, 2 * y + 1));
  return out;
}

}  // namespace detail

/// Mean SSIM over channels (Gaussian 11x11 window, sigma 1.5, borders
/// handled by renormalizing the window). Optional gradient w.r.t. `pred`.
template <typename Scalar>
double ssim(const Image<Scalar>& pred, const Image<Scalar>& truth, Image<Scalar>* grad = nullptr,
            const SsimParams& params = {}) {
  require_same_shape(pred, truth, "ssim");
  if (grad) *grad = Image<Scalar>(pred.width, pred.height);
  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    const auto res = detail::ssim_channel(detail::channel(pred, ch), detail::channel(truth, ch), params, true,
                                          grad != nullptr);
    total += res.ssim / 3.0;
    if (grad) {
      for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) grad->at(x, y, ch) = static_cast<Scalar>(res.grad(x, y) / 3.0);
    }
  }
  return total;
}

inline constexpr std::array<double, 5> kMsSsimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Levels usable for a given short side: each level needs >= window pixels.
inline int ms_ssim_levels(int short_side, int window = 11) {
  int levels = 0;
  while (levels < 5 && (short_side >> levels) >= window) ++levels;
  return levels;
}

/// Multi-scale SSIM (valid-mode windows, 2x2 average pyramid), averaged
/// over channels. Images too small for five levels use fewer, with the
/// leading standard weights renormalized to sum to one.
template <typename Scalar>
double ms_ssim(const Image<Scalar>& a, const Image<Scalar>& b, const SsimParams& params = {}) {
  require_same_shape(a, b, "ms_ssim");
  const int levels = ms_ssim_levels(std::min(a.width, a.height), params.window);
  if (levels == 0) throw std::invalid_argument("ms_ssim: image smaller than the SSIM window");
  double wsum = 0;
  for (int l = 0; l < levels; ++l) wsum += kMsSsimWeights[static_cast<std::size_t>(l)];
  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    detail::Plane x = detail::channel(a, ch), y = detail::channel(b, ch);
    double value = 1.0;
    for (int l = 0; l < levels; ++l) {
      const auto res = detail::ssim_channel(x, y, params, false, false);
      const double weight = kMsSsimWeights[static_cast<std::size_t>(l)] / wsum;
      const double term = (l + 1 == levels) ? res.ssim : res.cs;
      value *= std::pow(std::max(0.0, term), weight);
      if (l + 1 < levels) {
        x = detail::downsample2(x);
        y = detail::downsample2(y);
      }
    }
    total += value;
  }
  return total / 3.0;
}

/// Quantizes linear values to 8-bit sRGB codes and maps them back to [0, 1];
/// used when metrics should be reported on display-referred content.
template <typename Scalar>
Image<Scalar> to_srgb8_normalized(const Image<Scalar>& linear) {
  Image<Scalar> out = linear;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<Scalar>(encode_srgb8(static_cast<double>(linear.pixels[i])) / 255.0);
  }
  return out;
}

// --- Rate-distortion analysis ------------------------------------------------

struct RdPoint {
  double rate = 0;     // bpp or bytes
  double quality = 0;  // dB
};

/// Rate-distortion curve sorted by strictly increasing rate.
class RdCurve {
 public:
  RdCurve() = default;
  explicit RdCurve(std::vector<RdPoint> points);
  const std::vector<RdPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<RdPoint> points_;
};

struct BdResult {
  double bd_rate = 0;  // percent rate change of test vs anchor at equal quality
  double bd_psnr = 0;  // dB quality change of test vs anchor at equal rate
};

/// Bjontegaard deltas with monotone piecewise-cubic (PCHIP) interpolation in
/// (log10 rate, quality), integrated exactly over the overlapping range.
BdResult bd_metrics(const RdCurve& test, const RdCurve& anchor);

/// Monotone cubic Hermite interpolant (Fritsch-Carlson slopes).
class Pchip {
 public:
  Pchip(std::vector<double> x, std::vector<double> y);
  double operator()(double x) const;
  /// Exact integral over [lo, hi] within the data range.
  double integral(double lo, double hi) const;

 private:
  std::vector<double> x_, y_, d_;
};

/// 8 * bytes / (width * height * frames).
double bpp(std::uint64_t bytes, int width, int height, int frames);

}  // namespace d2gv
