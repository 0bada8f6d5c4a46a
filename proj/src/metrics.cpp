#include "d2gv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace d2gv {

RdCurve::RdCurve(std::vector<RdPoint> points) : points_(std::move(points)) {
  std::sort(points_.begin(), points_.end(), [](const RdPoint& a, const RdPoint& b) { return a.rate < b.rate; });
  if (points_.size() < 2) throw std::invalid_argument("RdCurve: need at least 2 points");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!(points_[i].rate > 0) || !std::isfinite(points_[i].rate) || !std::isfinite(points_[i].quality)) {
      throw std::invalid_argument("RdCurve: rates must be positive and qualities finite");
    }
    if (i > 0 && !(points_[i].rate > points_[i - 1].rate)) {
      throw std::invalid_argument("RdCurve: rates must be strictly increasing");
    }
  }
}

namespace {

double pchip_end_slope(double h0, double h1, double m0, double m1) {
  // three-point end condition, limited to keep the interpolant monotone
  double d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
  if (std::signbit(d) != std::signbit(m0)) {
    d = 0;
  } else if (std::signbit(m0) != std::signbit(m1) && std::abs(d) > std::abs(3 * m0)) {
    d = 3 * m0;
  }
  return d;
}

}  // namespace

Pchip::Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
  const std::size_t n = x_.size();
  if (n < 2 || y_.size() != n) throw std::invalid_argument("Pchip: need >= 2 matching samples");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(x_[i] > x_[i - 1])) throw std::invalid_argument("Pchip: abscissae must be strictly increasing");
  }
  std::vector<double> h(n - 1), m(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = x_[i + 1] - x_[i];
    m[i] = (y_[i + 1] - y_[i]) / h[i];
  }
  d_.assign(n, 0.0);
  if (n == 2) {
    d_[0] = d_[1] = m[0];
    return;
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (m[i - 1] * m[i] <= 0) {
      d_[i] = 0;
    } else {
      const double w1 = 2 * h[i] + h[i - 1];
      const double w2 = h[i] + 2 * h[i - 1];
      d_[i] = (w1 + w2) / (w1 / m[i - 1] + w2 / m[i]);
    }
  }
  d_[0] = pchip_end_slope(h[0], h[1], m[0], m[1]);
  d_[n - 1] = pchip_end_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
}

double Pchip::operator()(double x) const {
  const std::size_t n = x_.size();
  std::size_t k = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin());
  k = std::clamp<std::size_t>(k, 1, n - 1) - 1;
  const double h = x_[k + 1] - x_[k];
  const double s = (x - x_[k]) / h;
  const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
  const double h10 = s * (1 - s) * (1 - s);
  const double h01 = s * s * (3 - 2 * s);
  const double h11 = s * s * (s - 1);
  return h00 * y_[k] + h10 * h * d_[k] + h01 * y_[k + 1] + h11 * h * d_[k + 1];
}

double Pchip::integral(double lo, double hi) const {
  if (hi < lo) return -integral(hi, lo);
  // antiderivatives of the Hermite basis on the unit interval
  auto prim = [](double s, double y0, double y1, double t0, double t1) {
    const double s2 = s * s, s3 = s2 * s, s4 = s3 * s;
    return y0 * (s4 / 2 - s3 + s) + t0 * (s4 / 4 - 2 * s3 / 3 + s2 / 2) + y1 * (-s4 / 2 + s3) + t1 * (s4 / 4 - s3 / 3);
  };
  double total = 0;
  for (std::size_t k = 0; k + 1 < x_.size(); ++k) {
    const double a = std::max(lo, x_[k]);
    const double b = std::min(hi, x_[k + 1]);
    if (b <= a) continue;
    const double h = x_[k + 1] - x_[k];
    const double sa = (a - x_[k]) / h, sb = (b - x_[k]) / h;
    const double t0 = h * d_[k], t1 = h * d_[k + 1];
    total += h * (prim(sb, y_[k], y_[k + 1], t0, t1) - prim(sa, y_[k], y_[k + 1], t0, t1));
  }
  return total;
}

namespace {

struct Series {
  std::vector<double> x, y;
};

/// Points as (key, value) sorted by key; equal keys are merged by averaging.
Series make_series(const RdCurve& c, bool rate_as_x) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : c.points()) {
    const double lr = std::log10(p.rate);
    pts.emplace_back(rate_as_x ? lr : p.quality, rate_as_x ? p.quality : lr);
  }
  std::sort(pts.begin(), pts.end());
  Series s;
  for (std::size_t i = 0; i < pts.size();) {
    std::size_t j = i;
    double acc = 0;
    while (j < pts.size() && pts[j].first == pts[i].first) acc += pts[j++].second;
    s.x.push_back(pts[i].first);
    s.y.push_back(acc / static_cast<double>(j - i));
    i = j;
  }
  return s;
}

double mean_difference(const Series& test, const Series& anchor) {
  if (test.x.size() < 2 || anchor.x.size() < 2) throw std::invalid_argument("bd_metrics: degenerate curve");
  const double lo = std::max(test.x.front(), anchor.x.front());
  const double hi = std::min(test.x.back(), anchor.x.back());
  if (!(hi > lo)) throw std::invalid_argument("bd_metrics: curves do not overlap");
  const Pchip pt(test.x, test.y), pa(anchor.x, anchor.y);
  return (pt.integral(lo, hi) - pa.integral(lo, hi)) / (hi - lo);
}

}  // namespace

BdResult bd_metrics(const RdCurve& test, const RdCurve& anchor) {
  if (test.size() < 4 || anchor.size() < 4) throw std::invalid_argument("bd_metrics: need at least 4 points per curve");
  BdResult out;
  out.bd_psnr = mean_difference(make_series(test, true), make_series(anchor, true));
  const double log_rate_diff = mean_difference(make_series(test, false), make_series(anchor, false));
  out.bd_rate = (std::pow(10.0, log_rate_diff) - 1.0) * 100.0;
  return out;
}

double bpp(std::uint64_t bytes, int width, int height, int frames) {
  if (width <= 0 || height <= 0 || frames <= 0) throw std::invalid_argument("bpp: dimensions must be positive");
  return 8.0 * static_cast<double>(bytes) / (static_cast<double>(width) * height * frames);
}

}  // namespace d2gv
