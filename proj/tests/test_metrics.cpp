#include <doctest.h>

#include <cmath>
#include <random>

#include "d2gv/metrics.hpp"

using namespace d2gv;

namespace {

ImageD noise_image(int w, int h, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ImageD img(w, h);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels[i] = u(rng);
  return img;
}

ImageD smooth_image(int w, int h, double phase) {
  ImageD img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = 0.5 + 0.4 * std::sin(0.21 * x + 0.13 * y * (c + 1) + phase);
  return img;
}

// Direct 2D-window SSIM of one channel. `same` renormalizes the clipped
// window at borders, otherwise only fully covered positions count.
struct Stat {
  double ssim, cs;
};
Stat direct_ssim(const std::vector<double>& x, const std::vector<double>& y, int w, int h, bool same) {
  const int half = 5;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double ss = 0, cs = 0;
  int count = 0;
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      const bool full = px >= half && py >= half && px + half < w && py + half < h;
      if (!same && !full) continue;
      double wsum = 0, mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
          const int qx = px + dx, qy = py + dy;
          if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
          const double k = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          const double a = x[qy * w + qx], b = y[qy * w + qx];
          wsum += k;
          mx += k * a;
          my += k * b;
          xx += k * a * a;
          yy += k * b * b;
          xy += k * a * b;
        }
      mx /= wsum;
      my /= wsum;
      const double vx = xx / wsum - mx * mx, vy = yy / wsum - my * my, cxy = xy / wsum - mx * my;
      const double csv = (2 * cxy + c2) / (vx + vy + c2);
      ss += (2 * mx * my + c1) / (mx * mx + my * my + c1) * csv;
      cs += csv;
      ++count;
    }
  return {ss / count, cs / count};
}

std::vector<double> plane(const ImageD& img, int ch) {
  std::vector<double> p(static_cast<std::size_t>(img.width * img.height));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p[y * img.width + x] = img.at(x, y, ch);
  return p;
}

double reference_ms_ssim(const ImageD& a, const ImageD& b) {
  const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int levels = 0;
  for (int s = std::min(a.width, a.height); levels < 5 && s >= 11; s /= 2) ++levels;
  double wsum = 0;
  for (int l = 0; l < levels; ++l) wsum += weights[l];
  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    auto x = plane(a, ch), y = plane(b, ch);
    int w = a.width, h = a.height;
    double v = 1;
    for (int l = 0; l < levels; ++l) {
      const Stat st = direct_ssim(x, y, w, h, false);
      v *= std::pow(l + 1 == levels ? st.ssim : st.cs, weights[l] / wsum);
      const int w2 = w / 2, h2 = h / 2;
      std::vector<double> x2(w2 * h2), y2(w2 * h2);
      for (int j = 0; j < h2; ++j)
        for (int i = 0; i < w2; ++i) {
          auto avg = [&](const std::vector<double>& p) {
            return 0.25 * (p[2 * j * w + 2 * i] + p[2 * j * w + 2 * i + 1] + p[(2 * j + 1) * w + 2 * i] +
                           p[(2 * j + 1) * w + 2 * i + 1]);
          };
          x2[j * w2 + i] = avg(x);
          y2[j * w2 + i] = avg(y);
        }
      x = std::move(x2);
      y = std::move(y2);
      w = w2;
      h = h2;
    }
    total += v;
  }
  return total / 3;
}

}  // namespace

TEST_CASE("PSNR of a known error") {
  const ImageD a = ImageD::constant(8, 8, 0.5, 0.5, 0.5);
  const ImageD b = ImageD::constant(8, 8, 0.6, 0.6, 0.6);
  CHECK(psnr(a, b) == doctest::Approx(20.0));
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK_THROWS_AS(psnr(a, ImageD(4, 8)), std::invalid_argument);
}

TEST_CASE("SSIM matches a direct windowed sum") {
  const ImageD a = smooth_image(23, 19, 0.0);
  const ImageD b = noise_image(23, 19, 3, 0.2, 0.8);
  double ref = 0;
  for (int ch = 0; ch < 3; ++ch) ref += direct_ssim(plane(a, ch), plane(b, ch), 23, 19, true).ssim / 3;
  CHECK(ssim(a, b) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(ssim(a, a) == doctest::Approx(1.0));
}

TEST_CASE("SSIM gradient matches central differences") {
  ImageD a = noise_image(17, 14, 4);
  const ImageD b = noise_image(17, 14, 5);
  ImageD g;
  ssim(a, b, &g);
  const double eps = 1e-6;
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<Eigen::Index> pick(0, a.pixels.size() - 1);
  for (int trial = 0; trial < 60; ++trial) {
    const Eigen::Index i = trial < 4 ? trial : pick(rng);  // include a corner
    const double keep = a.pixels[i];
    a.pixels[i] = keep + eps;
    const double up = ssim(a, b);
    a.pixels[i] = keep - eps;
    const double dn = ssim(a, b);
    a.pixels[i] = keep;
    CHECK(g.pixels[i] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-5).scale(1e-6));
  }
}

TEST_CASE("MS-SSIM matches an independent implementation") {
  const ImageD a = smooth_image(96, 80, 0.0);
  ImageD b = smooth_image(96, 80, 0.3);
  b.pixels += 0.05 * noise_image(96, 80, 7).pixels;
  CHECK(ms_ssim(a, b) == doctest::Approx(reference_ms_ssim(a, b)).epsilon(1e-10));
  // 40 px supports only two levels
  const ImageD c = smooth_image(40, 44, 0.0), d = smooth_image(40, 44, 0.5);
  CHECK(ms_ssim_levels(40) == 2);
  CHECK(ms_ssim(c, d) == doctest::Approx(reference_ms_ssim(c, d)).epsilon(1e-10));
  CHECK(ms_ssim(a, a) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ms_ssim(ImageD(8, 8), ImageD(8, 8)), std::invalid_argument);
}

TEST_CASE("sRGB quantization round trip") {
  const ImageD a = smooth_image(9, 9, 0.1);
  const ImageD q = to_srgb8_normalized(a);
  for (Eigen::Index i = 0; i < q.pixels.size(); ++i) {
    const double code = q.pixels[i] * 255;
    CHECK(code == doctest::Approx(std::round(code)));
    CHECK(std::abs(q.pixels[i] - linear_to_srgb(a.pixels[i])) <= 0.5 / 255 + 1e-12);
  }
  CHECK(srgb_to_linear(linear_to_srgb(0.3)) == doctest::Approx(0.3));
}

TEST_CASE("PCHIP integral and monotonicity") {
  const Pchip p({0, 1, 2, 4}, {0, 1, 1.5, 1.6});
  for (double x = 0; x < 3.985; x += 0.01) CHECK(p(x + 0.01) >= p(x) - 1e-12);
  double num = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) num += p(0.5 + (i + 0.5) * 3.0 / n) * 3.0 / n;
  CHECK(p.integral(0.5, 3.5) == doctest::Approx(num).epsilon(1e-8));
  // linear data is reproduced exactly
  const Pchip lin({0, 1, 3}, {1, 3, 7});
  CHECK(lin(2.2) == doctest::Approx(5.4));
}

TEST_CASE("BD metrics on constructed curves") {
  const std::vector<double> rates = {0.05, 0.1, 0.2, 0.4, 0.8};
  std::vector<RdPoint> anchor, shifted, cheaper;
  for (double r : rates) {
    const double q = 25 + 4 * std::log2(r / 0.05) - 0.2 * std::pow(std::log2(r / 0.05), 2);
    anchor.push_back({r, q});
    shifted.push_back({r, q + 0.75});
    cheaper.push_back({r * 0.8, q});
  }
  const auto self = bd_metrics(RdCurve(anchor), RdCurve(anchor));
  CHECK(self.bd_rate == doctest::Approx(0.0).scale(1));
  CHECK(self.bd_psnr == doctest::Approx(0.0).scale(1));
  CHECK(bd_metrics(RdCurve(shifted), RdCurve(anchor)).bd_psnr == doctest::Approx(0.75));
  CHECK(bd_metrics(RdCurve(cheaper), RdCurve(anchor)).bd_rate == doctest::Approx(-20.0));
  CHECK(bd_metrics(RdCurve(anchor), RdCurve(cheaper)).bd_rate == doctest::Approx(25.0));
  CHECK_THROWS_AS(RdCurve({{0.1, 20}}), std::invalid_argument);
  CHECK_THROWS_AS(RdCurve({{0.1, 20}, {0.1, 21}}), std::invalid_argument);
}

TEST_CASE("bits per pixel") {
  CHECK(bpp(1000, 10, 10, 8) == doctest::Approx(10.0));
}
