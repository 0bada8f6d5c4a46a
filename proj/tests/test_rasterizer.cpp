#include <doctest.h>

#include <random>

#include "d2gv/parallel.hpp"
#include "d2gv/rasterizer.hpp"

using namespace d2gv;

namespace {

std::vector<Gaussian2d> random_set(int n, int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Gaussian2d> gs;
  for (int i = 0; i < n; ++i) {
    gs.push_back(Gaussian2d::from_scales({u(rng) * w, u(rng) * h}, 0.6 + 3 * u(rng), 0.6 + 3 * u(rng),
                                         u(rng) * 3.14, {u(rng), u(rng) - 0.3, u(rng)}));
  }
  return gs;
}

// Direct per-pixel sum with no cutoff.
ImageD naive_render(const std::vector<Gaussian2d>& gs, int w, int h, double r) {
  ImageD img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (const auto& g : gs) {
        const double k = kernel_eval(g, Vec2<double>((x + 0.5) * r, (y + 0.5) * r));
        for (int c = 0; c < 3; ++c) img.at(x, y, c) += k * g.color[c];
      }
  return img;
}

double weighted_sum(const ImageD& img, const ImageD& w) { return (img.pixels * w.pixels).sum(); }

}  // namespace

TEST_CASE("render matches a direct sum up to the cutoff tail") {
  const auto gs = random_set(25, 37, 29, 1);
  RasterOptions wide;
  wide.cutoff = 12;
  const ImageD ref = naive_render(gs, 37, 29, 1.0);
  CHECK((render(gs, 37, 29, 1.0, wide).pixels - ref.pixels).abs().maxCoeff() < 1e-12);
  // default cutoff drops at most exp(-3.5^2/2) of each peak
  const double tail = std::exp(-0.5 * 3.5 * 3.5) * 25;
  CHECK((render(gs, 37, 29).pixels - ref.pixels).abs().maxCoeff() < tail);
}

TEST_CASE("render at a downsample factor samples (p + 0.5) r") {
  const auto gs = random_set(10, 40, 40, 2);
  RasterOptions wide;
  wide.cutoff = 12;
  const ImageD img = render_at_scale(std::span<const Gaussian2d>(gs), 40, 40, 3.0, wide);
  CHECK(img.width == 14);
  CHECK(img.height == 14);
  CHECK((img.pixels - naive_render(gs, 14, 14, 3.0).pixels).abs().maxCoeff() < 1e-12);
}

TEST_CASE("output is identical for any thread count and tile size") {
  const auto gs = random_set(60, 50, 45, 3);
  RasterOptions a, b, c;
  a.threads = 1;
  b.threads = 4;
  c.threads = 3;
  c.tile_size = 7;
  const ImageD ia = render(gs, 50, 45, 1.0, a);
  CHECK((ia.pixels == render(gs, 50, 45, 1.0, b).pixels).all());
  CHECK((ia.pixels == render(gs, 50, 45, 1.0, c).pixels).all());

  ImageD w(50, 45);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (Eigen::Index i = 0; i < w.pixels.size(); ++i) w.pixels[i] = n(rng);
  const auto ga = render_backward(gs, w, 50, 45, 1.0, a);
  const auto gb = render_backward(gs, w, 50, 45, 1.0, b);
  for (std::size_t i = 0; i < gs.size(); ++i) {
    CHECK(ga[i].d_mu == gb[i].d_mu);
    CHECK(ga[i].d_theta == gb[i].d_theta);
    CHECK(ga[i].d_color == gb[i].d_color);
  }
}

TEST_CASE("backward matches central differences") {
  for (double r : {1.0, 2.5}) {
    CAPTURE(r);
    auto gs = random_set(6, 20, 18, 4);
    const int w = scaled_extent(20, r), h = scaled_extent(18, r);
    RasterOptions opts;
    opts.cutoff = 10;
    ImageD wt(w, h);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    for (Eigen::Index i = 0; i < wt.pixels.size(); ++i) wt.pixels[i] = n(rng);
    const auto grad = render_backward(gs, wt, w, h, r, opts);
    auto loss = [&] { return weighted_sum(render(gs, w, h, r, opts), wt); };
    const double eps = 1e-6;
    auto fd = [&](double& p) {
      const double keep = p;
      p = keep + eps;
      const double up = loss();
      p = keep - eps;
      const double dn = loss();
      p = keep;
      return (up - dn) / (2 * eps);
    };
    for (std::size_t i = 0; i < gs.size(); ++i) {
      auto& g = gs[i];
      CHECK(grad[i].d_mu.x() == doctest::Approx(fd(g.mu.x())).epsilon(1e-6));
      CHECK(grad[i].d_mu.y() == doctest::Approx(fd(g.mu.y())).epsilon(1e-6));
      CHECK(grad[i].d_log_sx == doctest::Approx(fd(g.log_sx)).epsilon(1e-6));
      CHECK(grad[i].d_log_sy == doctest::Approx(fd(g.log_sy)).epsilon(1e-6));
      CHECK(grad[i].d_theta == doctest::Approx(fd(g.theta)).epsilon(1e-6));
      for (int c = 0; c < 3; ++c) CHECK(grad[i].d_color[c] == doctest::Approx(fd(g.color[c])).epsilon(1e-6));
    }
  }
}

TEST_CASE("empty set and off-screen primitives give a black frame") {
  std::vector<Gaussian2d> none;
  CHECK(render(none, 8, 8).pixels.abs().maxCoeff() == 0.0);
  std::vector<Gaussian2d> far = {Gaussian2d::from_scales({-100, -100}, 1, 1, 0, {1, 1, 1})};
  CHECK(render(far, 8, 8).pixels.abs().maxCoeff() == 0.0);
}

TEST_CASE("invalid dimensions are rejected") {
  std::vector<Gaussian2d> gs = random_set(2, 8, 8, 6);
  CHECK_THROWS_AS(render(gs, 0, 8), std::invalid_argument);
  CHECK_THROWS_AS(render(gs, 8, 8, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(render_at_scale(std::span<const Gaussian2d>(gs), 8, 8, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(render_backward(gs, ImageD(4, 4), 8, 8), std::invalid_argument);
}

TEST_CASE("float instantiation tracks double") {
  const auto gs = random_set(15, 24, 24, 7);
  std::vector<Gaussian2f> gf;
  for (const auto& g : gs) gf.push_back(g.cast<float>());
  const auto a = render(gs, 24, 24);
  const auto b = render(gf, 24, 24);
  CHECK((a.pixels - b.pixels.cast<double>()).abs().maxCoeff() < 1e-4);
}
