#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "d2gv/deformation.hpp"

using namespace d2gv;
using Eigen::VectorXd;

namespace {

DeformConfig tiny(Dynamics dyn = Dynamics::ode, Integrator integ = Integrator::rk4) {
  DeformConfig c;
  c.latent_dim = 3;
  c.hidden = 5;
  c.spatial_bands = 2;
  c.temporal_bands = 2;
  c.steps_per_unit = 4;
  c.dynamics = dyn;
  c.integrator = integ;
  c.frame_width = 20;
  c.frame_height = 16;
  return c;
}

DeformationNet<double> random_net(const DeformConfig& cfg, std::uint64_t seed) {
  auto net = DeformationNet<double>::init(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0, 0.4);
  net.weights.for_each([&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  });
  return net;
}

std::vector<Gaussian2d> canon(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Gaussian2d> gs;
  for (int i = 0; i < n; ++i)
    gs.push_back(Gaussian2d::from_scales({u(rng) * 20, u(rng) * 16}, 1 + u(rng), 1 + u(rng), u(rng),
                                         {u(rng), u(rng), u(rng)}));
  return gs;
}

// gamma(v) written out directly: [v, sin(2^l pi v), cos(2^l pi v)] per band.
VectorXd gamma(const VectorXd& v, int bands) {
  VectorXd out(v.size() * (2 * bands + 1));
  Eigen::Index o = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) out[o++] = v[i];
  for (int l = 0; l < bands; ++l) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out[o++] = std::sin(std::ldexp(std::numbers::pi, l) * v[i]);
    for (Eigen::Index i = 0; i < v.size(); ++i) out[o++] = std::cos(std::ldexp(std::numbers::pi, l) * v[i]);
  }
  return out;
}

// Reference right-hand side f(t, s) for one center.
VectorXd rhs(const DeformationNet<double>& net, const Vec2<double>& mu, double t, const VectorXd& s) {
  const auto& c = net.config;
  const auto& w = net.weights;
  VectorXd v(2);
  v << mu.x() / c.frame_width, mu.y() / c.frame_height;
  VectorXd tv(1);
  tv << t;
  VectorXd in(c.dynamics_input_dim());
  in.head(c.spatial_dim()) = gamma(v, c.spatial_bands);
  in.segment(c.spatial_dim(), c.temporal_dim()) = gamma(tv, c.temporal_bands);
  if (c.dynamics == Dynamics::ode_state_conditioned) in.tail(c.latent_dim) = s;
  const VectorXd h = (w.w1 * in + w.b1).array().tanh().matrix();
  return w.w2 * h + w.b2;
}

// Textbook fixed-step RK4 / Euler from s(0) = 0.
VectorXd reference_state(const DeformationNet<double>& net, const Vec2<double>& mu, double t) {
  const auto& c = net.config;
  VectorXd s = VectorXd::Zero(c.latent_dim);
  if (c.dynamics == Dynamics::direct) return rhs(net, mu, t, s);
  const int steps = static_cast<int>(std::ceil(c.steps_per_unit * t - 1e-12));
  if (t <= 0) return s;
  const double h = t / steps;
  for (int i = 0; i < steps; ++i) {
    const double t0 = i * h;
    if (c.integrator == Integrator::euler) {
      s += h * rhs(net, mu, t0, s);
      continue;
    }
    const VectorXd k1 = rhs(net, mu, t0, s);
    const VectorXd k2 = rhs(net, mu, t0 + h / 2, s + h / 2 * k1);
    const VectorXd k3 = rhs(net, mu, t0 + h / 2, s + h / 2 * k2);
    const VectorXd k4 = rhs(net, mu, t0 + h, s + h * k3);
    s += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return s;
}

}  // namespace

TEST_CASE("positional encoding layout and sizes") {
  DeformConfig c;
  CHECK(c.spatial_dim() == 42);
  CHECK(c.temporal_dim() == 13);
  VectorXd v(2);
  v << 0.3, 0.8;
  CHECK((positional_encoding(v, 3) - gamma(v, 3)).norm() < 1e-15);
  CHECK_THROWS(positional_encoding(v, 0));
}

TEST_CASE("RK4 nodes integrate cubics exactly") {
  DeformConfig c = tiny();
  for (double t : {0.1, 0.37, 1.0}) {
    const auto nodes = integration_nodes(c, t);
    for (int p = 0; p <= 3; ++p) {
      double q = 0;
      for (const auto& n : nodes) q += n.weight * std::pow(n.time, p);
      CHECK(q == doctest::Approx(std::pow(t, p + 1) / (p + 1)).epsilon(1e-13));
    }
  }
  CHECK(integration_nodes(c, 0.0).empty());
  c.integrator = Integrator::euler;
  const auto e = integration_nodes(c, 1.0);
  CHECK(e.size() == 4);
  CHECK(e[3].time == doctest::Approx(0.75));
}

TEST_CASE("integrated state matches a textbook integrator") {
  const Vec2<double> mu(7.5, 3.25);
  for (auto dyn : {Dynamics::ode, Dynamics::ode_state_conditioned, Dynamics::direct}) {
    for (auto integ : {Integrator::rk4, Integrator::euler}) {
      const auto net = random_net(tiny(dyn, integ), 11);
      for (double t : {0.0, 0.3, 1.0}) {
        CAPTURE(static_cast<int>(dyn));
        CAPTURE(static_cast<int>(integ));
        CAPTURE(t);
        const VectorXd ref = reference_state(net, mu, t);
        CHECK((integrate_state(net, mu, t) - ref).norm() < 1e-12);
        CHECK((integrate_state(net, mu, t, true) - ref).norm() < 1e-12);
      }
    }
  }
}

TEST_CASE("fresh network is the identity on positions and halves colors") {
  const auto cfg = tiny();
  const auto net = DeformationNet<double>::init(cfg, 3);
  const auto gs = canon(4, 1);
  for (double t : {0.0, 0.6}) {
    const auto out = deform(net, gs, t);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      CHECK(out[i].mu == gs[i].mu);
      CHECK((out[i].color - 0.5 * gs[i].color).norm() < 1e-15);
      CHECK(out[i].log_sx == gs[i].log_sx);
      CHECK(out[i].theta == gs[i].theta);
    }
  }
}

TEST_CASE("ODE field starts at the canonical positions") {
  const auto net = random_net(tiny(), 5);
  const auto gs = canon(3, 2);
  const auto out = deform(net, gs, 0.0);
  for (std::size_t i = 0; i < gs.size(); ++i) {
    const Vec2<double> off(net.weights.bd[0] * 20, net.weights.bd[1] * 16);
    CHECK((out[i].mu - gs[i].mu - off).norm() < 1e-12);
  }
}

TEST_CASE("head switches") {
  auto cfg = tiny();
  cfg.use_dc = false;
  auto net = random_net(cfg, 8);
  const auto gs = canon(3, 4);
  const auto tape = deform_forward(net, std::span<const Gaussian2d>(gs), 0.5);
  auto out = apply_deformation(net, std::span<const Gaussian2d>(gs), tape);
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK((out[i].color - tape.gate[i] * gs[i].color).norm() < 1e-14);
  cfg.use_gate = false;
  net = random_net(cfg, 8);
  out = deform(net, gs, 0.5);
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK(out[i].color == gs[i].color);
}

TEST_CASE("backward matches central differences") {
  struct Case {
    Dynamics dyn;
    Integrator integ;
    bool dc, gate;
  };
  const Case cases[] = {{Dynamics::ode, Integrator::rk4, true, true},
                        {Dynamics::ode, Integrator::euler, true, false},
                        {Dynamics::ode_state_conditioned, Integrator::rk4, true, true},
                        {Dynamics::direct, Integrator::rk4, false, true}};
  for (const auto& cs : cases) {
    auto cfg = tiny(cs.dyn, cs.integ);
    cfg.use_dc = cs.dc;
    cfg.use_gate = cs.gate;
    auto net = random_net(cfg, 21);
    auto gs = canon(3, 9);
    const double t = 0.7;
    // L = sum of random weights times every deformed attribute
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    GradientBuffer<double> up(gs.size());
    for (auto& u : up) {
      u.d_mu = {nd(rng), nd(rng)};
      u.d_log_sx = nd(rng);
      u.d_log_sy = nd(rng);
      u.d_theta = nd(rng);
      u.d_color = {nd(rng), nd(rng), nd(rng)};
    }
    auto loss = [&] {
      const auto out = deform(net, gs, t);
      double l = 0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        l += up[i].d_mu.dot(out[i].mu) + up[i].d_log_sx * out[i].log_sx + up[i].d_log_sy * out[i].log_sy +
             up[i].d_theta * out[i].theta + up[i].d_color.dot(out[i].color);
      }
      return l;
    };
    const auto tape = deform_forward(net, std::span<const Gaussian2d>(gs), t);
    const auto g = deform_backward(net, std::span<const Gaussian2d>(gs), tape, up);
    const double eps = 1e-6;
    auto fd = [&](double& p) {
      const double keep = p;
      p = keep + eps;
      const double a = loss();
      p = keep - eps;
      const double b = loss();
      p = keep;
      return (a - b) / (2 * eps);
    };
    int checked = 0;
    auto compare = [&](auto& param, const auto& grad) {
      for (Eigen::Index i = 0; i < param.size(); ++i) {
        CHECK(grad.data()[i] == doctest::Approx(fd(param.data()[i])).epsilon(1e-6).scale(1e-3));
        ++checked;
      }
    };
    compare(net.weights.w1, g.net.w1);
    compare(net.weights.b1, g.net.b1);
    compare(net.weights.w2, g.net.w2);
    compare(net.weights.b2, g.net.b2);
    compare(net.weights.wd, g.net.wd);
    compare(net.weights.bd, g.net.bd);
    compare(net.weights.wg, g.net.wg);
    compare(net.weights.bg, g.net.bg);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      CHECK(g.canonical[i].d_mu.x() == doctest::Approx(fd(gs[i].mu.x())).epsilon(1e-6));
      CHECK(g.canonical[i].d_mu.y() == doctest::Approx(fd(gs[i].mu.y())).epsilon(1e-6));
      CHECK(g.canonical[i].d_log_sx == doctest::Approx(fd(gs[i].log_sx)));
      CHECK(g.canonical[i].d_theta == doctest::Approx(fd(gs[i].theta)));
      for (int c = 0; c < 3; ++c) CHECK(g.canonical[i].d_color[c] == doctest::Approx(fd(gs[i].color[c])));
    }
    CHECK(checked == static_cast<int>(net.param_count()));
  }
}

TEST_CASE("parameter count of the default field") {
  DeformConfig c;
  // w1 156 x 55, b1, w2 32 x 156, b2, head 5 x 32 + 5, gate 55 + 1
  const std::size_t expected = 156 * 55 + 156 + 32 * 156 + 32 + 5 * 32 + 5 + 55 + 1;
  CHECK(DeformationNet<double>::init(c, 0).param_count() == expected);
  c.dynamics = Dynamics::ode_state_conditioned;
  CHECK(DeformationNet<double>::init(c, 0).param_count() == expected + 156 * 32);
}

TEST_CASE("fast_tanh agrees with std::tanh") {
  Eigen::ArrayXd x = Eigen::ArrayXd::LinSpaced(2001, -30, 30);
  const Eigen::ArrayXd a = fast_tanh(x);
  CHECK((a - x.tanh()).abs().maxCoeff() < 1e-15);
}

TEST_CASE("config validation") {
  DeformConfig c = tiny();
  c.hidden = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
