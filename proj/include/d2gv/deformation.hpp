#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "d2gv/gaussian.hpp"
#include "d2gv/parallel.hpp"
#include "d2gv/rasterizer.hpp"

namespace d2gv {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Integrator : std::uint8_t { euler = 0, rk4 = 1 };

enum class Dynamics : std::uint8_t {
  ode = 0,                    // ds/dt = MLP(gamma(mu), gamma(t))
  ode_state_conditioned = 1,  // ds/dt = MLP(gamma(mu), gamma(t), s)
  direct = 2,                 // s(t) = MLP(gamma(mu), gamma(t)); per-timestamp offsets, no integration
};

struct DeformConfig {
  int latent_dim = 32;
  int hidden = 156;
  int spatial_bands = 10;
  int temporal_bands = 6;
  Integrator integrator = Integrator::rk4;
  int steps_per_unit = 4;
  Dynamics dynamics = Dynamics::ode;
  bool use_dc = true;
  bool use_gate = true;
  /// Full-resolution frame size; centers are normalized by it before
  /// encoding and position offsets are decoded in the same units.
  int frame_width = 1;
  int frame_height = 1;

  int spatial_dim() const { return 2 * (2 * spatial_bands + 1); }
  int temporal_dim() const { return 2 * temporal_bands + 1; }
  int dynamics_input_dim() const {
    return spatial_dim() + temporal_dim() + (dynamics == Dynamics::ode_state_conditioned ? latent_dim : 0);
  }
  int gate_input_dim() const { return spatial_dim() + temporal_dim(); }

  void validate() const {
    if (latent_dim < 1 || hidden < 1 || spatial_bands < 1 || temporal_bands < 1 || steps_per_unit < 1 ||
        frame_width < 1 || frame_height < 1) {
      throw std::invalid_argument("DeformConfig: dimensions, band counts and step count must be >= 1");
    }
  }
};

/// Trainable tensors of the deformation field. Also used as the gradient
/// accumulator, so every field has a "zeros like" form.
template <typename Scalar = double>
struct NetWeights {
  MatX<Scalar> w1;  // hidden x dynamics_input
  VecX<Scalar> b1;
  MatX<Scalar> w2;  // latent x hidden
  VecX<Scalar> b2;
  MatX<Scalar> wd;  // 5 x latent: (dmu_x, dmu_y, dc_r, dc_g, dc_b)
  VecX<Scalar> bd;
  VecX<Scalar> wg;  // gate_input
  VecX<Scalar> bg;  // size 1

  static NetWeights zeros(const DeformConfig& cfg) {
    NetWeights w;
    w.w1 = MatX<Scalar>::Zero(cfg.hidden, cfg.dynamics_input_dim());
    w.b1 = VecX<Scalar>::Zero(cfg.hidden);
    w.w2 = MatX<Scalar>::Zero(cfg.latent_dim, cfg.hidden);
    w.b2 = VecX<Scalar>::Zero(cfg.latent_dim);
    w.wd = MatX<Scalar>::Zero(5, cfg.latent_dim);
    w.bd = VecX<Scalar>::Zero(5);
    w.wg = VecX<Scalar>::Zero(cfg.gate_input_dim());
    w.bg = VecX<Scalar>::Zero(1);
    return w;
  }

  /// Visits every tensor as a flat array, in serialization order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(w1);
    fn(b1);
    fn(w2);
    fn(b2);
    fn(wd);
    fn(bd);
    fn(wg);
    fn(bg);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    fn(w1);
    fn(b1);
    fn(w2);
    fn(b2);
    fn(wd);
    fn(bd);
    fn(wg);
    fn(bg);
  }

  std::size_t size() const {
    std::size_t n = 0;
    for_each([&](const auto& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  NetWeights& operator+=(const NetWeights& o) {
    w1 += o.w1;
    b1 += o.b1;
    w2 += o.w2;
    b2 += o.b2;
    wd += o.wd;
    bd += o.bd;
    wg += o.wg;
    bg += o.bg;
    return *this;
  }

  bool finite() const {
    bool ok = true;
    for_each([&](const auto& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

template <typename Scalar = double>
struct DeformationNet {
  DeformConfig config;
  NetWeights<Scalar> weights;

  /// Random dynamics MLP; decode head and gate start at zero so the field
  /// initially leaves positions untouched and gates every color by 1/2.
  static DeformationNet init(const DeformConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DeformationNet net{cfg, NetWeights<Scalar>::zeros(cfg)};
    std::mt19937_64 rng(seed);
    const Scalar a1 = Scalar(1) / std::sqrt(static_cast<Scalar>(cfg.dynamics_input_dim()));
    const Scalar a2 = Scalar(1) / std::sqrt(static_cast<Scalar>(cfg.hidden));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Eigen::Index i = 0; i < net.weights.w1.size(); ++i) net.weights.w1.data()[i] = a1 * Scalar(u(rng));
    for (Eigen::Index i = 0; i < net.weights.b1.size(); ++i) net.weights.b1[i] = a1 * Scalar(u(rng));
    for (Eigen::Index i = 0; i < net.weights.w2.size(); ++i) net.weights.w2.data()[i] = a2 * Scalar(u(rng));
    return net;
  }

  std::size_t param_count() const { return weights.size(); }
};

/// Elementwise tanh as 1 - 2 / (exp(2x) + 1); Eigen vectorizes exp but not
/// tanh for double. Absolute error stays at rounding level.
template <typename Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return Scalar(1) - Scalar(2) / ((Scalar(2) * x).exp() + Scalar(1));
}

/// Per-primitive latent state s(t).
template <typename Scalar>
using LatentState = VecX<Scalar>;

/// [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)],
/// each block elementwise over v; length k * (2L + 1).
template <typename Scalar>
VecX<Scalar> positional_encoding(const VecX<Scalar>& v, int bands) {
  if (bands < 1) throw std::invalid_argument("positional_encoding: bands must be >= 1");
  const Eigen::Index k = v.size();
  VecX<Scalar> out(k * (2 * bands + 1));
  out.head(k) = v;
  Scalar freq = std::numbers::pi_v<Scalar>;
  for (int l = 0; l < bands; ++l, freq *= 2) {
    for (Eigen::Index i = 0; i < k; ++i) {
      out[k + 2 * l * k + i] = std::sin(freq * v[i]);
      out[k + (2 * l + 1) * k + i] = std::cos(freq * v[i]);
    }
  }
  return out;
}

/// Integration nodes for the state-free right-hand side: s(t) = sum w_k f(t_k).
/// For RK4 the two midpoint stages coincide, giving Simpson weights per step.
template <typename Scalar>
struct QuadratureNode {
  Scalar time;
  Scalar weight;
};

inline int integration_steps(int steps_per_unit, double t) {
  return t <= 0 ? 0 : static_cast<int>(std::ceil(steps_per_unit * t - 1e-12));
}

template <typename Scalar>
std::vector<QuadratureNode<Scalar>> integration_nodes(const DeformConfig& cfg, Scalar t) {
  std::vector<QuadratureNode<Scalar>> nodes;
  if (cfg.dynamics == Dynamics::direct) {
    nodes.push_back({t, Scalar(1)});
    return nodes;
  }
  const int steps = integration_steps(cfg.steps_per_unit, static_cast<double>(t));
  if (steps == 0) return nodes;
  const Scalar h = t / steps;
  if (cfg.integrator == Integrator::euler) {
    for (int i = 0; i < steps; ++i) nodes.push_back({i * h, h});
    return nodes;
  }
  nodes.push_back({Scalar(0), h / 6});
  for (int i = 0; i < steps; ++i) {
    nodes.push_back({i * h + h / 2, 4 * h / 6});
    const Scalar end = (i + 1 == steps) ? t : (i + 1) * h;
    nodes.push_back({end, (i + 1 == steps) ? h / 6 : 2 * h / 6});
  }
  return nodes;
}

namespace detail {

template <typename Scalar>
struct Tableau {
  std::vector<Scalar> c;
  std::vector<std::vector<Scalar>> a;  // a[i][j], j < i
  std::vector<Scalar> b;
};

template <typename Scalar>
Tableau<Scalar> tableau(Integrator integ) {
  if (integ == Integrator::euler) return {{0}, {{}}, {1}};
  return {{0, Scalar(0.5), Scalar(0.5), 1},
          {{}, {Scalar(0.5)}, {0, Scalar(0.5)}, {0, 0, 1}},
          {Scalar(1) / 6, Scalar(1) / 3, Scalar(1) / 3, Scalar(1) / 6}};
}

/// Spatial encodings of normalized centers, one column per primitive.
template <typename Scalar>
MatX<Scalar> encode_centers(const DeformConfig& cfg, std::span<const Gaussian2<Scalar>> gs) {
  MatX<Scalar> enc(cfg.spatial_dim(), static_cast<Eigen::Index>(gs.size()));
  for (std::size_t n = 0; n < gs.size(); ++n) {
    VecX<Scalar> v(2);
    v << gs[n].mu.x() / cfg.frame_width, gs[n].mu.y() / cfg.frame_height;
    enc.col(static_cast<Eigen::Index>(n)) = positional_encoding(v, cfg.spatial_bands);
  }
  return enc;
}

template <typename Scalar>
VecX<Scalar> encode_time(const DeformConfig& cfg, Scalar t) {
  VecX<Scalar> v(1);
  v << t;
  return positional_encoding(v, cfg.temporal_bands);
}

/// d(loss)/d(mu) given d(loss)/d(encoding) for one normalized center.
template <typename Scalar>
Vec2<Scalar> encoding_backward(const DeformConfig& cfg, const Vec2<Scalar>& mu, const VecX<Scalar>& d_enc) {
  const Scalar inv[2] = {Scalar(1) / cfg.frame_width, Scalar(1) / cfg.frame_height};
  const Scalar v[2] = {mu.x() * inv[0], mu.y() * inv[1]};
  Vec2<Scalar> out(d_enc[0] * inv[0], d_enc[1] * inv[1]);
  Scalar freq = std::numbers::pi_v<Scalar>;
  for (int l = 0; l < cfg.spatial_bands; ++l, freq *= 2) {
    for (int i = 0; i < 2; ++i) {
      const Scalar ds = d_enc[2 + 4 * l + i];
      const Scalar dc = d_enc[2 + 4 * l + 2 + i];
      out[i] += (ds * std::cos(freq * v[i]) - dc * std::sin(freq * v[i])) * freq * inv[i];
    }
  }
  return out;
}

}  // namespace detail

/// Everything deform_backward needs from the forward pass.
template <typename Scalar>
struct DeformTape {
  Scalar t = 0;
  MatX<Scalar> spatial;          // spatial_dim x N
  VecX<Scalar> temporal;         // temporal encoding at t
  MatX<Scalar> hidden_spatial;   // W1_mu * spatial (hidden x N)
  MatX<Scalar> state;            // latent x N, s(t)
  MatX<Scalar> decoded;          // 5 x N
  VecX<Scalar> gate;             // N
  // stepwise integration: per stage, stage input and activation
  std::vector<MatX<Scalar>> stage_inputs;
  std::vector<MatX<Scalar>> stage_acts;
  // quadrature integration: activation at each node and their weighted sum
  std::vector<MatX<Scalar>> node_acts;
  MatX<Scalar> node_sum;
};

namespace detail {

template <typename Scalar>
void integrate_quadrature(const DeformationNet<Scalar>& net, DeformTape<Scalar>& tape) {
  const auto& cfg = net.config;
  const auto& w = net.weights;
  const auto nodes = integration_nodes(cfg, tape.t);
  const Eigen::Index n = tape.hidden_spatial.cols();
  MatX<Scalar> acc = MatX<Scalar>::Zero(cfg.hidden, n);
  Scalar wsum = 0;
  tape.node_acts.clear();
  for (const auto& node : nodes) {
    const VecX<Scalar> u = w.w1.middleCols(cfg.spatial_dim(), cfg.temporal_dim()) * encode_time(cfg, node.time) + w.b1;
    // materialized first: a broadcast inside the exp expression blocks vectorization
    MatX<Scalar> act = tape.hidden_spatial.colwise() + u;
    act = fast_tanh(act.array()).matrix();
    acc.noalias() += node.weight * act;
    wsum += node.weight;
    tape.node_acts.push_back(std::move(act));
  }
  tape.state = w.w2 * acc;
  tape.state.colwise() += wsum * w.b2;
  tape.node_sum = std::move(acc);
}

template <typename Scalar>
void integrate_stepwise(const DeformationNet<Scalar>& net, DeformTape<Scalar>& tape) {
  const auto& cfg = net.config;
  const auto& w = net.weights;
  const Eigen::Index n = tape.hidden_spatial.cols();
  const bool conditioned = cfg.dynamics == Dynamics::ode_state_conditioned;
  const int sd = cfg.spatial_dim(), td = cfg.temporal_dim();
  tape.stage_inputs.clear();
  tape.stage_acts.clear();
  MatX<Scalar> s = MatX<Scalar>::Zero(cfg.latent_dim, n);
  const int steps = integration_steps(cfg.steps_per_unit, static_cast<double>(tape.t));
  const auto tab = tableau<Scalar>(cfg.integrator);
  const std::size_t stages = tab.b.size();
  for (int step = 0; step < steps; ++step) {
    const Scalar h = tape.t / steps;
    const Scalar t0 = step * h;
    std::vector<MatX<Scalar>> k(stages);
    for (std::size_t i = 0; i < stages; ++i) {
      MatX<Scalar> s_in = s;
      for (std::size_t j = 0; j < i; ++j) {
        if (tab.a[i][j] != 0) s_in.noalias() += h * tab.a[i][j] * k[j];
      }
      const VecX<Scalar> u = w.w1.middleCols(sd, td) * encode_time(cfg, t0 + tab.c[i] * h) + w.b1;
      MatX<Scalar> pre = tape.hidden_spatial.colwise() + u;
      if (conditioned) pre.noalias() += w.w1.rightCols(cfg.latent_dim) * s_in;
      MatX<Scalar> act = fast_tanh(pre.array()).matrix();
      k[i] = w.w2 * act;
      k[i].colwise() += w.b2;
      tape.stage_inputs.push_back(std::move(s_in));
      tape.stage_acts.push_back(std::move(act));
    }
    for (std::size_t i = 0; i < stages; ++i) s.noalias() += h * tab.b[i] * k[i];
  }
  tape.state = std::move(s);
}

}  // namespace detail

/// Forward pass for a whole canonical set at normalized time t.
/// `stepwise` forces explicit stage-by-stage integration even when the
/// right-hand side is state-free (the two routes agree to rounding).
template <typename Scalar>
DeformTape<Scalar> deform_forward(const DeformationNet<Scalar>& net, std::span<const Gaussian2<Scalar>> canonical,
                                  Scalar t, bool stepwise = false) {
  const auto& cfg = net.config;
  const auto& w = net.weights;
  DeformTape<Scalar> tape;
  tape.t = t;
  tape.spatial = detail::encode_centers(cfg, canonical);
  tape.temporal = detail::encode_time(cfg, t);
  tape.hidden_spatial = w.w1.leftCols(cfg.spatial_dim()) * tape.spatial;
  if (cfg.dynamics == Dynamics::ode_state_conditioned || (stepwise && cfg.dynamics == Dynamics::ode)) {
    detail::integrate_stepwise(net, tape);
  } else {
    detail::integrate_quadrature(net, tape);
  }
  tape.decoded = w.wd * tape.state;
  tape.decoded.colwise() += w.bd;
  const Eigen::Index n = static_cast<Eigen::Index>(canonical.size());
  tape.gate = VecX<Scalar>::Ones(n);
  if (cfg.use_gate) {
    const Scalar zt = w.wg.tail(cfg.temporal_dim()).dot(tape.temporal) + w.bg[0];
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar z = w.wg.head(cfg.spatial_dim()).dot(tape.spatial.col(i)) + zt;
      tape.gate[i] = Scalar(1) / (Scalar(1) + std::exp(-z));
    }
  }
  return tape;
}

/// Applies decoded offsets: mu' = mu + dmu, c' = o_t (c + dc). Scales and
/// rotation are copied untouched.
template <typename Scalar>
std::vector<Gaussian2<Scalar>> apply_deformation(const DeformationNet<Scalar>& net,
                                                 std::span<const Gaussian2<Scalar>> canonical,
                                                 const DeformTape<Scalar>& tape) {
  const auto& cfg = net.config;
  std::vector<Gaussian2<Scalar>> out(canonical.begin(), canonical.end());
  for (std::size_t n = 0; n < out.size(); ++n) {
    const auto col = tape.decoded.col(static_cast<Eigen::Index>(n));
    out[n].mu.x() += col[0] * cfg.frame_width;
    out[n].mu.y() += col[1] * cfg.frame_height;
    Vec3<Scalar> c = canonical[n].color;
    if (cfg.use_dc) c += col.template tail<3>();
    out[n].color = tape.gate[static_cast<Eigen::Index>(n)] * c;
  }
  return out;
}

template <typename Scalar>
std::vector<Gaussian2<Scalar>> deform(const DeformationNet<Scalar>& net, std::span<const Gaussian2<Scalar>> canonical,
                                      Scalar t) {
  const auto tape = deform_forward(net, canonical, t);
  return apply_deformation(net, canonical, tape);
}

template <typename Scalar>
std::vector<Gaussian2<Scalar>> deform(const DeformationNet<Scalar>& net, const std::vector<Gaussian2<Scalar>>& canonical,
                                      Scalar t) {
  return deform(net, std::span<const Gaussian2<Scalar>>(canonical), t);
}

/// Latent state s(t) of a single primitive integrated from s(0) = 0.
template <typename Scalar>
LatentState<Scalar> integrate_state(const DeformationNet<Scalar>& net, const Vec2<Scalar>& mu0, Scalar t,
                                    bool stepwise = false) {
  Gaussian2<Scalar> g;
  g.mu = mu0;
  const auto tape = deform_forward(net, std::span<const Gaussian2<Scalar>>(&g, 1), t, stepwise);
  return tape.state.col(0);
}

template <typename Scalar>
struct DeformGradients {
  NetWeights<Scalar> net;
  GradientBuffer<Scalar> canonical;
};

/// Reverse pass of deform() given dL/d(deformed primitives). Exact for the
/// discretized (unrolled) integrator.
template <typename Scalar>
DeformGradients<Scalar> deform_backward(const DeformationNet<Scalar>& net, std::span<const Gaussian2<Scalar>> canonical,
                                        const DeformTape<Scalar>& tape, const GradientBuffer<Scalar>& upstream) {
  const auto& cfg = net.config;
  const auto& w = net.weights;
  const Eigen::Index n = static_cast<Eigen::Index>(canonical.size());
  if (static_cast<Eigen::Index>(upstream.size()) != n) {
    throw std::invalid_argument("deform_backward: upstream gradient count does not match primitive count");
  }
  const int sd = cfg.spatial_dim(), td = cfg.temporal_dim();
  DeformGradients<Scalar> out{NetWeights<Scalar>::zeros(cfg), GradientBuffer<Scalar>(canonical.size())};
  auto& gw = out.net;

  MatX<Scalar> d_decoded = MatX<Scalar>::Zero(5, n);
  VecX<Scalar> d_z = VecX<Scalar>::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& up = upstream[static_cast<std::size_t>(i)];
    auto& cg = out.canonical[static_cast<std::size_t>(i)];
    const Scalar o = tape.gate[i];
    Vec3<Scalar> c = canonical[static_cast<std::size_t>(i)].color;
    if (cfg.use_dc) c += tape.decoded.col(i).template tail<3>();
    cg.d_mu = up.d_mu;
    cg.d_log_sx = up.d_log_sx;
    cg.d_log_sy = up.d_log_sy;
    cg.d_theta = up.d_theta;
    cg.d_color = o * up.d_color;
    d_decoded(0, i) = up.d_mu.x() * cfg.frame_width;
    d_decoded(1, i) = up.d_mu.y() * cfg.frame_height;
    if (cfg.use_dc) d_decoded.col(i).template tail<3>() = o * up.d_color;
    if (cfg.use_gate) d_z[i] = up.d_color.dot(c) * o * (1 - o);
  }

  MatX<Scalar> d_spatial = MatX<Scalar>::Zero(sd, n);
  if (cfg.use_gate) {
    gw.wg.head(sd) = tape.spatial * d_z;
    gw.wg.tail(td) = d_z.sum() * tape.temporal;
    gw.bg[0] = d_z.sum();
    d_spatial.noalias() += w.wg.head(sd) * d_z.transpose();
  }

  gw.wd = d_decoded * tape.state.transpose();
  gw.bd = d_decoded.rowwise().sum();
  const MatX<Scalar> d_state = w.wd.transpose() * d_decoded;

  MatX<Scalar> d_hidden_spatial = MatX<Scalar>::Zero(cfg.hidden, n);
  if (cfg.dynamics == Dynamics::ode_state_conditioned || !tape.stage_acts.empty()) {
    const bool conditioned = cfg.dynamics == Dynamics::ode_state_conditioned;
    const auto tab = detail::tableau<Scalar>(cfg.integrator);
    const std::size_t stages = tab.b.size();
    const int steps = integration_steps(cfg.steps_per_unit, static_cast<double>(tape.t));
    MatX<Scalar> ds = d_state;
    for (int step = steps - 1; step >= 0; --step) {
      const Scalar h = tape.t / steps;
      const Scalar t0 = step * h;
      std::vector<MatX<Scalar>> dk(stages);
      for (std::size_t i = 0; i < stages; ++i) dk[i] = h * tab.b[i] * ds;
      for (std::size_t ii = stages; ii-- > 0;) {
        const std::size_t idx = static_cast<std::size_t>(step) * stages + ii;
        const MatX<Scalar>& act = tape.stage_acts[idx];
        gw.w2.noalias() += dk[ii] * act.transpose();
        gw.b2 += dk[ii].rowwise().sum();
        const MatX<Scalar> d_pre = ((w.w2.transpose() * dk[ii]).array() * (1 - act.array().square())).matrix();
        d_hidden_spatial += d_pre;
        const VecX<Scalar> du = d_pre.rowwise().sum();
        gw.w1.middleCols(sd, td).noalias() += du * detail::encode_time(cfg, t0 + tab.c[ii] * h).transpose();
        gw.b1 += du;
        if (conditioned) {
          gw.w1.rightCols(cfg.latent_dim).noalias() += d_pre * tape.stage_inputs[idx].transpose();
          const MatX<Scalar> ds_in = w.w1.rightCols(cfg.latent_dim).transpose() * d_pre;
          ds += ds_in;
          for (std::size_t j = 0; j < ii; ++j) {
            if (tab.a[ii][j] != 0) dk[j].noalias() += h * tab.a[ii][j] * ds_in;
          }
        }
      }
    }
  } else {
    const auto nodes = integration_nodes(cfg, tape.t);
    Scalar wsum = 0;
    for (const auto& node : nodes) wsum += node.weight;
    gw.b2 = wsum * d_state.rowwise().sum();
    const MatX<Scalar> d_acc = w.w2.transpose() * d_state;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto& node = nodes[k];
      const VecX<Scalar> te = detail::encode_time(cfg, node.time);
      const MatX<Scalar>& act = tape.node_acts[k];
      const MatX<Scalar> d_pre = (node.weight * d_acc.array() * (1 - act.array().square())).matrix();
      d_hidden_spatial += d_pre;
      const VecX<Scalar> du = d_pre.rowwise().sum();
      gw.w1.middleCols(sd, td).noalias() += du * te.transpose();
      gw.b1 += du;
    }
    const MatX<Scalar>& acc = tape.node_sum;
    gw.w2 = d_state * acc.transpose();
  }

  gw.w1.leftCols(sd).noalias() += d_hidden_spatial * tape.spatial.transpose();
  d_spatial.noalias() += w.w1.leftCols(sd).transpose() * d_hidden_spatial;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.canonical[static_cast<std::size_t>(i)].d_mu +=
        detail::encoding_backward<Scalar>(cfg, canonical[static_cast<std::size_t>(i)].mu, d_spatial.col(i));
  }
  return out;
}

template <typename Scalar>
DeformGradients<Scalar> deform_backward(const DeformationNet<Scalar>& net, std::span<const Gaussian2<Scalar>> canonical,
                                        Scalar t, const GradientBuffer<Scalar>& upstream) {
  const auto tape = deform_forward(net, canonical, t);
  return deform_backward(net, canonical, tape, upstream);
}

/// Finite-difference velocities v_k = (mu_k - mu_{k-1}) / dt.
template <typename Scalar>
std::vector<Vec2<Scalar>> discrete_velocity(std::span<const Vec2<Scalar>> positions, Scalar dt) {
  if (positions.size() < 2) throw std::invalid_argument("discrete_velocity: need at least 2 samples");
  if (!(dt > 0)) throw std::invalid_argument("discrete_velocity: spacing must be positive");
  std::vector<Vec2<Scalar>> v;
  v.reserve(positions.size() - 1);
  for (std::size_t k = 1; k < positions.size(); ++k) v.push_back((positions[k] - positions[k - 1]) / dt);
  return v;
}

/// max_k |v_k - v_{k-1}|; 0 when fewer than two velocities.
template <typename Scalar>
Scalar velocity_jitter(std::span<const Vec2<Scalar>> velocities) {
  Scalar worst = 0;
  for (std::size_t k = 1; k < velocities.size(); ++k) worst = std::max(worst, (velocities[k] - velocities[k - 1]).norm());
  return worst;
}

}  // namespace d2gv
