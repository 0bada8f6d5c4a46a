#include "d2gv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

#include "d2gv/adam.hpp"

namespace d2gv {

DeformConfig TrainConfig::deform_config(int width, int height) const {
  DeformConfig cfg;
  cfg.latent_dim = latent_dim;
  cfg.hidden = hidden;
  cfg.spatial_bands = spatial_bands;
  cfg.temporal_bands = temporal_bands;
  cfg.steps_per_unit = steps_per_unit;
  cfg.frame_width = width;
  cfg.frame_height = height;
  cfg.integrator = ablations.euler_integrator ? Integrator::euler : Integrator::rk4;
  if (ablations.no_ode) {
    cfg.dynamics = Dynamics::direct;
  } else if (ablations.state_conditioned_ode) {
    cfg.dynamics = Dynamics::ode_state_conditioned;
  }
  cfg.use_dc = !(ablations.no_dc || ablations.no_dc_no_gate);
  cfg.use_gate = !ablations.no_dc_no_gate;
  return cfg;
}

void TrainConfig::validate() const {
  if (gop_size < 1 || primitive_count < 1) throw std::invalid_argument("TrainConfig: gop_size and primitive_count must be >= 1");
  if (coarse_iters < 0 || fine_iters < 0) throw std::invalid_argument("TrainConfig: iteration counts must be >= 0");
  if (!(coarse_lr > 0) || !(gaussian_lr > 0) || !(mlp_lr_init > 0) || !(mlp_lr_final > 0)) {
    throw std::invalid_argument("TrainConfig: learning rates must be positive");
  }
  if (train_scales.empty() || train_scales.size() != scale_weights.size()) {
    throw std::invalid_argument("TrainConfig: need one weight per training scale");
  }
  double wsum = 0;
  for (std::size_t i = 0; i < train_scales.size(); ++i) {
    if (!(train_scales[i] >= 1)) throw std::invalid_argument("TrainConfig: training scales must be >= 1");
    if (!(scale_weights[i] >= 0)) throw std::invalid_argument("TrainConfig: scale weights must be >= 0");
    wsum += scale_weights[i];
  }
  if (!(wsum > 0)) throw std::invalid_argument("TrainConfig: scale weights sum to zero");
  if (!(lambda_s >= 0)) throw std::invalid_argument("TrainConfig: lambda_s must be >= 0");
  if (ablations.no_ode && ablations.state_conditioned_ode) {
    throw std::invalid_argument("TrainConfig: no_ode and state_conditioned_ode are exclusive");
  }
  deform_config(1, 1).validate();
}

double GopModel::timestamp(int k) const {
  if (frame_count <= 1) return 0.0;
  return static_cast<double>(k) / (frame_count - 1);
}

std::vector<Gaussian2d> GopModel::deformed(double t) const { return deform(net, canonical, t); }

std::vector<Gaussian2d> GopModel::deformed(double t, std::span<const int> subset) const {
  const auto sub = gather(std::span<const Gaussian2d>(canonical), subset);
  return deform(net, sub, t);
}

ScaleGroup GopModel::group(double r, double beta) const { return group_for_scale(canonical, r, beta); }

ImageD GopModel::render(double t, double r, double beta, const RasterOptions& opts) const {
  const auto g = group(r, beta);
  return render_subset(t, r, g.members, opts);
}

ImageD GopModel::render_subset(double t, double r, std::span<const int> subset, const RasterOptions& opts) const {
  const auto moved = deformed(t, subset);
  return render_at_scale(std::span<const Gaussian2d>(moved), width, height, r, opts);
}

std::size_t GopModel::param_count() const { return canonical.size() * 8 + net.param_count(); }

std::uint64_t gop_seed(std::uint64_t seed, int gop_index) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(gop_index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

FrameLocation locate_frame(int frame, int gop_size) {
  if (frame < 0 || gop_size < 1) throw std::invalid_argument("locate_frame: negative frame or bad GoP size");
  return {frame / gop_size, frame % gop_size};
}

namespace {

void require_frames(std::span<const ImageD> frames, const char* what) {
  if (frames.empty()) throw std::invalid_argument(std::string(what) + ": no frames");
  for (std::size_t k = 1; k < frames.size(); ++k) {
    if (!frames[k].same_shape(frames[0])) {
      throw std::invalid_argument(std::string(what) + ": frame " + std::to_string(k) + " has different dimensions");
    }
  }
}

ImageD mean_frame(std::span<const ImageD> frames) {
  ImageD mean(frames[0].width, frames[0].height);
  for (const auto& f : frames) mean.pixels += f.pixels;
  mean.pixels /= static_cast<double>(frames.size());
  return mean;
}

// Flat parameter packing: per primitive [mu_x/hw, mu_y/hh, log_sx, log_sy, theta, r, g, b].
// Centers live in half-extent units so one learning rate fits any resolution.
constexpr int kPacked = 8;

Eigen::ArrayXd pack(const std::vector<Gaussian2d>& gs, double hw, double hh) {
  Eigen::ArrayXd p(static_cast<Eigen::Index>(gs.size()) * kPacked);
  for (std::size_t n = 0; n < gs.size(); ++n) {
    const auto& g = gs[n];
    double* d = p.data() + n * kPacked;
    d[0] = g.mu.x() / hw;
    d[1] = g.mu.y() / hh;
    d[2] = g.log_sx;
    d[3] = g.log_sy;
    d[4] = g.theta;
    d[5] = g.color[0];
    d[6] = g.color[1];
    d[7] = g.color[2];
  }
  return p;
}

void unpack(const Eigen::ArrayXd& p, std::vector<Gaussian2d>& gs, double hw, double hh) {
  for (std::size_t n = 0; n < gs.size(); ++n) {
    const double* d = p.data() + n * kPacked;
    auto& g = gs[n];
    g.mu = Vec2<double>(d[0] * hw, d[1] * hh);
    g.log_sx = d[2];
    g.log_sy = d[3];
    g.theta = d[4];
    g.color = Vec3<double>(d[5], d[6], d[7]);
  }
}

Eigen::ArrayXd pack_grad(const GradientBuffer<double>& gr, double hw, double hh) {
  Eigen::ArrayXd p(static_cast<Eigen::Index>(gr.size()) * kPacked);
  for (std::size_t n = 0; n < gr.size(); ++n) {
    const auto& g = gr[n];
    double* d = p.data() + n * kPacked;
    d[0] = g.d_mu.x() * hw;
    d[1] = g.d_mu.y() * hh;
    d[2] = g.d_log_sx;
    d[3] = g.d_log_sy;
    d[4] = g.d_theta;
    d[5] = g.d_color[0];
    d[6] = g.d_color[1];
    d[7] = g.d_color[2];
  }
  return p;
}

Eigen::ArrayXd flatten(const NetWeights<double>& w) {
  Eigen::ArrayXd out(static_cast<Eigen::Index>(w.size()));
  Eigen::Index off = 0;
  w.for_each([&](const auto& m) {
    out.segment(off, m.size()) = Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size());
    off += m.size();
  });
  return out;
}

void unflatten(const Eigen::ArrayXd& flat, NetWeights<double>& w) {
  Eigen::Index off = 0;
  w.for_each([&](auto& m) {
    Eigen::Map<Eigen::ArrayXd>(m.data(), m.size()) = flat.segment(off, m.size());
    off += m.size();
  });
}

[[noreturn]] void diverged(const char* stage, int gop, int iter, double loss) {
  throw std::runtime_error(std::string(stage) + " stage diverged: GoP " + std::to_string(gop) + ", iteration " +
                           std::to_string(iter) + ", loss " + std::to_string(loss) +
                           " (non-finite loss or gradient; try lower learning rates)");
}

void log_row(const TrainConfig& cfg, const char* stage, int gop, int iter, int frame, double scale,
             const LossValue<double>& lv) {
  if (cfg.log == nullptr || cfg.log_every <= 0 || iter % cfg.log_every != 0) return;
  *cfg.log << stage << ',' << gop << ',' << iter << ',' << frame << ',' << scale << ',' << lv.value << ','
           << (lv.mse > 0 ? 10.0 * std::log10(1.0 / lv.mse) : 99.0) << '\n';
}

}  // namespace

std::vector<Gaussian2d> init_canonical(std::span<const ImageD> frames, int count, std::uint64_t seed) {
  require_frames(frames, "init_canonical");
  if (count < 1) throw std::invalid_argument("init_canonical: count must be >= 1");
  const ImageD mean = mean_frame(frames);
  const int w = mean.width, h = mean.height;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), ut(0.0, std::numbers::pi);
  const double s = std::sqrt(static_cast<double>(w) * h / count) / 2;
  // Each kernel integrates to 2 pi s^2, so the field's mean coverage is pi/2.
  const double gain = 2.0 / std::numbers::pi;
  std::vector<Gaussian2d> out(static_cast<std::size_t>(count));
  for (auto& g : out) {
    const double x = ux(rng), y = uy(rng), th = ut(rng);
    const int px = std::clamp(static_cast<int>(x), 0, w - 1);
    const int py = std::clamp(static_cast<int>(y), 0, h - 1);
    g = Gaussian2d::from_scales({x, y}, s, s, th,
                                gain * Vec3<double>(mean.at(px, py, 0), mean.at(px, py, 1), mean.at(px, py, 2)));
  }
  return out;
}

std::vector<Gaussian2d> coarse_fit(std::span<const ImageD> frames, std::vector<Gaussian2d> init,
                                   const TrainConfig& config, int gop_index) {
  require_frames(frames, "coarse_fit");
  if (init.empty()) throw std::invalid_argument("coarse_fit: empty primitive set");
  const int w = frames[0].width, h = frames[0].height;
  const double hw = w / 2.0, hh = h / 2.0;
  Eigen::ArrayXd params = pack(init, hw, hh);
  AdamMoments state(params.size());
  for (int it = 0; it < config.coarse_iters; ++it) {
    const int k = it % static_cast<int>(frames.size());
    const ImageD pred = render(std::span<const Gaussian2d>(init), w, h, 1.0, config.raster);
    const auto lv = reconstruction_loss(pred, frames[k], config.lambda_s, config.ablations.loss);
    const auto grads = render_backward(std::span<const Gaussian2d>(init), lv.grad, w, h, 1.0, config.raster);
    const Eigen::ArrayXd g = pack_grad(grads, hw, hh);
    if (!std::isfinite(lv.value) || !g.allFinite()) diverged("coarse", gop_index, it, lv.value);
    log_row(config, "coarse", gop_index, it, k, 1.0, lv);
    adam_step(params, g, state, config.coarse_lr);
    unpack(params, init, hw, hh);
  }
  return init;
}

LossValue<double> sample_loss(const GopModel& model, const ImageD& target, double t, double r,
                              const TrainConfig& config, std::span<const int> subset, ModelGradients* grads) {
  std::vector<int> all;
  if (subset.empty()) {
    all.resize(model.canonical.size());
    std::iota(all.begin(), all.end(), 0);
    subset = all;
  }
  const auto sub = gather(std::span<const Gaussian2d>(model.canonical), subset);
  const std::span<const Gaussian2d> sub_span(sub);
  const auto tape = deform_forward(model.net, sub_span, t);
  const auto moved = apply_deformation(model.net, sub_span, tape);
  const std::span<const Gaussian2d> moved_span(moved);
  const ImageD pred = render_at_scale(moved_span, model.width, model.height, r, config.raster);
  auto lv = reconstruction_loss(pred, target, config.lambda_s, config.ablations.loss);
  if (grads != nullptr) {
    const auto up = render_backward(moved_span, lv.grad, pred.width, pred.height, r, config.raster);
    const auto dg = deform_backward(model.net, sub_span, tape, up);
    grads->net = dg.net;
    grads->canonical.assign(model.canonical.size(), GaussianGrad<double>{});
    for (std::size_t i = 0; i < subset.size(); ++i) {
      grads->canonical[static_cast<std::size_t>(subset[i])] += dg.canonical[i];
    }
  }
  return lv;
}

GopModel fine_fit(std::span<const ImageD> frames, std::vector<Gaussian2d> canonical, const TrainConfig& config,
                  std::span<const double> timestamps, int gop_index) {
  require_frames(frames, "fine_fit");
  config.validate();
  if (canonical.empty()) throw std::invalid_argument("fine_fit: empty primitive set");
  if (!timestamps.empty() && timestamps.size() != frames.size()) {
    throw std::invalid_argument("fine_fit: need one timestamp per frame");
  }
  const std::uint64_t seed = gop_seed(config.seed, gop_index);

  GopModel model;
  model.width = frames[0].width;
  model.height = frames[0].height;
  model.frame_count = static_cast<int>(frames.size());
  model.net = DeformationNet<double>::init(config.deform_config(model.width, model.height), seed ^ 0xD2u);
  if (model.net.config.use_gate) {
    // the zero-initialized gate starts at 1/2
    for (auto& g : canonical) g.color *= 2.0;
  }
  model.canonical = std::move(canonical);

  std::vector<double> times(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    times[k] = timestamps.empty() ? model.timestamp(static_cast<int>(k)) : timestamps[k];
  }

  // area-downsampled targets per (scale, frame)
  const std::size_t ns = config.train_scales.size();
  std::vector<std::vector<ImageD>> targets(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    for (const auto& f : frames) {
      targets[s].push_back(config.train_scales[s] == 1.0 ? f : area_downsample(f, config.train_scales[s]));
    }
  }

  const double hw = model.width / 2.0, hh = model.height / 2.0;
  Eigen::ArrayXd gparams = pack(model.canonical, hw, hh);
  Eigen::ArrayXd nparams = flatten(model.net.weights);
  AdamMoments gstate(gparams.size()), nstate(nparams.size());
  const long horizon = config.mlp_lr_horizon > 0 ? config.mlp_lr_horizon : config.fine_iters;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_frame(0, static_cast<int>(frames.size()) - 1);
  std::discrete_distribution<std::size_t> pick_scale(config.scale_weights.begin(), config.scale_weights.end());
  std::vector<bool> warned(ns, false);

  std::vector<int> all(model.canonical.size());
  std::iota(all.begin(), all.end(), 0);
  ModelGradients grads;
  for (int it = 0; it < config.fine_iters; ++it) {
    const int k = pick_frame(rng);
    const std::size_t s = pick_scale(rng);
    const double r = config.train_scales[s];
    std::vector<int> members = all;
    if (config.grouping) {
      members = group_for_scale(model.canonical, r, config.beta).members;
      if (members.empty()) {
        if (!warned[s] && config.log != nullptr) {
          *config.log << "# warning: empty scale group at r=" << r << ", skipping\n";
        }
        warned[s] = true;
        continue;
      }
    }
    const auto lv = sample_loss(model, targets[s][static_cast<std::size_t>(k)], times[static_cast<std::size_t>(k)], r,
                                config, members, &grads);
    const Eigen::ArrayXd gg = pack_grad(grads.canonical, hw, hh);
    const Eigen::ArrayXd ng = flatten(grads.net);
    if (!std::isfinite(lv.value) || !gg.allFinite() || !ng.allFinite()) diverged("fine", gop_index, it, lv.value);
    log_row(config, "fine", gop_index, it, k, r, lv);
    adam_step(gparams, gg, gstate, config.gaussian_lr);
    adam_step(nparams, ng, nstate, exponential_lr(config.mlp_lr_init, config.mlp_lr_final, it, horizon));
    unpack(gparams, model.canonical, hw, hh);
    unflatten(nparams, model.net.weights);
  }
  return model;
}

GopModel fit_gop(std::span<const ImageD> frames, const TrainConfig& config, int gop_index,
                 std::span<const double> timestamps) {
  config.validate();
  const std::uint64_t seed = gop_seed(config.seed, gop_index);
  auto canonical = init_canonical(frames, config.primitive_count, seed);
  if (!config.ablations.no_coarse) canonical = coarse_fit(frames, std::move(canonical), config, gop_index);
  return fine_fit(frames, std::move(canonical), config, timestamps, gop_index);
}

std::vector<GopModel> fit_video(std::span<const ImageD> frames, const TrainConfig& config) {
  require_frames(frames, "fit_video");
  config.validate();
  const std::size_t g = static_cast<std::size_t>(config.gop_size);
  std::vector<GopModel> models;
  for (std::size_t start = 0, idx = 0; start < frames.size(); start += g, ++idx) {
    const std::size_t len = std::min(g, frames.size() - start);
    models.push_back(fit_gop(frames.subspan(start, len), config, static_cast<int>(idx)));
    finalize_for_storage(models.back(), config.k_neighbors, config.coherence);
  }
  return models;
}

void finalize_for_storage(GopModel& model, int k_neighbors, double lambda) {
  auto snap = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  for (auto& g : model.canonical) g = g.cast<float>().cast<double>();
  model.net.weights.for_each([&](auto& m) { m = m.unaryExpr(snap); });
  const auto ranking = rank_primitives(model.canonical, k_neighbors, lambda);
  std::vector<Gaussian2d> ordered;
  ordered.reserve(model.canonical.size());
  for (int i : ranking.order) ordered.push_back(model.canonical[static_cast<std::size_t>(i)]);
  model.canonical = std::move(ordered);
}

}  // namespace d2gv
