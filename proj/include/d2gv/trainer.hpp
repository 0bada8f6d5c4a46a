#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "d2gv/deformation.hpp"
#include "d2gv/gaussian.hpp"
#include "d2gv/grouping.hpp"
#include "d2gv/image.hpp"
#include "d2gv/loss.hpp"
#include "d2gv/pruning.hpp"
#include "d2gv/rasterizer.hpp"

namespace d2gv {

struct Ablations {
  bool no_coarse = false;
  LossKind loss = LossKind::combined;
  bool no_ode = false;  // per-timestamp offsets instead of an integrated state
  bool no_dc = false;
  bool no_dc_no_gate = false;
  bool euler_integrator = false;
  bool state_conditioned_ode = false;
};

struct TrainConfig {
  int gop_size = 10;
  int primitive_count = 2000;

  int coarse_iters = 5000;
  double coarse_lr = 1e-2;

  int fine_iters = 20000;
  double gaussian_lr = 5e-3;
  double mlp_lr_init = 1.6e-4;
  double mlp_lr_final = 1.6e-5;
  int mlp_lr_horizon = 0;  // 0: fine_iters

  std::vector<double> train_scales = {1, 2, 4, 8};
  std::vector<double> scale_weights = {8, 1, 1, 1};
  double lambda_s = 0.3;

  bool grouping = true;
  double beta = nyquist_beta(kDefaultEpsilon);
  int k_neighbors = kDefaultNeighbors;
  double coherence = kDefaultCoherence;

  int latent_dim = 32;
  int hidden = 156;
  int spatial_bands = 10;
  int temporal_bands = 6;
  int steps_per_unit = 4;

  Ablations ablations;
  std::uint64_t seed = 0;
  RasterOptions raster;

  /// Optional CSV training log: stage,gop,iter,frame,scale,loss,psnr
  std::ostream* log = nullptr;
  int log_every = 100;

  DeformConfig deform_config(int width, int height) const;
  void validate() const;
};

/// One trained Group of Pictures: canonical primitives plus the deformation
/// field that moves them to each frame time.
struct GopModel {
  int width = 0;
  int height = 0;
  int frame_count = 0;
  std::vector<Gaussian2d> canonical;
  DeformationNet<double> net;

  /// Normalized time of local frame k: k / (frame_count - 1).
  double timestamp(int k) const;

  std::vector<Gaussian2d> deformed(double t) const;
  std::vector<Gaussian2d> deformed(double t, std::span<const int> subset) const;

  /// Primitives used at scale r (all when grouping is off).
  ScaleGroup group(double r, double beta) const;

  /// Renders time t at downsample factor r using the scale group.
  ImageD render(double t, double r, double beta, const RasterOptions& opts = {}) const;

  /// Renders exactly the given canonical indices (empty gives a black frame).
  ImageD render_subset(double t, double r, std::span<const int> subset, const RasterOptions& opts = {}) const;

  /// N_prim * 8 + P_MLP.
  std::size_t param_count() const;
};

/// Uniform-random centers, isotropic scales sqrt(W H / count) / 2, random
/// rotation, colors read from the temporal mean frame.
std::vector<Gaussian2d> init_canonical(std::span<const ImageD> frames, int count, std::uint64_t seed);

/// Fits one static set of primitives to all frames at full resolution.
std::vector<Gaussian2d> coarse_fit(std::span<const ImageD> frames, std::vector<Gaussian2d> init,
                                   const TrainConfig& config, int gop_index = 0);

/// Joint optimization of primitives and deformation field. `timestamps`
/// defaults to k / (G - 1) per frame.
GopModel fine_fit(std::span<const ImageD> frames, std::vector<Gaussian2d> canonical, const TrainConfig& config,
                  std::span<const double> timestamps = {}, int gop_index = 0);

/// Coarse + fine stages for one GoP.
GopModel fit_gop(std::span<const ImageD> frames, const TrainConfig& config, int gop_index = 0,
                 std::span<const double> timestamps = {});

/// Splits the sequence into ceil(T / G) GoPs and trains each independently.
std::vector<GopModel> fit_video(std::span<const ImageD> frames, const TrainConfig& config);

/// Rounds every parameter to float precision and reorders primitives by the
/// progressive ranking, i.e. the exact form the container stores.
void finalize_for_storage(GopModel& model, int k_neighbors = kDefaultNeighbors, double lambda = kDefaultCoherence);

struct ModelGradients {
  GradientBuffer<double> canonical;
  NetWeights<double> net;
};

/// Loss of one (frame, scale) sample and, optionally, its gradient w.r.t.
/// every canonical and network parameter. `subset` restricts rendering to
/// the given primitives (the scale group); empty means all.
LossValue<double> sample_loss(const GopModel& model, const ImageD& target, double t, double r,
                              const TrainConfig& config, std::span<const int> subset, ModelGradients* grads);

/// Per-GoP seed derived from the run seed.
std::uint64_t gop_seed(std::uint64_t seed, int gop_index);

/// Index of the GoP and local frame for a global frame index.
struct FrameLocation {
  int gop = 0;
  int local = 0;
};
FrameLocation locate_frame(int frame, int gop_size);

}  // namespace d2gv
