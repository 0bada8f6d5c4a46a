#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "d2gv/gaussian.hpp"
#include "d2gv/grouping.hpp"

namespace d2gv {

/// Kernel inner products G_ij = <phi_i, phi_j>, with G = D R D and
/// D = diag(sqrt(G_ii)).
struct GramMatrix {
  Eigen::MatrixXd gram;
  Eigen::VectorXd diag;
  Eigen::MatrixXd correlation;
};

/// Closed-form Gram and correlation matrices.
GramMatrix build_gram(std::span<const Gaussian2d> gaussians);

/// Sample grid for the pixel-sum Gram: points (x0 + (i + 0.5) h, y0 + (j + 0.5) h).
struct PixelGrid {
  double x0 = 0;
  double y0 = 0;
  double spacing = 1;
  int nx = 0;
  int ny = 0;
};

/// Pixel-sum Gram sum_p phi_i(x_p) phi_j(x_p) * h^2.
GramMatrix empirical_gram(std::span<const Gaussian2d> gaussians, const PixelGrid& grid);

/// log det G[S] by Cholesky; nullopt when G[S] is not numerically positive
/// definite (typically duplicate primitives).
std::optional<double> logdet_subset(const Eigen::MatrixXd& g, std::span<const int> subset);

/// Exhaustive argmax of log det G[S] over |S| = k. Ties keep the
/// lexicographically first subset. Requires N <= 20.
std::vector<int> brute_force_dopt(const Eigen::MatrixXd& g, int k);

/// Greedy max-marginal-gain selection; ties go to the lower index.
/// Returned in selection order.
std::vector<int> greedy_dopt(const Eigen::MatrixXd& g, int k);

struct OverlapSurrogate {
  double approx = 0;  // -1/2 sum_{i != j in S} R_ij^2
  double bound = 0;   // alpha / (3 (1 - alpha)) sum_{i != j in S} R_ij^2
  double alpha = 0;   // ||R[S] - I||_2 by power iteration
};

/// Quadratic surrogate for log det R[S] with its remainder bound; nullopt
/// when ||R[S] - I||_2 >= 1 and the expansion does not apply.
std::optional<OverlapSurrogate> surrogate_overlap(const Eigen::MatrixXd& r, std::span<const int> subset);

/// Largest |eigenvalue| of a symmetric matrix by power iteration on A^2.
double spectral_norm_symmetric(const Eigen::MatrixXd& a, int max_iters = 2000, double tol = 1e-15);

struct PruneRanking {
  std::vector<double> score;  // sx * sy * exp(-lambda * rho)
  std::vector<double> rho;    // sum of squared correlations with k nearest neighbors
  std::vector<int> order;     // descending score, ties by index
};

inline constexpr int kDefaultNeighbors = 8;
inline constexpr double kDefaultCoherence = 3.0;

/// One-shot progressive ranking; neighbors by center distance through a
/// uniform spatial grid.
PruneRanking rank_primitives(std::span<const Gaussian2d> gaussians, int k_neighbors = kDefaultNeighbors,
                             double lambda = kDefaultCoherence);

/// Stand-in anchor for BD comparisons: rank by color magnitude |c|.
PruneRanking rank_by_color_magnitude(std::span<const Gaussian2d> gaussians);

struct PruneResult {
  std::vector<int> indices;  // ranking order
  bool clamped = false;
};

/// First `budget` members of `group` in ranking order. Budgets above the
/// group size are clamped and flagged.
PruneResult prune_to_budget(const ScaleGroup& group, const PruneRanking& ranking, int budget);

/// Budget = round(keep_ratio * group size).
PruneResult prune_to_ratio(const ScaleGroup& group, const PruneRanking& ranking, double keep_ratio);

}  // namespace d2gv
