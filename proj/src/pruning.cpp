#include "d2gv/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "d2gv/spatial_grid.hpp"

namespace d2gv {

namespace {

GramMatrix finish_gram(Eigen::MatrixXd g) {
  GramMatrix out;
  out.diag = g.diagonal();
  const Eigen::VectorXd inv_root = out.diag.cwiseSqrt().cwiseInverse();
  out.correlation = inv_root.asDiagonal() * g * inv_root.asDiagonal();
  out.correlation.diagonal().setOnes();
  out.gram = std::move(g);
  return out;
}

Eigen::MatrixXd principal(const Eigen::MatrixXd& g, std::span<const int> subset) {
  const auto k = static_cast<Eigen::Index>(subset.size());
  Eigen::MatrixXd sub(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = g(subset[static_cast<std::size_t>(i)], subset[static_cast<std::size_t>(j)]);
  }
  return sub;
}

void check_budget(const Eigen::MatrixXd& g, int k) {
  if (g.rows() != g.cols()) throw std::invalid_argument("D-optimal selection: Gram matrix must be square");
  if (k < 0 || k > g.rows()) throw std::invalid_argument("D-optimal selection: budget exceeds primitive count");
}

}  // namespace

GramMatrix build_gram(std::span<const Gaussian2d> gaussians) {
  const auto n = static_cast<Eigen::Index>(gaussians.size());
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = l2_norm_sq(gaussians[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      g(i, j) = g(j, i) = gram_entry(gaussians[static_cast<std::size_t>(i)], gaussians[static_cast<std::size_t>(j)]);
    }
  }
  return finish_gram(std::move(g));
}

GramMatrix empirical_gram(std::span<const Gaussian2d> gaussians, const PixelGrid& grid) {
  const auto n = static_cast<Eigen::Index>(gaussians.size());
  const Eigen::Index p = static_cast<Eigen::Index>(grid.nx) * grid.ny;
  Eigen::MatrixXd phi(p, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& gs = gaussians[static_cast<std::size_t>(c)];
    for (int j = 0; j < grid.ny; ++j) {
      for (int i = 0; i < grid.nx; ++i) {
        const Eigen::Vector2d x(grid.x0 + (i + 0.5) * grid.spacing, grid.y0 + (j + 0.5) * grid.spacing);
        phi(static_cast<Eigen::Index>(j) * grid.nx + i, c) = kernel_eval(gs, x);
      }
    }
  }
  Eigen::MatrixXd g = phi.transpose() * phi * (grid.spacing * grid.spacing);
  return finish_gram(std::move(g));
}

std::optional<double> logdet_subset(const Eigen::MatrixXd& g, std::span<const int> subset) {
  if (subset.empty()) throw std::invalid_argument("logdet_subset: subset must be non-empty");
  for (int i : subset) {
    if (i < 0 || i >= g.rows()) throw std::out_of_range("logdet_subset: index out of range");
  }
  const Eigen::MatrixXd sub = principal(g, subset);
  const Eigen::LLT<Eigen::MatrixXd> llt(sub);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Eigen::VectorXd d = llt.matrixL().toDenseMatrix().diagonal();
  // pivots this small relative to the diagonal mean the block is singular up to rounding
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d[i] * d[i] > 1e-12 * sub(i, i))) return std::nullopt;
  }
  return 2.0 * d.array().log().sum();
}

std::vector<int> brute_force_dopt(const Eigen::MatrixXd& g, int k) {
  check_budget(g, k);
  const int n = static_cast<int>(g.rows());
  if (n > 20) throw std::invalid_argument("brute_force_dopt: enumeration limited to N <= 20");
  if (k == 0) return {};
  std::vector<int> combo(static_cast<std::size_t>(k));
  std::iota(combo.begin(), combo.end(), 0);
  std::vector<int> best = combo;
  double best_value = -std::numeric_limits<double>::infinity();
  while (true) {
    const auto v = logdet_subset(g, combo);
    if (v && *v > best_value) {
      best_value = *v;
      best = combo;
    }
    int i = k - 1;
    while (i >= 0 && combo[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++combo[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) combo[static_cast<std::size_t>(j)] = combo[static_cast<std::size_t>(j - 1)] + 1;
  }
  return best;
}

std::vector<int> greedy_dopt(const Eigen::MatrixXd& g, int k) {
  check_budget(g, k);
  const auto n = g.rows();
  std::vector<int> chosen;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (int step = 0; step < k; ++step) {
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::MatrixXd cross;
    if (!chosen.empty()) {
      llt.compute(principal(g, chosen));
      cross.resize(static_cast<Eigen::Index>(chosen.size()), n);
      for (std::size_t a = 0; a < chosen.size(); ++a) cross.row(static_cast<Eigen::Index>(a)) = g.row(chosen[a]);
    }
    int best = -1;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < n; ++c) {
      if (used[static_cast<std::size_t>(c)]) continue;
      // log det grows by log of the Schur complement g_cc - g_c^T G_S^-1 g_c
      double schur = g(c, c);
      if (!chosen.empty()) {
        const Eigen::VectorXd col = cross.col(c);
        schur -= col.dot(llt.solve(col));
      }
      const double gain = schur > 1e-12 * g(c, c) ? std::log(schur) : -std::numeric_limits<double>::infinity();
      if (best < 0 || gain > best_gain) {
        best = static_cast<int>(c);
        best_gain = gain;
      }
    }
    chosen.push_back(best);
    used[static_cast<std::size_t>(best)] = true;
  }
  return chosen;
}

double spectral_norm_symmetric(const Eigen::MatrixXd& a, int max_iters, double tol) {
  const auto n = a.rows();
  if (n == 0) return 0;
  if (a.isZero(0)) return 0;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.37 * static_cast<double>(i) / static_cast<double>(n);
  v.normalize();
  double estimate = 0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd w = a * (a * v);
    const double norm = w.norm();
    if (norm == 0) return 0;
    w /= norm;
    const double next = std::sqrt(w.dot(a * (a * w)));
    v = w;
    if (std::abs(next - estimate) <= tol * std::max(1.0, next)) {
      estimate = next;
      break;
    }
    estimate = next;
  }
  return estimate;
}

std::optional<OverlapSurrogate> surrogate_overlap(const Eigen::MatrixXd& r, std::span<const int> subset) {
  Eigen::MatrixXd a = principal(r, subset);
  a.diagonal().setZero();
  OverlapSurrogate out;
  // power iteration approaches the norm from below; a relative nudge keeps alpha an upper bound
  out.alpha = spectral_norm_symmetric(a) * (1.0 + 1e-9);
  if (!(out.alpha < 1.0)) return std::nullopt;
  const double frob_sq = a.squaredNorm();
  out.approx = -0.5 * frob_sq;
  out.bound = out.alpha / (3.0 * (1.0 - out.alpha)) * frob_sq;
  return out;
}

PruneRanking rank_primitives(std::span<const Gaussian2d> gaussians, int k_neighbors, double lambda) {
  if (k_neighbors < 0) throw std::invalid_argument("rank_primitives: k_neighbors must be >= 0");
  if (lambda < 0) throw std::invalid_argument("rank_primitives: lambda must be >= 0");
  const std::size_t n = gaussians.size();
  PruneRanking out;
  out.score.resize(n);
  out.rho.assign(n, 0.0);
  if (k_neighbors > 0 && n > 1) {
    std::vector<Eigen::Vector2d> centers;
    centers.reserve(n);
    for (const auto& g : gaussians) centers.push_back(g.mu);
    const SpatialGrid grid(std::move(centers));
    for (std::size_t i = 0; i < n; ++i) {
      double rho = 0;
      for (int j : grid.knn(static_cast<int>(i), k_neighbors)) {
        const double rij = correlation_entry(gaussians[i], gaussians[static_cast<std::size_t>(j)]);
        rho += rij * rij;
      }
      out.rho[i] = rho;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.score[i] = gaussians[i].sx() * gaussians[i].sy() * std::exp(-lambda * out.rho[i]);
  }
  out.order.resize(n);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](int a, int b) { return out.score[static_cast<std::size_t>(a)] > out.score[static_cast<std::size_t>(b)]; });
  return out;
}

PruneRanking rank_by_color_magnitude(std::span<const Gaussian2d> gaussians) {
  PruneRanking out;
  const std::size_t n = gaussians.size();
  out.score.resize(n);
  out.rho.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) out.score[i] = gaussians[i].color.norm();
  out.order.resize(n);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](int a, int b) { return out.score[static_cast<std::size_t>(a)] > out.score[static_cast<std::size_t>(b)]; });
  return out;
}

PruneResult prune_to_budget(const ScaleGroup& group, const PruneRanking& ranking, int budget) {
  if (budget < 0) throw std::invalid_argument("prune_to_budget: budget must be >= 0");
  PruneResult out;
  const int size = static_cast<int>(group.members.size());
  if (budget > size) {
    out.clamped = true;
    budget = size;
  }
  std::vector<bool> in_group;
  for (int m : group.members) {
    if (m >= static_cast<int>(in_group.size())) in_group.resize(static_cast<std::size_t>(m) + 1, false);
    in_group[static_cast<std::size_t>(m)] = true;
  }
  for (int idx : ranking.order) {
    if (static_cast<int>(out.indices.size()) >= budget) break;
    if (idx < static_cast<int>(in_group.size()) && in_group[static_cast<std::size_t>(idx)]) out.indices.push_back(idx);
  }
  return out;
}

PruneResult prune_to_ratio(const ScaleGroup& group, const PruneRanking& ranking, double keep_ratio) {
  if (!(keep_ratio >= 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("prune_to_ratio: keep_ratio must lie in [0, 1]");
  const int budget = static_cast<int>(std::lround(keep_ratio * static_cast<double>(group.members.size())));
  return prune_to_budget(group, ranking, budget);
}

}  // namespace d2gv
