#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace d2gv {

/// Uniform-grid spatial hash over 2D points for k-nearest-neighbor lookup.
/// Cells are stored CSR-style: `cell_start_[c]..cell_start_[c+1]` indexes
/// `cell_points_`.
class SpatialGrid {
 public:
  explicit SpatialGrid(std::vector<Eigen::Vector2d> points, double target_per_cell = 2.0)
      : points_(std::move(points)) {
    if (points_.empty()) return;
    Eigen::Vector2d lo = points_.front(), hi = points_.front();
    for (const auto& p : points_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    origin_ = lo;
    const Eigen::Vector2d extent = (hi - lo).cwiseMax(1e-9);
    const double area = extent.x() * extent.y();
    cell_ = std::sqrt(area * target_per_cell / static_cast<double>(points_.size()));
    // near-collinear sets have almost no area; keep the cell count O(n)
    cell_ = std::max(cell_, std::max(extent.x(), extent.y()) / (4.0 * static_cast<double>(points_.size())));
    if (!(cell_ > 0) || !std::isfinite(cell_)) cell_ = std::max(extent.x(), extent.y());
    nx_ = std::max(1, static_cast<int>(std::floor(extent.x() / cell_)) + 1);
    ny_ = std::max(1, static_cast<int>(std::floor(extent.y() / cell_)) + 1);

    std::vector<int> counts(static_cast<std::size_t>(nx_) * ny_ + 1, 0);
    std::vector<int> cell_of(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      cell_of[i] = cell_index(points_[i]);
      ++counts[static_cast<std::size_t>(cell_of[i]) + 1];
    }
    for (std::size_t c = 1; c < counts.size(); ++c) counts[c] += counts[c - 1];
    cell_start_ = counts;
    cell_points_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) cell_points_[static_cast<std::size_t>(counts[cell_of[i]]++)] = static_cast<int>(i);
  }

  std::size_t size() const { return points_.size(); }

  /// The k points nearest to point `self` (excluding it), ordered by
  /// (distance, index).
  std::vector<int> knn(int self, int k) const {
    std::vector<std::pair<double, int>> found;
    const int n = static_cast<int>(points_.size());
    k = std::min(k, n - 1);
    if (k <= 0) return {};
    const Eigen::Vector2d& q = points_[static_cast<std::size_t>(self)];
    const int cx = std::clamp(static_cast<int>(std::floor((q.x() - origin_.x()) / cell_)), 0, nx_ - 1);
    const int cy = std::clamp(static_cast<int>(std::floor((q.y() - origin_.y()) / cell_)), 0, ny_ - 1);
    const int max_ring = std::max(nx_, ny_);
    for (int ring = 0; ring <= max_ring; ++ring) {
      for (int y = cy - ring; y <= cy + ring; ++y) {
        if (y < 0 || y >= ny_) continue;
        const bool edge_row = (y == cy - ring || y == cy + ring);
        for (int x = cx - ring; x <= cx + ring; x += (edge_row ? 1 : 2 * std::max(ring, 1))) {
          if (x >= 0 && x < nx_) visit_cell(y * nx_ + x, self, q, found);
          if (ring == 0) break;
        }
      }
      if (static_cast<int>(found.size()) >= k) {
        std::nth_element(found.begin(), found.begin() + (k - 1), found.end());
        // unvisited points lie at distance >= ring * cell
        if (found[static_cast<std::size_t>(k - 1)].first < ring * cell_) break;
      }
    }
    std::sort(found.begin(), found.end());
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out.push_back(found[static_cast<std::size_t>(i)].second);
    return out;
  }

 private:
  int cell_index(const Eigen::Vector2d& p) const {
    const int x = std::clamp(static_cast<int>(std::floor((p.x() - origin_.x()) / cell_)), 0, nx_ - 1);
    const int y = std::clamp(static_cast<int>(std::floor((p.y() - origin_.y()) / cell_)), 0, ny_ - 1);
    return y * nx_ + x;
  }

  void visit_cell(int c, int self, const Eigen::Vector2d& q, std::vector<std::pair<double, int>>& found) const {
    for (int k = cell_start_[static_cast<std::size_t>(c)]; k < cell_start_[static_cast<std::size_t>(c) + 1]; ++k) {
      const int j = cell_points_[static_cast<std::size_t>(k)];
      if (j == self) continue;
      found.emplace_back((points_[static_cast<std::size_t>(j)] - q).norm(), j);
    }
  }

  std::vector<Eigen::Vector2d> points_;
  Eigen::Vector2d origin_ = Eigen::Vector2d::Zero();
  double cell_ = 1;
  int nx_ = 1;
  int ny_ = 1;
  std::vector<int> cell_start_;
  std::vector<int> cell_points_;
};

}  // namespace d2gv
