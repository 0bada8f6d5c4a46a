#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "d2gv/gaussian.hpp"

namespace d2gv {

enum class GroupWarning { none, empty_group };

/// Primitives kept when rendering at downsample factor r.
struct ScaleGroup {
  double scale = 1;
  double beta = 0;
  std::vector<int> members;  // ascending
  GroupWarning warning = GroupWarning::none;
};

/// Smallest std-dev / pixel-spacing ratio whose spectrum at the Nyquist
/// frequency pi/spacing is attenuated to at most epsilon:
/// sqrt(2 ln(1/eps)) / pi.
inline double nyquist_beta(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("nyquist_beta: epsilon must lie in (0, 1)");
  return std::sqrt(2.0 * std::log(1.0 / epsilon)) / std::numbers::pi;
}

inline constexpr double kDefaultEpsilon = 0.01;

inline double default_beta() { return nyquist_beta(kDefaultEpsilon); }

/// { n | sigma_max(n) >= beta * r }, sigma_max measured at raster scale 1.
template <typename Scalar>
ScaleGroup group_for_scale(std::span<const Gaussian2<Scalar>> canonical, double r, double beta) {
  if (!(r >= 1.0)) throw std::invalid_argument("group_for_scale: scale must be >= 1");
  if (!(beta > 0.0)) throw std::invalid_argument("group_for_scale: beta must be positive");
  ScaleGroup group{r, beta, {}, GroupWarning::none};
  const double threshold = beta * r;
  for (std::size_t n = 0; n < canonical.size(); ++n) {
    if (static_cast<double>(footprint_sigma_max(canonical[n], Scalar(1))) >= threshold) {
      group.members.push_back(static_cast<int>(n));
    }
  }
  if (group.members.empty()) group.warning = GroupWarning::empty_group;
  return group;
}

template <typename Scalar>
ScaleGroup group_for_scale(const std::vector<Gaussian2<Scalar>>& canonical, double r, double beta) {
  return group_for_scale(std::span<const Gaussian2<Scalar>>(canonical), r, beta);
}

/// Spectral attenuation exp(-1/2 sigma_min^2 (pi/r)^2) along the kernel's
/// narrowest axis; <= epsilon certifies the anti-aliasing condition there.
template <typename Scalar>
double antialias_margin(const Gaussian2<Scalar>& g, double r) {
  const double sigma_min_sq = static_cast<double>(covariance(g).lambda_min());
  const double omega = std::numbers::pi / r;
  return std::exp(-0.5 * sigma_min_sq * omega * omega);
}

template <typename Scalar>
std::vector<Gaussian2<Scalar>> gather(std::span<const Gaussian2<Scalar>> all, std::span<const int> indices) {
  std::vector<Gaussian2<Scalar>> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace d2gv
