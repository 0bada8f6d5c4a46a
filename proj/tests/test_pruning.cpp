#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "d2gv/pruning.hpp"

using namespace d2gv;

namespace {

std::vector<Gaussian2d> scatter(int n, double extent, double smin, double smax, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Gaussian2d> gs;
  for (int i = 0; i < n; ++i)
    gs.push_back(Gaussian2d::from_scales({u(rng) * extent, u(rng) * extent}, smin + (smax - smin) * u(rng),
                                         smin + (smax - smin) * u(rng), u(rng) * 3.14, {u(rng), u(rng), u(rng)}));
  return gs;
}

double logdet_lu(const Eigen::MatrixXd& g, const std::vector<int>& s) {
  Eigen::MatrixXd sub(s.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) sub(i, j) = g(s[i], s[j]);
  return std::log(sub.fullPivLu().determinant());
}

// Every k-subset in lexicographic order.
std::vector<int> exhaustive_best(const Eigen::MatrixXd& g, int k) {
  const int n = static_cast<int>(g.rows());
  std::vector<bool> mask(n, false);
  std::fill(mask.begin(), mask.begin() + k, true);
  std::vector<int> best;
  double best_v = -1e300;
  do {
    std::vector<int> s;
    for (int i = 0; i < n; ++i)
      if (mask[i]) s.push_back(i);
    const double v = logdet_lu(g, s);
    if (v > best_v + 1e-12) {
      best_v = v;
      best = s;
    }
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return best;
}

}  // namespace

TEST_CASE("Gram factorizes as D R D") {
  const auto gs = scatter(12, 20, 0.8, 3, 1);
  const auto g = build_gram(gs);
  const Eigen::MatrixXd d = g.diag.cwiseSqrt().asDiagonal();
  CHECK((d * g.correlation * d - g.gram).norm() < 1e-10 * g.gram.norm());
  CHECK((g.gram - g.gram.transpose()).norm() == 0.0);
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK(g.diag[i] == doctest::Approx(l2_norm_sq(gs[i])));
}

TEST_CASE("pixel-sum Gram converges to the closed form") {
  const auto gs = scatter(5, 10, 1, 2.5, 2);
  const auto exact = build_gram(gs).gram;
  auto rel_err = [&](double h) {
    PixelGrid grid{-15, -15, h, static_cast<int>(40 / h), static_cast<int>(40 / h)};
    return (empirical_gram(gs, grid).gram - exact).norm() / exact.norm();
  };
  // coarse sampling aliases; fine sampling is exact to rounding
  CHECK(rel_err(4.0) > 1e-4);
  CHECK(rel_err(0.5) < 1e-8);
  CHECK(rel_err(0.25) < 1e-8);
}

TEST_CASE("brute-force D-optimal matches exhaustive enumeration") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const auto gs = scatter(9, 8, 0.7, 2.5, seed);
    const auto g = build_gram(gs).gram;
    for (int k : {1, 3, 5}) {
      CAPTURE(seed);
      CAPTURE(k);
      auto got = brute_force_dopt(g, k);
      std::sort(got.begin(), got.end());
      CHECK(got == exhaustive_best(g, k));
      const auto ld = logdet_subset(g, got);
      REQUIRE(ld.has_value());
      CHECK(*ld == doctest::Approx(logdet_lu(g, got)).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(brute_force_dopt(Eigen::MatrixXd::Identity(3, 3), 4), std::invalid_argument);
}

TEST_CASE("greedy selection never beats the optimum and is exact for k = 1") {
  const auto gs = scatter(10, 8, 0.7, 2.5, 6);
  const auto g = build_gram(gs).gram;
  for (int k : {1, 2, 4, 6}) {
    const auto greedy = greedy_dopt(g, k);
    const auto best = brute_force_dopt(g, k);
    CHECK(*logdet_subset(g, greedy) <= *logdet_subset(g, best) + 1e-12);
    if (k == 1) CHECK(greedy == best);
  }
}

TEST_CASE("duplicate primitives make the subset singular") {
  auto gs = scatter(3, 5, 1, 2, 7);
  gs.push_back(gs[0]);
  const auto g = build_gram(gs).gram;
  CHECK_FALSE(logdet_subset(g, std::vector<int>{0, 3}).has_value());
  CHECK(logdet_subset(g, std::vector<int>{0, 1}).has_value());
}

TEST_CASE("overlap surrogate bounds the log-determinant error") {
  const auto gs = scatter(8, 40, 1, 3, 8);
  const auto gm = build_gram(gs);
  std::vector<int> all(gs.size());
  std::iota(all.begin(), all.end(), 0);
  const auto sur = surrogate_overlap(gm.correlation, all);
  REQUIRE(sur.has_value());
  const double exact = logdet_lu(gm.correlation, all);
  CHECK(std::abs(exact - sur->approx) <= sur->bound + 1e-12);
  Eigen::MatrixXd off = gm.correlation - Eigen::MatrixXd::Identity(8, 8);
  CHECK(sur->alpha == doctest::Approx(off.jacobiSvd().singularValues()[0]).epsilon(1e-8));
  // log det G[S] = sum log G_ii + log det R[S]
  CHECK(*logdet_subset(gm.gram, all) == doctest::Approx(gm.diag.array().log().sum() + exact).epsilon(1e-10));
}

TEST_CASE("heavy overlap leaves the surrogate undefined") {
  std::vector<Gaussian2d> gs;
  for (int i = 0; i < 4; ++i) gs.push_back(Gaussian2d::from_scales({0.1 * i, 0}, 3, 3, 0, {1, 1, 1}));
  std::vector<int> all = {0, 1, 2, 3};
  CHECK_FALSE(surrogate_overlap(build_gram(gs).correlation, all).has_value());
}

TEST_CASE("ranking score uses k nearest centers") {
  const auto gs = scatter(40, 30, 0.5, 2.5, 9);
  const int k = 5;
  const double lambda = 3;
  const auto rank = rank_primitives(gs, k, lambda);
  for (std::size_t i = 0; i < gs.size(); ++i) {
    std::vector<std::pair<double, int>> d;
    for (std::size_t j = 0; j < gs.size(); ++j)
      if (j != i) d.push_back({(gs[i].mu - gs[j].mu).squaredNorm(), static_cast<int>(j)});
    std::sort(d.begin(), d.end());
    double rho = 0;
    for (int m = 0; m < k; ++m) {
      const double r = correlation_entry(gs[i], gs[static_cast<std::size_t>(d[m].second)]);
      rho += r * r;
    }
    CHECK(rank.rho[i] == doctest::Approx(rho).epsilon(1e-12));
    CHECK(rank.score[i] == doctest::Approx(gs[i].sx() * gs[i].sy() * std::exp(-lambda * rho)).epsilon(1e-12));
  }
  for (std::size_t i = 1; i < rank.order.size(); ++i)
    CHECK(rank.score[rank.order[i - 1]] >= rank.score[rank.order[i]]);
}

TEST_CASE("collinear centers keep the neighbor grid small") {
  std::vector<Gaussian2d> gs;
  for (int i = 0; i < 500; ++i) gs.push_back(Gaussian2d::from_scales({3.0 * i, 7.0}, 2, 2, 0, {1, 1, 1}));
  const auto rank = rank_primitives(gs, 4, 3.0);
  // interior primitives see neighbors at 3 and 6 px on both sides
  const double r3 = correlation_entry(gs[0], gs[1]), r6 = correlation_entry(gs[0], gs[2]);
  CHECK(rank.rho[250] == doctest::Approx(2 * r3 * r3 + 2 * r6 * r6));
}

TEST_CASE("ranking ties break by index") {
  std::vector<Gaussian2d> gs;
  for (int i = 0; i < 4; ++i) gs.push_back(Gaussian2d::from_scales({100.0 * i, 0}, 1, 1, 0, {1, 0, 0}));
  CHECK(rank_primitives(gs).order == std::vector<int>{0, 1, 2, 3});
  CHECK(rank_by_color_magnitude(gs).order == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("isolated primitives rank by area") {
  std::vector<Gaussian2d> gs;
  const double s[] = {1.0, 3.0, 2.0};
  for (int i = 0; i < 3; ++i) gs.push_back(Gaussian2d::from_scales({1000.0 * i, 0}, s[i], 1, 0, {1, 1, 1}));
  CHECK(rank_primitives(gs).order == std::vector<int>{1, 2, 0});
}

TEST_CASE("pruning to a budget follows the ranking inside the group") {
  const auto gs = scatter(20, 30, 0.3, 3, 10);
  const auto rank = rank_primitives(gs);
  const auto group = group_for_scale(gs, 2.0, default_beta());
  REQUIRE(group.members.size() >= 3);
  const auto res = prune_to_budget(group, rank, 3);
  CHECK_FALSE(res.clamped);
  std::vector<int> expected;
  for (int i : rank.order)
    if (std::binary_search(group.members.begin(), group.members.end(), i)) expected.push_back(i);
  expected.resize(3);
  CHECK(res.indices == expected);
  const auto all = prune_to_budget(group, rank, 1000);
  CHECK(all.clamped);
  CHECK(all.indices.size() == group.members.size());
  CHECK(prune_to_ratio(group, rank, 0.5).indices.size() ==
        static_cast<std::size_t>(std::lround(0.5 * group.members.size())));
  CHECK(prune_to_budget(group, rank, 0).indices.empty());
}

TEST_CASE("spectral norm by power iteration") {
  Eigen::MatrixXd a(3, 3);
  a << 2, 1, 0, 1, -3, 0.5, 0, 0.5, 1;
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues();
  CHECK(spectral_norm_symmetric(a) == doctest::Approx(ev.cwiseAbs().maxCoeff()).epsilon(1e-10));
}
