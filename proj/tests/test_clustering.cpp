#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "acbd/clustering.hpp"
#include "acbd/rng.hpp"
#include "support/oracles.hpp"

using namespace acbd;

namespace {

Eigen::MatrixXd random_matrix(int n, int d, std::uint64_t seed, bool uniform = false) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = uniform ? rng.uniform(-1.0, 1.0) : rng.normal();
    }
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// whitening
// ---------------------------------------------------------------------------

TEST_CASE("whitening yields zero means and identity covariance within 1e-6") {
  Rng rng(12);
  const int n = 400, d = 8, k = 5;
  // correlated input: random base plus shared component
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i) {
    const double shared = rng.normal();
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal() + 0.8 * shared + 3.0;
  }
  const Whitened w = whiten(m, k);
  REQUIRE(w.data.cols() == k);
  REQUIRE_FALSE(w.transform.rank_reduced);
  CHECK(w.data.colwise().mean().cwiseAbs().maxCoeff() <= 1e-8);
  const Eigen::MatrixXd cov =
      w.data.transpose() * w.data / static_cast<double>(n - 1);
  CHECK((cov - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("whitening an already-white sample is close to a rotation") {
  const Eigen::MatrixXd m = random_matrix(10000, 10, 77);
  const Whitened w = whiten(m, 10);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w.transform.projection);
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    CHECK(svd.singularValues()(i) == Catch::Approx(1.0).margin(0.05));
  }
}

TEST_CASE("constant columns are dropped with a rank warning") {
  Eigen::MatrixXd m = random_matrix(50, 4, 5);
  m.col(2).setConstant(3.5);
  const Whitened w = whiten(m, 4);
  CHECK(w.transform.rank_reduced);
  CHECK(w.data.cols() == 3);
  const Eigen::MatrixXd cov = w.data.transpose() * w.data / 49.0;
  CHECK((cov - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("whitening rejects degenerate inputs") {
  SECTION("all-constant input") {
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(20, 3, 1.0);
    try {
      whiten(m, 2);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::rank_deficient);
    }
  }
  SECTION("too few rows") {
    CHECK_THROWS_AS(whiten(random_matrix(3, 4, 1), 4), Error);
  }
}

// ---------------------------------------------------------------------------
// FastICA
// ---------------------------------------------------------------------------

TEST_CASE("fast_ica recovers two mixed uniform sources up to sign and order") {
  const int n = 2000;
  Rng rng(42);
  Eigen::MatrixXd S(n, 2);
  for (int i = 0; i < n; ++i) {
    S(i, 0) = rng.uniform(-std::sqrt(3.0), std::sqrt(3.0));
    S(i, 1) = rng.uniform(-std::sqrt(3.0), std::sqrt(3.0));
  }
  Eigen::MatrixXd A(2, 2);
  A << 2.0, 1.0, 1.0, 3.0;
  const Eigen::MatrixXd X = S * A.transpose();

  const ReducedSegment red = fast_ica(X, 2, 9);
  REQUIRE(red.components.cols() == 2);
  CHECK(red.transform.converged);

  // max-correlation assignment between recovered and true sources
  double r00 = std::abs(oracle::correlation(red.components.col(0), S.col(0)));
  double r01 = std::abs(oracle::correlation(red.components.col(0), S.col(1)));
  double r10 = std::abs(oracle::correlation(red.components.col(1), S.col(0)));
  double r11 = std::abs(oracle::correlation(red.components.col(1), S.col(1)));
  const double paired = std::max(std::min(r00, r11), std::min(r01, r10));
  CHECK(paired >= 0.95);
}

TEST_CASE("fast_ica output has unit variance and low mutual correlation") {
  const int n = 3000;
  Rng rng(7);
  Eigen::MatrixXd S(n, 3);
  for (int i = 0; i < n; ++i) {
    S(i, 0) = rng.uniform(-1.0, 1.0);
    S(i, 1) = rng.normal() > 0 ? 1.0 : -1.0;  // binary source
    S(i, 2) = std::pow(rng.uniform(), 3.0) - 0.25;
  }
  const Eigen::MatrixXd A = random_matrix(3, 3, 100) + 2.0 * Eigen::MatrixXd::Identity(3, 3);
  const ReducedSegment red = fast_ica(S * A.transpose(), 3, 11);

  for (int j = 0; j < 3; ++j) {
    const double var = (red.components.col(j).array() -
                        red.components.col(j).mean()).square().sum() /
                       static_cast<double>(n - 1);
    CHECK(var == Catch::Approx(1.0).margin(1e-3));
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      CHECK(std::abs(oracle::correlation(red.components.col(a), red.components.col(b))) <= 0.1);
    }
  }
}

TEST_CASE("fast_ica is deterministic under a fixed seed") {
  const Eigen::MatrixXd X = random_matrix(500, 6, 13, true);
  const ReducedSegment a = fast_ica(X, 4, 21);
  const ReducedSegment b = fast_ica(X, 4, 21);
  CHECK(a.components == b.components);
  CHECK(a.transform.unmixing == b.transform.unmixing);
}

TEST_CASE("fast_ica rejects n <= k") {
  CHECK_THROWS_AS(fast_ica(random_matrix(5, 6, 1), 6, 1), Error);
}

TEST_CASE("fast_ica reduces rank when asked for more components than exist") {
  // 6 observed dims spanned by only 3 independent sources
  const int n = 800;
  Rng rng(3);
  Eigen::MatrixXd S(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) S(i, j) = rng.uniform(-1.0, 1.0);
  }
  const Eigen::MatrixXd A = random_matrix(6, 3, 200);
  const ReducedSegment red = fast_ica(S * A.transpose(), 6, 4);
  CHECK(red.transform.white.rank_reduced);
  CHECK(red.components.cols() == 3);
}

// ---------------------------------------------------------------------------
// kmeans2
// ---------------------------------------------------------------------------

TEST_CASE("kmeans2 separates the {0,1} vs {10,11} line points, zero-padded to 10-D") {
  Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(4, 10);
  pts(0, 0) = 0.0;
  pts(1, 0) = 1.0;
  pts(2, 0) = 10.0;
  pts(3, 0) = 11.0;
  const ClusterResult res = kmeans2(pts, 5);
  REQUIRE_FALSE(res.degenerate);
  CHECK(res.assignments[0] == res.assignments[1]);
  CHECK(res.assignments[2] == res.assignments[3]);
  CHECK(res.assignments[0] != res.assignments[2]);
  CHECK(res.sizes[0] == 2);
  CHECK(res.sizes[1] == 2);
  CHECK(res.inertia == Catch::Approx(oracle::best_two_partition_wcss(pts)).epsilon(1e-12));
}

TEST_CASE("kmeans2 matches the brute-force 2-partition oracle on >= 95% of 200 instances") {
  int optimal = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Rng rng(mix_seed(900, static_cast<std::uint64_t>(t)));
    const int n = 4 + static_cast<int>(rng.index(9));  // 4..12 points
    const int d = 1 + static_cast<int>(rng.index(3));
    Eigen::MatrixXd pts(n, d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) pts(i, j) = rng.uniform(0.0, 1.0);
    }
    const ClusterResult res = kmeans2(pts, mix_seed(901, static_cast<std::uint64_t>(t)));
    const double best = oracle::best_two_partition_wcss(pts);
    if (res.inertia <= best * (1.0 + 1e-9)) ++optimal;
  }
  INFO("optimal on " << optimal << "/" << trials);
  CHECK(optimal >= 190);
}

TEST_CASE("kmeans2 invariants: nearest-centroid assignments, larger cluster first") {
  const Eigen::MatrixXd pts = random_matrix(200, 5, 31, true);
  const ClusterResult res = kmeans2(pts, 17);
  REQUIRE(res.sizes[0] + res.sizes[1] == 200);
  CHECK(res.sizes[0] >= res.sizes[1]);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double d0 = (pts.row(i) - res.centroids.row(0)).squaredNorm();
    const double d1 = (pts.row(i) - res.centroids.row(1)).squaredNorm();
    const int nearest = d1 < d0 ? 1 : 0;
    CHECK(res.assignments[static_cast<std::size_t>(i)] == nearest);
  }
}

TEST_CASE("kmeans2 is deterministic and flags identical points as degenerate") {
  const Eigen::MatrixXd pts = random_matrix(60, 4, 71, true);
  const ClusterResult a = kmeans2(pts, 3);
  const ClusterResult b = kmeans2(pts, 3);
  CHECK(a.assignments == b.assignments);
  CHECK(a.inertia == b.inertia);

  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(15, 4, 2.5);
  const ClusterResult deg = kmeans2(same, 3);
  CHECK(deg.degenerate);
  CHECK(deg.sizes[0] == 15);
  CHECK(deg.sizes[1] == 0);

  CHECK_THROWS_AS(kmeans2(random_matrix(1, 3, 1), 1), Error);
}

// ---------------------------------------------------------------------------
// silhouette
// ---------------------------------------------------------------------------

TEST_CASE("silhouette matches the direct oracle on two tight far blobs") {
  Eigen::MatrixXd pts(4, 2);
  pts << 0, 0, 0, 1, 10, 10, 10, 11;
  const std::vector<int> assign{0, 0, 1, 1};
  const double expected = oracle::silhouette_direct(pts, assign);
  const double got = silhouette(pts, assign);
  CHECK(std::abs(got - expected) <= 1e-9);
  // hand-derived value for this configuration
  CHECK(expected == Catch::Approx(0.9293).margin(0.0005));
}

TEST_CASE("silhouette matches the oracle on random assignments to 1e-9") {
  for (const std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const Eigen::MatrixXd pts = random_matrix(80, 6, seed, true);
    Rng rng(seed + 100);
    std::vector<int> assign;
    for (int i = 0; i < 80; ++i) assign.push_back(static_cast<int>(rng.index(2)));
    if (std::count(assign.begin(), assign.end(), 0) == 0) assign[0] = 0;
    if (std::count(assign.begin(), assign.end(), 1) == 0) assign[1] = 1;
    CHECK(std::abs(silhouette(pts, assign) - oracle::silhouette_direct(pts, assign)) <= 1e-9);
  }
}

TEST_CASE("silhouette of a regular simplex split is zero by symmetry") {
  // equilateral triangle, one point vs two: every pairwise distance equal
  Eigen::MatrixXd pts(3, 2);
  pts << 0.0, 0.0, 1.0, 0.0, 0.5, std::sqrt(3.0) / 2.0;
  const std::vector<int> assign{0, 1, 1};
  CHECK(std::abs(silhouette(pts, assign)) <= 1e-9);
}

TEST_CASE("silhouette is invariant under translation and uniform scaling") {
  const Eigen::MatrixXd pts = random_matrix(50, 4, 17, true);
  Rng rng(18);
  std::vector<int> assign;
  for (int i = 0; i < 50; ++i) assign.push_back(static_cast<int>(rng.index(2)));
  assign[0] = 0;
  assign[1] = 1;
  const double base = silhouette(pts, assign);
  Eigen::MatrixXd moved = pts;
  moved.array() += 12.75;
  moved *= 3.5;
  CHECK(silhouette(moved, assign) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("silhouette requires both clusters non-empty") {
  const Eigen::MatrixXd pts = random_matrix(10, 3, 19);
  const std::vector<int> assign(10, 0);
  try {
    silhouette(pts, assign);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_cluster);
  }
}

TEST_CASE("silhouette subsamples above 5000 points and stays in range") {
  const int n = 6000;
  Eigen::MatrixXd pts = random_matrix(n, 3, 23);
  std::vector<int> assign;
  for (int i = 0; i < n; ++i) assign.push_back(i < 5200 ? 0 : 1);
  pts.bottomRows(800).array() += 6.0;  // separated minority cluster
  const double s = silhouette(pts, assign, 5);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
  CHECK(s > 0.2);  // clearly two clusters
  CHECK(silhouette(pts, assign, 5) == s);  // deterministic under the seed
}
