#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acbd/error.hpp"
#include "acbd/rng.hpp"

namespace acbd {

// ---------------------------------------------------------------------------
// whitening
// ---------------------------------------------------------------------------

struct WhitenTransform {
  Eigen::RowVectorXd mean;     // 1 x d
  Eigen::MatrixXd projection;  // d x k; (X - mean) * projection is white
  int requested = 0;
  bool rank_reduced = false;
};

struct Whitened {
  Eigen::MatrixXd data;  // n x k, zero column means, identity covariance
  WhitenTransform transform;
};

/// Center, eigendecompose the covariance (1/(n-1) convention), keep the top
/// k components, and scale by inverse-sqrt eigenvalues. Directions with no
/// variance are dropped; if fewer than k remain, the output shrinks and the
/// transform is flagged rank_reduced.
inline Whitened whiten(const Eigen::MatrixXd& m, int k) {
  const auto n = m.rows();
  if (n < 2 || n < k) fail(Errc::bad_argument, "whiten: need at least max(2, k) rows");
  if (k <= 0) fail(Errc::bad_argument, "whiten: component count must be positive");

  Whitened w;
  w.transform.requested = k;
  w.transform.mean = m.colwise().mean();
  const Eigen::MatrixXd centered = m.rowwise() - w.transform.mean;
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) fail(Errc::rank_deficient, "whiten: eigendecomposition failed");
  const Eigen::VectorXd& evals = es.eigenvalues();  // ascending
  const double max_eval = evals(evals.size() - 1);
  if (!(max_eval > 0.0)) fail(Errc::rank_deficient, "whiten: input has no variance");

  const double tol = max_eval * 1e-12;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = evals.size() - 1; i >= 0 && static_cast<int>(keep.size()) < k; --i) {
    if (evals(i) > tol) keep.push_back(i);
  }
  w.transform.rank_reduced = static_cast<int>(keep.size()) < k;

  w.transform.projection.resize(m.cols(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    w.transform.projection.col(static_cast<Eigen::Index>(j)) =
        es.eigenvectors().col(keep[j]) / std::sqrt(evals(keep[j]));
  }
  w.data = centered * w.transform.projection;
  return w;
}

// ---------------------------------------------------------------------------
// FastICA (logcosh contrast, symmetric decorrelation)
// ---------------------------------------------------------------------------

struct IcaTransform {
  WhitenTransform white;
  Eigen::MatrixXd unmixing;  // k x k, rows orthonormal in whitened space
  bool converged = true;
  int iterations = 0;
};

struct ReducedSegment {
  std::vector<std::int64_t> ids;  // aligned with component rows
  Eigen::MatrixXd components;     // n x k, unit-variance columns
  IcaTransform transform;
};

namespace detail {

/// W <- (W W^T)^{-1/2} W
inline Eigen::MatrixXd symmetric_decorrelate(const Eigen::MatrixXd& W) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W * W.transpose());
  const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-18).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * W;
}

}  // namespace detail

/// Fixed-point FastICA on the whitened input: tanh (logcosh) contrast,
/// symmetric decorrelation, tolerance 1e-4, at most 200 iterations, seeded
/// random orthonormal start. Non-convergence returns the last iterate with
/// transform.converged = false.
inline ReducedSegment fast_ica(const Eigen::MatrixXd& m, int k, std::uint64_t seed,
                               std::vector<std::int64_t> ids = {}) {
  if (m.rows() <= k) {
    fail(Errc::bad_argument, "fast_ica: need more samples than components");
  }
  Whitened w = whiten(m, k);
  const auto kept = static_cast<int>(w.data.cols());
  const auto n = static_cast<double>(w.data.rows());

  Rng rng(seed);
  Eigen::MatrixXd W(kept, kept);
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = rng.normal();
  }
  W = detail::symmetric_decorrelate(W);

  constexpr double tol = 1e-4;
  constexpr int max_iter = 200;
  bool converged = false;
  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::MatrixXd U = w.data * W.transpose();            // n x k projections
    const Eigen::MatrixXd G = U.array().tanh().matrix();         // g(u)
    const Eigen::VectorXd gp_mean =
        (1.0 - G.array().square()).matrix().colwise().mean().transpose();  // E[g'(u)]
    Eigen::MatrixXd Wn = (G.transpose() * w.data) / n - gp_mean.asDiagonal() * W;
    Wn = detail::symmetric_decorrelate(Wn);
    const double delta =
        ((Wn * W.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
    W = std::move(Wn);
    if (delta < tol) {
      converged = true;
      ++it;
      break;
    }
  }

  ReducedSegment out;
  out.ids = std::move(ids);
  out.components = w.data * W.transpose();
  out.transform.white = std::move(w.transform);
  out.transform.unmixing = std::move(W);
  out.transform.converged = converged;
  out.transform.iterations = it;
  return out;
}

// ---------------------------------------------------------------------------
// 2-means
// ---------------------------------------------------------------------------

struct ClusterResult {
  std::vector<int> assignments;  // per row, 0 or 1
  Eigen::MatrixXd centroids;     // 2 x k
  std::array<std::size_t, 2> sizes{0, 0};
  double inertia = 0.0;
  double silhouette = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;  // no two-cluster structure (all points identical)
};

namespace detail {

inline double sq_dist(const Eigen::MatrixXd& pts, Eigen::Index row, const Eigen::RowVectorXd& c) {
  return (pts.row(row) - c).squaredNorm();
}

struct LloydOutcome {
  std::vector<int> assign;
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
  bool valid = false;  // both clusters non-empty at convergence
};

/// One Hartigan pass: move single points between the clusters whenever the
/// exact WCSS delta is negative. Escapes the shallow local minima Lloyd
/// settles into when a small tight cluster hides inside a bigger one.
/// Returns true if any point moved.
inline bool hartigan_pass(const Eigen::MatrixXd& pts, std::vector<int>& assign,
                          Eigen::RowVectorXd& c0, Eigen::RowVectorXd& c1, std::size_t& n0,
                          std::size_t& n1) {
  bool moved = false;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const int a = assign[static_cast<std::size_t>(i)];
    const auto na = a == 0 ? n0 : n1;
    if (na <= 1) continue;
    const auto nb = a == 0 ? n1 : n0;
    Eigen::RowVectorXd& ca = a == 0 ? c0 : c1;
    Eigen::RowVectorXd& cb = a == 0 ? c1 : c0;
    const double da = (pts.row(i) - ca).squaredNorm();
    const double db = (pts.row(i) - cb).squaredNorm();
    const double delta = static_cast<double>(nb) / static_cast<double>(nb + 1) * db -
                         static_cast<double>(na) / static_cast<double>(na - 1) * da;
    if (delta < -1e-12) {
      ca = (ca * static_cast<double>(na) - pts.row(i)) / static_cast<double>(na - 1);
      cb = (cb * static_cast<double>(nb) + pts.row(i)) / static_cast<double>(nb + 1);
      assign[static_cast<std::size_t>(i)] = 1 - a;
      (a == 0 ? n0 : n1)--;
      (a == 0 ? n1 : n0)++;
      moved = true;
    }
  }
  return moved;
}

/// Lloyd iterations to an assignment fixpoint, then Hartigan single-point
/// refinement, alternating until neither changes anything. The final state
/// is a Lloyd fixpoint, so every point sits nearest its own centroid.
inline LloydOutcome lloyd2(const Eigen::MatrixXd& pts, Eigen::RowVectorXd c0,
                           Eigen::RowVectorXd c1) {
  const auto n = pts.rows();
  LloydOutcome out;
  out.assign.assign(static_cast<std::size_t>(n), 0);
  std::size_t n0 = 0, n1 = 0;

  const auto lloyd_to_fixpoint = [&]() -> bool {  // false if degenerate
    for (int iter = 0; iter < 300; ++iter) {
      bool changed = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int a = sq_dist(pts, i, c1) < sq_dist(pts, i, c0) ? 1 : 0;
        if (a != out.assign[static_cast<std::size_t>(i)]) {
          out.assign[static_cast<std::size_t>(i)] = a;
          changed = true;
        }
      }
      Eigen::RowVectorXd sum0 = Eigen::RowVectorXd::Zero(pts.cols());
      Eigen::RowVectorXd sum1 = Eigen::RowVectorXd::Zero(pts.cols());
      n0 = n1 = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (out.assign[static_cast<std::size_t>(i)] == 0) {
          sum0 += pts.row(i);
          ++n0;
        } else {
          sum1 += pts.row(i);
          ++n1;
        }
      }
      if (n0 == 0 || n1 == 0) {
        // re-seed the empty centroid at the point farthest from the other
        const Eigen::RowVectorXd& full = n0 == 0 ? c1 : c0;
        Eigen::Index far = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = sq_dist(pts, i, full);
          if (d > best) {
            best = d;
            far = i;
          }
        }
        if (best <= 0.0) return false;  // all points identical
        (n0 == 0 ? c0 : c1) = pts.row(far);
        continue;
      }
      c0 = sum0 / static_cast<double>(n0);
      c1 = sum1 / static_cast<double>(n1);
      if (!changed && iter > 0) break;
    }
    return true;
  };

  for (int round = 0; round < 20; ++round) {
    if (!lloyd_to_fixpoint()) return out;
    if (!hartigan_pass(pts, out.assign, c0, c1, n0, n1)) break;
    // recompute exact centroids before the next Lloyd round
    Eigen::RowVectorXd sum0 = Eigen::RowVectorXd::Zero(pts.cols());
    Eigen::RowVectorXd sum1 = Eigen::RowVectorXd::Zero(pts.cols());
    n0 = n1 = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (out.assign[static_cast<std::size_t>(i)] == 0) {
        sum0 += pts.row(i);
        ++n0;
      } else {
        sum1 += pts.row(i);
        ++n1;
      }
    }
    if (n0 == 0 || n1 == 0) return out;
    c0 = sum0 / static_cast<double>(n0);
    c1 = sum1 / static_cast<double>(n1);
    if (round == 19 && !lloyd_to_fixpoint()) return out;  // keep the fixpoint guarantee
  }

  out.centroids.resize(2, pts.cols());
  out.centroids.row(0) = c0;
  out.centroids.row(1) = c1;
  out.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.inertia += sq_dist(pts, i, out.centroids.row(out.assign[static_cast<std::size_t>(i)]));
  }
  out.valid = true;
  return out;
}

}  // namespace detail

/// k-means with k=2: k-means++ seeding, 10 restarts, Lloyd iterations to an
/// assignment fixpoint, lowest inertia kept. Cluster 0 is the larger cluster
/// (ties break toward the lower-norm centroid) so downstream "smaller cluster
/// is suspect" logic is stable. Identical-point inputs yield a degenerate
/// (n, 0) result.
inline ClusterResult kmeans2(const Eigen::MatrixXd& pts, std::uint64_t seed) {
  const auto n = pts.rows();
  if (n < 2) fail(Errc::bad_argument, "kmeans2: need at least 2 points");

  bool all_identical = true;
  for (Eigen::Index i = 1; i < n && all_identical; ++i) {
    all_identical = (pts.row(i) - pts.row(0)).squaredNorm() == 0.0;
  }
  ClusterResult res;
  if (all_identical) {
    res.assignments.assign(static_cast<std::size_t>(n), 0);
    res.centroids.resize(2, pts.cols());
    res.centroids.row(0) = pts.row(0);
    res.centroids.row(1) = pts.row(0);
    res.sizes = {static_cast<std::size_t>(n), 0};
    res.degenerate = true;
    return res;
  }

  constexpr int restarts = 10;
  detail::LloydOutcome best;
  double best_inertia = std::numeric_limits<double>::infinity();
  const auto consider = [&](detail::LloydOutcome outcome) {
    if (outcome.valid && outcome.inertia < best_inertia) {
      best_inertia = outcome.inertia;
      best = std::move(outcome);
    }
  };
  for (int r = 0; r < restarts; ++r) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r)));
    // k-means++: first centroid uniform, second proportional to squared distance
    const Eigen::RowVectorXd c0 = pts.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
    Eigen::VectorXd d2(n);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = detail::sq_dist(pts, i, c0);
    const double total = d2.sum();
    Eigen::Index second = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2(i);
        if (target <= 0.0) {
          second = i;
          break;
        }
      }
    } else {
      second = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    }
    consider(detail::lloyd2(pts, c0, pts.row(second)));
  }
  // deterministic restarts from the optimal 1-D split of each coordinate.
  // The reduction step axis-aligns independent structure, so a minority mode
  // shows up as a bimodal coordinate; starting Lloyd from that coordinate's
  // exact 2-means split lands in the right basin directly.
  {
    std::vector<std::pair<double, Eigen::Index>> order(static_cast<std::size_t>(n));
    std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> prefix_sq(static_cast<std::size_t>(n) + 1, 0.0);
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        order[static_cast<std::size_t>(i)] = {pts(i, j), i};
      }
      std::sort(order.begin(), order.end());
      for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        prefix[i + 1] = prefix[i] + order[i].first;
        prefix_sq[i + 1] = prefix_sq[i] + order[i].first * order[i].first;
      }
      double best_w = std::numeric_limits<double>::infinity();
      std::size_t best_cut = 1;
      for (std::size_t cut = 1; cut < static_cast<std::size_t>(n); ++cut) {
        const double nl = static_cast<double>(cut), nr = static_cast<double>(n) - nl;
        const double wl = prefix_sq[cut] - prefix[cut] * prefix[cut] / nl;
        const double sr = prefix[static_cast<std::size_t>(n)] - prefix[cut];
        const double wr = prefix_sq[static_cast<std::size_t>(n)] - prefix_sq[cut] - sr * sr / nr;
        if (wl + wr < best_w) {
          best_w = wl + wr;
          best_cut = cut;
        }
      }
      Eigen::RowVectorXd c0 = Eigen::RowVectorXd::Zero(pts.cols());
      Eigen::RowVectorXd c1 = Eigen::RowVectorXd::Zero(pts.cols());
      for (std::size_t i = 0; i < best_cut; ++i) c0 += pts.row(order[i].second);
      for (std::size_t i = best_cut; i < static_cast<std::size_t>(n); ++i) c1 += pts.row(order[i].second);
      c0 /= static_cast<double>(best_cut);
      c1 /= static_cast<double>(static_cast<std::size_t>(n) - best_cut);
      consider(detail::lloyd2(pts, c0, c1));
    }
  }
  if (!best.valid) {
    res.assignments.assign(static_cast<std::size_t>(n), 0);
    res.centroids.resize(2, pts.cols());
    res.centroids.row(0) = pts.colwise().mean();
    res.centroids.row(1) = res.centroids.row(0);
    res.sizes = {static_cast<std::size_t>(n), 0};
    res.degenerate = true;
    return res;
  }

  std::array<std::size_t, 2> sizes{0, 0};
  for (int a : best.assign) sizes[static_cast<std::size_t>(a)]++;
  bool swap_labels = sizes[1] > sizes[0];
  if (sizes[0] == sizes[1]) {
    swap_labels = best.centroids.row(1).norm() < best.centroids.row(0).norm();
  }
  if (swap_labels) {
    for (int& a : best.assign) a = 1 - a;
    best.centroids.row(0).swap(best.centroids.row(1));
    std::swap(sizes[0], sizes[1]);
  }
  res.assignments = std::move(best.assign);
  res.centroids = std::move(best.centroids);
  res.sizes = sizes;
  res.inertia = best.inertia;
  return res;
}

// ---------------------------------------------------------------------------
// silhouette
// ---------------------------------------------------------------------------

/// Mean over samples of (b-a)/max(a,b) with Euclidean distances; a point in
/// a singleton cluster contributes 0. Above 5000 points a seeded stratified
/// subsample of 5000 is scored instead.
inline double silhouette(const Eigen::MatrixXd& pts, const std::vector<int>& assignments,
                         std::uint64_t seed = 0) {
  const auto n = pts.rows();
  if (static_cast<std::size_t>(n) != assignments.size()) {
    fail(Errc::bad_argument, "silhouette: assignment size mismatch");
  }
  std::array<std::vector<Eigen::Index>, 2> members;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = assignments[static_cast<std::size_t>(i)];
    if (a != 0 && a != 1) fail(Errc::bad_argument, "silhouette: assignments must be 0/1");
    members[static_cast<std::size_t>(a)].push_back(i);
  }
  if (members[0].empty() || members[1].empty()) {
    fail(Errc::empty_cluster, "silhouette: both clusters must be non-empty");
  }

  constexpr std::size_t cap = 5000;
  if (static_cast<std::size_t>(n) > cap) {
    Rng rng(mix_seed(seed, 0x517));
    std::array<std::vector<Eigen::Index>, 2> kept;
    for (int c = 0; c < 2; ++c) {
      auto idx = members[static_cast<std::size_t>(c)];
      rng.shuffle(idx);
      auto want = static_cast<std::size_t>(std::lround(
          static_cast<double>(cap) * static_cast<double>(idx.size()) / static_cast<double>(n)));
      want = std::clamp<std::size_t>(want, 1, idx.size());
      idx.resize(want);
      kept[static_cast<std::size_t>(c)] = std::move(idx);
    }
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(kept[0].size() + kept[1].size()), pts.cols());
    std::vector<int> sub_assign;
    Eigen::Index row = 0;
    for (int c = 0; c < 2; ++c) {
      for (const auto i : kept[static_cast<std::size_t>(c)]) {
        sub.row(row++) = pts.row(i);
        sub_assign.push_back(c);
      }
    }
    return silhouette(sub, sub_assign, seed + 1);
  }

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(assignments[static_cast<std::size_t>(i)]);
    const auto& mine = members[own];
    const auto& other = members[1 - own];
    if (mine.size() <= 1) continue;  // singleton contributes 0
    double a = 0.0;
    for (const auto j : mine) {
      if (j != i) a += (pts.row(i) - pts.row(j)).norm();
    }
    a /= static_cast<double>(mine.size() - 1);
    double b = 0.0;
    for (const auto j : other) b += (pts.row(i) - pts.row(j)).norm();
    b /= static_cast<double>(other.size());
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

}  // namespace acbd
