#pragma once

// Independent test oracles. Everything here recomputes expected values from
// first principles and must stay decoupled from the implementation paths it
// checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Exhaustive optimal 2-partition by within-cluster sum of squares. Point 0
/// is pinned to side 0 to halve the enumeration. n must be <= ~20.
inline double best_two_partition_wcss(const Eigen::MatrixXd& pts) {
  const auto n = static_cast<std::size_t>(pts.rows());
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 1; mask + 1 < (std::uint64_t{1} << (n - 1)) + 1; ++mask) {
    Eigen::RowVectorXd sum0 = Eigen::RowVectorXd::Zero(pts.cols());
    Eigen::RowVectorXd sum1 = Eigen::RowVectorXd::Zero(pts.cols());
    std::size_t n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool side1 = i > 0 && ((mask >> (i - 1)) & 1);
      if (side1) {
        sum1 += pts.row(static_cast<Eigen::Index>(i));
        ++n1;
      } else {
        sum0 += pts.row(static_cast<Eigen::Index>(i));
        ++n0;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const Eigen::RowVectorXd c0 = sum0 / static_cast<double>(n0);
    const Eigen::RowVectorXd c1 = sum1 / static_cast<double>(n1);
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool side1 = i > 0 && ((mask >> (i - 1)) & 1);
      wcss += (pts.row(static_cast<Eigen::Index>(i)) - (side1 ? c1 : c0)).squaredNorm();
    }
    best = std::min(best, wcss);
  }
  return best;
}

/// Direct silhouette computation: s(i) = (b-a)/max(a,b), singleton clusters
/// contribute 0.
inline double silhouette_direct(const Eigen::MatrixXd& pts, const std::vector<int>& assign) {
  const auto n = static_cast<std::size_t>(pts.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double a_sum = 0.0, b_sum = 0.0;
    std::size_t a_n = 0, b_n = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dist =
          (pts.row(static_cast<Eigen::Index>(i)) - pts.row(static_cast<Eigen::Index>(j))).norm();
      if (assign[j] == assign[i]) {
        a_sum += dist;
        ++a_n;
      } else {
        b_sum += dist;
        ++b_n;
      }
    }
    if (a_n == 0) continue;  // singleton
    const double a = a_sum / static_cast<double>(a_n);
    const double b = b_sum / static_cast<double>(b_n);
    if (std::max(a, b) > 0.0) total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

/// Pearson correlation of two columns.
inline double correlation(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const double mx = x.mean(), my = y.mean();
  const Eigen::VectorXd cx = x.array() - mx, cy = y.array() - my;
  const double denom = std::sqrt(cx.squaredNorm() * cy.squaredNorm());
  return denom == 0.0 ? 0.0 : cx.dot(cy) / denom;
}

}  // namespace oracle
