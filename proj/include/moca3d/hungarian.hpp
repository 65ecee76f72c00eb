#pragma once

// Minimum-cost perfect assignment on a square cost matrix (Kuhn-Munkres with
// row/column potentials, O(n^3)).

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <vector>

#include "moca3d/error.hpp"

namespace moca3d {

struct AssignmentResult {
  std::vector<int> row_to_col;  // row i is matched to column row_to_col[i]
  double cost = 0.0;
};

inline AssignmentResult hungarian_assign(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) fail(ErrorCode::ShapeMismatch, "assignment needs a square cost matrix");
  if (!cost.allFinite()) fail(ErrorCode::NonFiniteCost, "assignment cost matrix has non-finite entries");
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();

  // 1-based; column 0 is a virtual start column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        // strict < keeps the lowest column index on ties
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  AssignmentResult r;
  r.row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j) r.row_to_col[match[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) r.cost += cost(i, r.row_to_col[i]);
  return r;
}

}  // namespace moca3d
