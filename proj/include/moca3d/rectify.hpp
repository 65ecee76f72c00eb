#pragma once

// Closest valid cuboid to eight (noisy) 3D corner points.
//
// The input order is arbitrary (image-order canonicalization does not follow
// any 3D vertex convention), so every vertex labeling is tried up to the 24
// rotational symmetries of the cube, which the fitted rotation absorbs: 1680
// labelings. Each one gets a Kabsch rotation against the unit-cube template,
// per-axis least-squares scales, and a residual; the smallest residual wins.

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <vector>

#include "moca3d/error.hpp"
#include "moca3d/geometry.hpp"

namespace moca3d {

inline constexpr double kMinRectifiedSize = 1e-6;

namespace detail {

// Labelings (point i -> template vertex labels[i]) with point 0 on vertex 0
// and, among the points on the neighbors 1, 2, 4 of vertex 0, the one on
// vertex 1 having the smallest index. This picks one labeling per rotation
// class.
inline const std::vector<CornerPermutation>& rectify_labelings() {
  static const std::vector<CornerPermutation> labelings = [] {
    std::vector<CornerPermutation> out;
    CornerPermutation rest{0, 1, 2, 3, 4, 5, 6, 7};
    do {
      std::array<int, kNumCorners> point_of{};
      for (int i = 0; i < kNumCorners; ++i) point_of[rest[i]] = i;
      if (point_of[1] < point_of[2] && point_of[1] < point_of[4]) out.push_back(rest);
    } while (std::next_permutation(rest.begin() + 1, rest.end()));
    return out;
  }();
  return labelings;
}

}  // namespace detail

struct RectifyResult {
  Cuboid cuboid;
  double residual = 0.0;  // sum of squared corner distances to the fitted box
  CornerPermutation labels{};  // template vertex assigned to each input point
};

inline RectifyResult kabsch_rectify_detailed(const Corners3D& pts) {
  Vec3 center = Vec3::Zero();
  for (const auto& p : pts) {
    if (!p.allFinite()) fail(ErrorCode::InvalidArgument, "corner points must be finite");
    center += p;
  }
  center /= kNumCorners;

  Eigen::Matrix<double, kNumCorners, 3> centered;
  for (int i = 0; i < kNumCorners; ++i) centered.row(i) = (pts[i] - center).transpose();
  const Vec3 spread = Eigen::JacobiSVD<Eigen::Matrix<double, kNumCorners, 3>>(centered).singularValues();
  if (!(spread[0] > 0.0) || spread[1] <= 1e-9 * spread[0]) {
    fail(ErrorCode::DegenerateCorners, "corner set has rank < 2");
  }

  std::array<Vec3, kNumCorners> template_pts;
  for (int i = 0; i < kNumCorners; ++i) template_pts[i] = unit_cube_vertex(i);

  RectifyResult best;
  best.residual = std::numeric_limits<double>::infinity();
  for (const auto& labels : detail::rectify_labelings()) {
    Mat3 cross = Mat3::Zero();
    for (int i = 0; i < kNumCorners; ++i) cross += (pts[i] - center) * template_pts[labels[i]].transpose();
    Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 fix = Mat3::Identity();
    fix(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Mat3 rot = svd.matrixU() * fix * svd.matrixV().transpose();

    Vec3 size;
    for (int k = 0; k < 3; ++k) {
      double num = 0.0;
      double den = 0.0;
      for (int i = 0; i < kNumCorners; ++i) {
        const double t = template_pts[labels[i]][k];
        num += (pts[i] - center).dot(rot.col(k)) * t;
        den += t * t;
      }
      size[k] = std::max(num / den, kMinRectifiedSize);
    }
    double residual = 0.0;
    for (int i = 0; i < kNumCorners; ++i) {
      residual += (pts[i] - center - rot * size.cwiseProduct(template_pts[labels[i]])).squaredNorm();
    }
    if (residual < best.residual) {
      best.residual = residual;
      best.cuboid = Cuboid{center, size, rot};
      best.labels = labels;
    }
  }
  return best;
}

inline Cuboid kabsch_rectify(const Corners3D& pts) { return kabsch_rectify_detailed(pts).cuboid; }

}  // namespace moca3d
