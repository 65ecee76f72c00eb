#pragma once

// Camera-frame geometry: pinhole projection, cuboid vertices, image-order
// canonicalization, letterboxing and virtual depth.
//
// Conventions: camera frame is +x right, +y down, +z forward. Pixel
// coordinates (u, v) are measured at pixel centers with the origin at the
// top-left and v growing downward.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "moca3d/error.hpp"

namespace moca3d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kNumCorners = 8;

using Corners2D = std::array<Vec2, kNumCorners>;
using Corners3D = std::array<Vec3, kNumCorners>;
using CornerDepths = std::array<double, kNumCorners>;
using CornerPermutation = std::array<int, kNumCorners>;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  static Intrinsics make(double fx, double fy, double cx, double cy) {
    Intrinsics k{fx, fy, cx, cy};
    k.validate();
    return k;
  }

  // Row-major 3x3 K; skew and the bottom row are ignored after validation.
  static Intrinsics from_row_major(const std::array<double, 9>& m) {
    if (m[1] != 0.0 || m[3] != 0.0 || m[6] != 0.0 || m[7] != 0.0 || m[8] != 1.0) {
      fail(ErrorCode::InvalidArgument, "intrinsics matrix must be [fx 0 cx; 0 fy cy; 0 0 1]");
    }
    return make(m[0], m[4], m[2], m[5]);
  }

  bool operator==(const Intrinsics&) const = default;

  std::array<double, 9> row_major() const { return {fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0}; }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  void validate() const {
    if (!(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy))) {
      fail(ErrorCode::InvalidArgument, "intrinsics must be finite");
    }
    if (!(fx > 0.0 && fy > 0.0)) {
      fail(ErrorCode::InvalidArgument, "focal lengths must be positive");
    }
  }
};

enum class DepthSpace { Metric, Virtual };

inline std::string_view to_string(DepthSpace space) {
  return space == DepthSpace::Metric ? "metric" : "virtual";
}

inline DepthSpace depth_space_from_string(std::string_view s) {
  if (s == "metric") return DepthSpace::Metric;
  if (s == "virtual") return DepthSpace::Virtual;
  fail(ErrorCode::InvalidArgument, "unknown depth space '" + std::string(s) + "'");
}

// Eight image-plane corners with per-corner depth.
struct CornerSet {
  Corners2D uv{};
  CornerDepths depth{};
  DepthSpace space = DepthSpace::Metric;

  void validate() const {
    for (int i = 0; i < kNumCorners; ++i) {
      if (!uv[i].allFinite()) fail(ErrorCode::InvalidArgument, "corner uv must be finite");
      if (!(depth[i] > 0.0) || !std::isfinite(depth[i])) {
        fail(ErrorCode::NonPositiveDepth, "corner " + std::to_string(i) + " has non-positive depth");
      }
    }
  }
};

struct Cuboid {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  Mat3 rotation = Mat3::Identity();

  double volume() const { return size.prod(); }

  void validate(double tol = 1e-9) const {
    if (!center.allFinite() || !size.allFinite() || !rotation.allFinite()) {
      fail(ErrorCode::InvalidArgument, "cuboid must be finite");
    }
    if ((size.array() <= 0.0).any()) fail(ErrorCode::InvalidArgument, "cuboid size must be positive");
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(rotation.determinant() - 1.0) > tol) {
      fail(ErrorCode::InvalidArgument, "cuboid rotation must be a proper rotation");
    }
  }
};

// Vertex i uses sign bit 0 for x, bit 1 for y, bit 2 for z (clear = minus).
inline Vec3 unit_cube_vertex(int i) {
  return Vec3((i & 1) ? 0.5 : -0.5, (i & 2) ? 0.5 : -0.5, (i & 4) ? 0.5 : -0.5);
}

inline Corners3D cuboid_to_corners(const Cuboid& box) {
  Corners3D out;
  for (int i = 0; i < kNumCorners; ++i) {
    out[i] = box.center + box.rotation * unit_cube_vertex(i).cwiseProduct(box.size);
  }
  return out;
}

inline Vec2 project_point(const Vec3& p, const Intrinsics& k) {
  return Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy);
}

inline CornerSet project_corners(const Corners3D& pts, const Intrinsics& k) {
  CornerSet out;
  out.space = DepthSpace::Metric;
  for (int i = 0; i < kNumCorners; ++i) {
    if (!(pts[i].z() > 0.0)) {
      fail(ErrorCode::NonPositiveDepth, "corner " + std::to_string(i) + " is behind the camera");
    }
    out.uv[i] = project_point(pts[i], k);
    out.depth[i] = pts[i].z();
  }
  return out;
}

inline Corners3D unproject_corners(const CornerSet& cs, const Intrinsics& k) {
  if (cs.space != DepthSpace::Metric) {
    fail(ErrorCode::VirtualDepthNotConverted, "convert virtual depth to metric before unprojecting");
  }
  Corners3D out;
  for (int i = 0; i < kNumCorners; ++i) {
    const double d = cs.depth[i];
    if (!(d > 0.0)) fail(ErrorCode::NonPositiveDepth, "corner " + std::to_string(i) + " has non-positive depth");
    out[i] = Vec3((cs.uv[i].x() - k.cx) * d / k.fx, (cs.uv[i].y() - k.cy) * d / k.fy, d);
  }
  return out;
}

// Permutation that puts corners in image order: the four lowest (largest v)
// first, then the four upper ones, each group left to right. out[j] is the
// source index of output slot j.
//
// Group split sorts by (v descending, u ascending, index); within a group the
// key is (u ascending, index). On equal-v sets this yields plain left-to-right
// order.
inline CornerPermutation canonical_order(const Corners2D& uv) {
  CornerPermutation idx;
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (uv[a].y() != uv[b].y()) return uv[a].y() > uv[b].y();
    if (uv[a].x() != uv[b].x()) return uv[a].x() < uv[b].x();
    return a < b;
  });
  auto by_u = [&](int a, int b) {
    if (uv[a].x() != uv[b].x()) return uv[a].x() < uv[b].x();
    return a < b;
  };
  std::sort(idx.begin(), idx.begin() + 4, by_u);
  std::sort(idx.begin() + 4, idx.end(), by_u);
  return idx;
}

inline CornerSet apply_permutation(const CornerSet& cs, const CornerPermutation& perm) {
  CornerSet out;
  out.space = cs.space;
  for (int j = 0; j < kNumCorners; ++j) {
    out.uv[j] = cs.uv[perm[j]];
    out.depth[j] = cs.depth[perm[j]];
  }
  return out;
}

inline CornerSet canonicalize_image_order(const CornerSet& cs) {
  return apply_permutation(cs, canonical_order(cs.uv));
}

// Aspect-preserving resize of a src_w x src_h image into a dst x dst square
// with centered padding (odd remainders put the extra pixel on the trailing
// side).
struct LetterboxTransform {
  double scale = 1.0;
  double pad_x = 0.0;
  double pad_y = 0.0;
  double src_w = 0.0;
  double src_h = 0.0;
  double dst = 0.0;

  static LetterboxTransform make(double src_w, double src_h, double dst) {
    if (!(src_w > 0.0 && src_h > 0.0 && dst > 0.0)) {
      fail(ErrorCode::NonPositiveInput, "letterbox dimensions must be positive");
    }
    LetterboxTransform t;
    t.src_w = src_w;
    t.src_h = src_h;
    t.dst = dst;
    t.scale = dst / std::max(src_w, src_h);
    t.pad_x = std::floor((dst - std::round(src_w * t.scale)) / 2.0);
    t.pad_y = std::floor((dst - std::round(src_h * t.scale)) / 2.0);
    t.pad_x = std::max(t.pad_x, 0.0);
    t.pad_y = std::max(t.pad_y, 0.0);
    return t;
  }

  Vec2 forward(const Vec2& p) const { return Vec2(p.x() * scale + pad_x, p.y() * scale + pad_y); }
  Vec2 inverse(const Vec2& p) const { return Vec2((p.x() - pad_x) / scale, (p.y() - pad_y) / scale); }
};

enum class Direction { Forward, Inverse };

template <typename Range>
Range letterbox_points(Range points, const LetterboxTransform& t, Direction dir) {
  for (auto& p : points) p = dir == Direction::Forward ? t.forward(p) : t.inverse(p);
  return points;
}

// Fixed virtual camera used to normalize depth across focal lengths.
struct VirtualCamera {
  double focal = 512.0;
  double height = 512.0;
};

enum class DepthConversion { ToVirtual, ToMetric };

// d_virtual = d * (f_v / f) * (H / H_v)
inline double virtual_depth_convert(double depth, double focal, double image_height, DepthConversion dir,
                                    const VirtualCamera& vc = {}) {
  if (!(depth > 0.0 && focal > 0.0 && image_height > 0.0 && vc.focal > 0.0 && vc.height > 0.0)) {
    fail(ErrorCode::NonPositiveInput, "virtual depth conversion needs positive depth, focal and height");
  }
  const double ratio = (vc.focal / focal) * (image_height / vc.height);
  return dir == DepthConversion::ToVirtual ? depth * ratio : depth / ratio;
}

inline CornerSet convert_depth_space(CornerSet cs, double focal, double image_height, DepthSpace target,
                                     const VirtualCamera& vc = {}) {
  if (cs.space == target) return cs;
  const auto dir = target == DepthSpace::Virtual ? DepthConversion::ToVirtual : DepthConversion::ToMetric;
  for (double& d : cs.depth) d = virtual_depth_convert(d, focal, image_height, dir, vc);
  cs.space = target;
  return cs;
}

struct CubePrior {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Zero();
};

// Center is the corner mean; the size is the isotropic cube whose
// circumradius matches the mean center-to-corner distance.
inline CubePrior cube_prior(const Corners3D& pts) {
  CubePrior out;
  for (const auto& p : pts) out.center += p;
  out.center /= kNumCorners;
  double r = 0.0;
  for (const auto& p : pts) r += (p - out.center).norm();
  r /= kNumCorners;
  out.size = Vec3::Constant(2.0 / std::sqrt(3.0) * r);
  return out;
}

}  // namespace moca3d
