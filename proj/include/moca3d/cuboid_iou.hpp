#pragma once

// Intersection-over-union of oriented cuboids. The exact path clips one box's
// polytope against the six half-spaces of the other; the Monte-Carlo path is
// an independent estimator used to check it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "moca3d/geometry.hpp"

namespace moca3d {

using Polygon3 = std::vector<Vec3>;

struct Polytope {
  std::vector<Polygon3> faces;  // each face convex, vertices in cyclic order
};

inline Polytope cuboid_polytope(const Cuboid& box) {
  const Corners3D v = cuboid_to_corners(box);
  // vertex index bits: 1 = +x, 2 = +y, 4 = +z
  static constexpr int kFaces[6][4] = {{0, 2, 6, 4}, {1, 3, 7, 5}, {0, 1, 5, 4},
                                       {2, 3, 7, 6}, {0, 1, 3, 2}, {4, 5, 7, 6}};
  Polytope p;
  for (const auto& f : kFaces) p.faces.push_back({v[f[0]], v[f[1]], v[f[2]], v[f[3]]});
  return p;
}

namespace detail {

inline void push_unique(std::vector<Vec3>& pts, const Vec3& q, double tol) {
  for (const auto& p : pts) {
    if ((p - q).squaredNorm() <= tol * tol) return;
  }
  pts.push_back(q);
}

// Keeps the part of `poly` with n.x <= d.
inline Polytope clip(const Polytope& poly, const Vec3& n, double d, double tol) {
  Polytope out;
  std::vector<Vec3> on_plane;
  bool has_coplanar_face = false;
  for (const auto& face : poly.faces) {
    Polygon3 kept;
    const std::size_t m = face.size();
    for (std::size_t i = 0; i < m; ++i) {
      const Vec3& a = face[i];
      const Vec3& b = face[(i + 1) % m];
      const double da = n.dot(a) - d;
      const double db = n.dot(b) - d;
      const bool ina = da <= tol;
      const bool inb = db <= tol;
      if (ina) kept.push_back(a);
      if (ina != inb) {
        const double t = std::clamp(da / (da - db), 0.0, 1.0);
        kept.push_back(a + t * (b - a));
      }
    }
    if (kept.size() < 3) continue;
    bool all_on = true;
    for (const auto& q : kept) {
      if (std::abs(n.dot(q) - d) <= tol) {
        push_unique(on_plane, q, tol);
      } else {
        all_on = false;
      }
    }
    has_coplanar_face = has_coplanar_face || all_on;
    out.faces.push_back(std::move(kept));
  }
  if (has_coplanar_face || on_plane.size() < 3 || out.faces.empty()) return out;

  // Close the cut with a cap polygon ordered by angle in the plane.
  Vec3 centroid = Vec3::Zero();
  for (const auto& q : on_plane) centroid += q;
  centroid /= static_cast<double>(on_plane.size());
  const Vec3 e1 = n.unitOrthogonal();
  const Vec3 e2 = n.normalized().cross(e1);
  std::sort(on_plane.begin(), on_plane.end(), [&](const Vec3& a, const Vec3& b) {
    return std::atan2((a - centroid).dot(e2), (a - centroid).dot(e1)) <
           std::atan2((b - centroid).dot(e2), (b - centroid).dot(e1));
  });
  out.faces.push_back(std::move(on_plane));
  return out;
}

}  // namespace detail

// Volume by fan tetrahedra from the vertex mean (interior for convex input).
inline double polytope_volume(const Polytope& poly) {
  Vec3 o = Vec3::Zero();
  std::size_t count = 0;
  for (const auto& f : poly.faces) {
    for (const auto& q : f) o += q;
    count += f.size();
  }
  if (count == 0) return 0.0;
  o /= static_cast<double>(count);
  double vol = 0.0;
  for (const auto& f : poly.faces) {
    for (std::size_t i = 1; i + 1 < f.size(); ++i) {
      vol += std::abs((f[0] - o).dot((f[i] - o).cross(f[i + 1] - o))) / 6.0;
    }
  }
  return vol;
}

inline double intersection_volume(const Cuboid& a, const Cuboid& b) {
  const double scale = std::max(a.size.maxCoeff(), b.size.maxCoeff()) + (a.center - b.center).norm();
  const double tol = 1e-12 * std::max(scale, 1.0);
  Polytope poly = cuboid_polytope(a);
  for (int k = 0; k < 3 && !poly.faces.empty(); ++k) {
    const Vec3 axis = b.rotation.col(k);
    const double half = 0.5 * b.size[k];
    poly = detail::clip(poly, axis, axis.dot(b.center) + half, tol);
    if (poly.faces.empty()) break;
    poly = detail::clip(poly, -axis, -axis.dot(b.center) + half, tol);
  }
  return polytope_volume(poly);
}

inline double iou3d(const Cuboid& a, const Cuboid& b) {
  const double inter = intersection_volume(a, b);
  const double uni = a.volume() + b.volume() - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline bool cuboid_contains(const Cuboid& box, const Vec3& p) {
  const Vec3 local = box.rotation.transpose() * (p - box.center);
  return (local.cwiseAbs().array() <= 0.5 * box.size.array()).all();
}

// Rejection sampling in the joint axis-aligned bounding box.
inline double iou3d_mc(const Cuboid& a, const Cuboid& b, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) fail(ErrorCode::InvalidArgument, "Monte-Carlo IoU needs at least one sample");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto* box : {&a, &b}) {
    for (const auto& p : cuboid_to_corners(*box)) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(lo.x(), hi.x()), uy(lo.y(), hi.y()), uz(lo.z(), hi.z());
  std::size_t both = 0;
  std::size_t either = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    const bool in_a = cuboid_contains(a, p);
    const bool in_b = cuboid_contains(b, p);
    both += in_a && in_b;
    either += in_a || in_b;
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

}  // namespace moca3d
