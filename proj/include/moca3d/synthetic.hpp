#pragma once

// Seeded cuboid scenes with exact projections, plus the corner/depth/box noise
// models used to calibrate the metrics.
//
// Seeding: the scene camera draws from splitmix64(seed) and instance k draws
// from instance_seed(seed, k), so instances can be generated in any order.

#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "moca3d/dataset.hpp"
#include "moca3d/dense_fields.hpp"
#include "moca3d/error.hpp"
#include "moca3d/geometry.hpp"

namespace moca3d {

inline constexpr int kGenerationRetries = 1000;
inline constexpr double kDepthFloor = 0.01;

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  void validate(const char* what) const {
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo > 0.0 && hi >= lo)) {
      fail(ErrorCode::InvalidArgument, std::string(what) + " range must be positive and non-empty");
    }
  }
};

struct SceneConfig {
  int instances = 4;
  Range depth{4.0, 30.0};      // center depth, meters
  Range size{0.4, 3.0};        // edge length, meters
  Range focal{518.0, 1708.0};  // pixels
  Range width{640.0, 1600.0};  // image size, pixels
  Range height{480.0, 1200.0};
  std::uint64_t seed = 0;
  std::string dataset = "synthetic";
  std::string image_id = "synthetic_0";
  double target = kDefaultLetterbox;  // letterbox side used by the area filter

  void validate() const {
    if (instances < 0) fail(ErrorCode::InvalidArgument, "instance count must be non-negative");
    depth.validate("depth");
    size.validate("size");
    focal.validate("focal");
    width.validate("width");
    height.validate("height");
  }
};

struct SyntheticScene {
  SceneAnnotation annotation;
  std::vector<Cuboid> cuboids;  // parallel to annotation.instances
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t instance_seed(std::uint64_t seed, int index) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

// Uniform over SO(3) from a uniformly random unit quaternion.
template <typename Rng>
Mat3 random_rotation(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double two_pi = 2.0 * std::acos(-1.0);
  Eigen::Quaterniond q(b * std::cos(two_pi * u3), a * std::sin(two_pi * u2), a * std::cos(two_pi * u2),
                       b * std::sin(two_pi * u3));
  return q.normalized().toRotationMatrix();
}

template <typename Rng>
double uniform(Rng& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

inline SyntheticScene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 cam_rng(splitmix64(cfg.seed));
  SyntheticScene out;
  SceneAnnotation& scene = out.annotation;
  scene.image_id = cfg.image_id;
  scene.dataset = cfg.dataset;
  scene.width = std::round(uniform(cam_rng, cfg.width));
  scene.height = std::round(uniform(cam_rng, cfg.height));
  const double f = uniform(cam_rng, cfg.focal);
  scene.intrinsics = Intrinsics::make(f, f, scene.width / 2.0, scene.height / 2.0);

  for (int k = 0; k < cfg.instances; ++k) {
    std::mt19937_64 rng(instance_seed(cfg.seed, k));
    bool placed = false;
    for (int attempt = 0; attempt < kGenerationRetries && !placed; ++attempt) {
      Cuboid box;
      box.size = Vec3(uniform(rng, cfg.size), uniform(rng, cfg.size), uniform(rng, cfg.size));
      box.rotation = random_rotation(rng);
      const double z = uniform(rng, cfg.depth);
      // Place the center behind a uniformly drawn pixel.
      const double u = uniform(rng, Range{1e-9, scene.width});
      const double v = uniform(rng, Range{1e-9, scene.height});
      box.center = Vec3((u - scene.intrinsics->cx) * z / f, (v - scene.intrinsics->cy) * z / f, z);

      const Corners3D pts = cuboid_to_corners(box);
      bool in_front = true;
      for (const auto& p : pts) in_front = in_front && p.z() > 0.0;
      if (!in_front) continue;

      InstanceRecord r;
      r.id = cfg.image_id + "_" + std::to_string(k);
      const CornerSet cs = project_corners(pts, *scene.intrinsics);
      r.corners = cs.uv;
      r.depths = cs.depth;
      r.category = "cuboid";
      r.flag = QualityFlag::Good;
      if (!corners_inside(r.corners, scene.width, scene.height)) continue;
      r.box = rough_box_from_corners(r.corners, scene.width, scene.height);
      if (rejection_reason(r, scene, cfg.target)) continue;

      scene.instances.push_back(std::move(r));
      out.cuboids.push_back(box);
      placed = true;
    }
    if (!placed) {
      fail(ErrorCode::GenerationExhausted, "instance " + std::to_string(k) + " of scene '" + cfg.image_id +
                                               "' not placed after " + std::to_string(kGenerationRetries) + " tries");
    }
  }
  return out;
}

// Scene i uses seed splitmix64(base_seed + i) and image id "<prefix>_<i>".
inline std::vector<SyntheticScene> generate_dataset(SceneConfig cfg, int scenes, const std::string& prefix = "scene") {
  std::vector<SyntheticScene> out;
  const std::uint64_t base = cfg.seed;
  for (int i = 0; i < scenes; ++i) {
    cfg.seed = splitmix64(base + static_cast<std::uint64_t>(i));
    cfg.image_id = prefix + "_" + std::to_string(i);
    out.push_back(generate_scene(cfg));
  }
  return out;
}

struct NoiseSpec {
  double corner_sigma = 0.0;    // pixels
  double depth_sigma = 0.0;     // relative
  double box_sigma = 0.02;      // normalized box units
  std::uint64_t seed = 0;

  void validate() const {
    if (!(corner_sigma >= 0.0 && depth_sigma >= 0.0 && box_sigma >= 0.0)) {
      fail(ErrorCode::InvalidArgument, "noise sigmas must be non-negative");
    }
  }
};

inline CornerSet perturb(const CornerSet& gt, const NoiseSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  CornerSet out = gt;
  for (auto& p : out.uv) {
    const double dx = normal(rng), dy = normal(rng);
    p += spec.corner_sigma * Vec2(dx, dy);
  }
  for (double& d : out.depth) d = std::max(d * (1.0 + spec.depth_sigma * normal(rng)), kDepthFloor);
  return out;
}

// Jitters each normalized box edge; the result keeps x1 < x2 and y1 < y2.
inline Box2 perturb_box(const Box2& box, const NoiseSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(splitmix64(spec.seed));
  std::normal_distribution<double> normal(0.0, spec.box_sigma);
  double e[4] = {box.x1, box.y1, box.x2, box.y2};
  for (double& v : e) v += normal(rng);
  Box2 out{std::min(e[0], e[2]), std::min(e[1], e[3]), std::max(e[0], e[2]), std::max(e[1], e[3])};
  if (!(out.x2 > out.x1) || !(out.y2 > out.y1)) return box;
  return out;
}

// One projected cuboid on a square image, with corners mapped onto a grid and
// depths in virtual space: the target for the heatmap fitting demo.
struct FitInstance {
  Grid grid;
  Corners2D corners_grid{};
  CornerDepths depths{};  // virtual
  Corners2D corners_image{};
};

inline FitInstance synthetic_fit_instance(std::uint64_t seed, int grid_size, double image_size = kDefaultLetterbox,
                                          const VirtualCamera& vc = {}) {
  SceneConfig cfg;
  cfg.instances = 1;
  cfg.width = cfg.height = Range{image_size, image_size};
  cfg.seed = seed;
  const SyntheticScene scene = generate_scene(cfg);
  const auto& inst = scene.annotation.instances.front();
  const CornerSet cs = convert_depth_space(inst.corner_set(), scene.annotation.intrinsics->fy,
                                           scene.annotation.height, DepthSpace::Virtual, vc);
  FitInstance out;
  out.grid = Grid::make(grid_size, grid_size, image_size, image_size);
  out.corners_image = cs.uv;
  out.depths = cs.depth;
  for (int i = 0; i < kNumCorners; ++i) out.corners_grid[i] = out.grid.to_grid(cs.uv[i]);
  return out;
}

}  // namespace moca3d
