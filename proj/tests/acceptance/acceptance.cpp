// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--known-failure N]...
//
// Exit status is 0 when the set of failing criteria equals the set passed
// with --known-failure; a known failure that starts passing is reported too.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "moca3d/moca3d.hpp"

using namespace moca3d;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int size : {8, 16}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) worst = std::max(worst, run_gradcheck(seed, size, 1e-4).max_rel());
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-4 && t < 30.0, fmt("max relative error %.3e (<= 1e-4), %.1f s (< 30 s)", worst, t)};
}

Outcome hungarian_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int agree = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd cost(8, 8);
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) cost(i, j) = unit(rng);
    }
    std::array<int, 8> perm;
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
      double c = 0.0;
      for (int i = 0; i < 8; ++i) c += cost(i, perm[i]);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double got = hungarian_assign(cost).cost;
    worst = std::max(worst, std::abs(got - best));
    agree += std::abs(got - best) <= 1e-12;
  }
  const double t = seconds_since(t0);
  return {agree == 100 && t < 10.0,
          fmt("%d/100 match brute force (max gap %.1e), %.2f s (< 10 s)", agree, worst, t)};
}

Cuboid random_cuboid(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Cuboid c;
  c.center = Vec3(unit(rng), unit(rng), unit(rng)) * 0.8;
  c.size = Vec3(0.5 + unit(rng), 0.5 + unit(rng), 0.5 + unit(rng));
  c.rotation = random_rotation(rng);
  return c;
}

Outcome iou_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const Cuboid a{Vec3::Zero(), Vec3::Ones(), Mat3::Identity()};
  const Cuboid b{Vec3(0.5, 0.0, 0.0), Vec3::Ones(), Mat3::Identity()};
  const double offset_case = iou3d(a, b);
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Cuboid x = random_cuboid(rng);
    const Cuboid y = random_cuboid(rng);
    worst = std::max(worst, std::abs(iou3d(x, y) - iou3d_mc(x, y, 200000, 1000 + i)));
  }
  const double t = seconds_since(t0);
  const bool exact = std::abs(offset_case - 1.0 / 3.0) <= 1e-12;
  return {exact && worst <= 0.01 && t < 60.0,
          fmt("offset case %.15f (1/3), max |exact - MC| %.4f (<= 0.01) over 50 pairs, %.1f s (< 60 s)", offset_case,
              worst, t)};
}

Outcome rectification_fidelity() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 1.0;
  for (int i = 0; i < 200; ++i) {
    Cuboid c;
    c.center = Vec3(unit(rng) * 10 - 5, unit(rng) * 4 - 2, 2 + unit(rng) * 40);
    c.size = Vec3(0.2 + 3 * unit(rng), 0.2 + 3 * unit(rng), 0.2 + 3 * unit(rng));
    c.rotation = random_rotation(rng);
    worst = std::min(worst, iou3d(c, kabsch_rectify(cuboid_to_corners(c))));
  }
  return {worst >= 1.0 - 1e-6, fmt("min IoU3D %.12f over 200 cuboids (>= 1 - 1e-6)", worst)};
}

// Known corners of seeded synthetic cuboids on a 512 px image, 128 x 128
// grid; error measured in grid pixels.
Outcome synthesis_round_trip() {
  constexpr int kInstances = 100;
  double worst = 0.0, worst_axis = 0.0, depth_gap = 0.0;
  int within = 0;
  for (std::uint64_t seed = 0; seed < kInstances; ++seed) {
    const FitInstance inst = synthetic_fit_instance(seed, kDefaultGridSize);
    const TargetHeatmaps tm = target_heatmaps(inst.corners_grid, inst.grid, adaptive_sigma2(inst.corners_grid));
    HeatField field(inst.grid.height, inst.grid.width);
    field.heat = tm.values;
    for (int c = 0; c < kNumCorners; ++c) {
      for (double& z : field.depth.channel(c)) z = inst.depths[c];
    }
    const CornerSet cs = extract_corners(field, inst.grid, kDefaultBeta);
    for (int c = 0; c < kNumCorners; ++c) {
      const Vec2 err = inst.grid.to_grid(cs.uv[c]) - inst.corners_grid[c];
      worst = std::max(worst, err.norm());
      worst_axis = std::max(worst_axis, err.cwiseAbs().maxCoeff());
      within += err.norm() < 0.5;
      depth_gap = std::max(depth_gap, std::abs(cs.depth[c] - inst.depths[c]));
    }
  }
  return {worst < 0.5 && depth_gap == 0.0,
          fmt("max corner error %.4f grid px (< 0.5), %d/%d corners within, max per-axis %.4f; max depth gap %.1e "
              "(exact)",
              worst, within, kInstances * kNumCorners, worst_axis, depth_gap)};
}

struct FitRun {
  FitResult result;
  double max_px = 0.0;
  double depth_rel = 0.0;
};

FitRun run_fit(const FitInstance& inst, const FitConfig& cfg) {
  const FitTargets targets = make_targets(inst.corners_grid, inst.depths, inst.grid, cfg.loss);
  FitRun r{fit_heatmaps(targets, inst.grid, cfg)};
  for (int c = 0; c < kNumCorners; ++c) {
    r.max_px = std::max(r.max_px, (r.result.corners.uv[c] - inst.corners_image[c]).norm());
    r.depth_rel += std::abs(r.result.corners.depth[c] - inst.depths[c]) / inst.depths[c] / kNumCorners;
  }
  return r;
}

bool same_trace(const std::vector<LossReport>& a, const std::vector<LossReport>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(LossReport)) != 0) return false;
  }
  return true;
}

Outcome training_surrogate() {
  const auto t0 = std::chrono::steady_clock::now();
  const FitInstance inst = synthetic_fit_instance(0, 64);
  FitConfig cfg;
  cfg.steps = 500;
  const FitRun a = run_fit(inst, cfg);
  const FitRun b = run_fit(inst, cfg);
  const double t = seconds_since(t0) / 2.0;
  const bool identical = same_trace(a.result.trace, b.result.trace);
  return {a.max_px < 0.5 && a.depth_rel < 0.01 && identical && t < 60.0,
          fmt("max corner error %.4f px at 512 px (< 0.5), mean relative depth error %.4f%% (< 1%%), "
              "repeat run %s, %.1f s per fit (< 60 s)",
              a.max_px, 100.0 * a.depth_rel, identical ? "bitwise identical" : "DIFFERS", t)};
}

Outcome peak_sharpening() {
  const FitInstance inst = synthetic_fit_instance(0, 64);
  FitConfig sharp;
  FitConfig flat;
  flat.loss.lambda = 1.0;
  const FitRun a = run_fit(inst, sharp);
  const FitRun b = run_fit(inst, flat);
  auto ratio = [](const HeatField& f, int c) {
    const auto ch = f.heat.channel(c);
    double mx = 0.0, sum = 0.0;
    for (double v : ch) {
      mx = std::max(mx, v);
      sum += v;
    }
    return mx / (sum / static_cast<double>(ch.size()));
  };
  int larger = 0;
  std::ostringstream per;
  for (int c = 0; c < kNumCorners; ++c) {
    const double ra = ratio(a.result.field, c), rb = ratio(b.result.field, c);
    larger += ra > rb;
    per << (c ? " " : "") << fmt("%.0f/%.0f", ra, rb);
  }
  return {larger == kNumCorners, fmt("%d/8 channels larger with lambda=50 (max/mean lambda50/lambda1: %s)", larger,
                                     per.str().c_str())};
}

Outcome metric_calibration() {
  SceneConfig cfg;
  cfg.instances = 10;
  cfg.width = cfg.height = Range{512.0, 512.0};
  cfg.seed = 8;
  const auto data = generate_dataset(cfg, 100);
  std::vector<SceneAnnotation> gt;
  std::vector<PredictionRecord> uv_noise, depth_noise;
  std::uint64_t k = 0;
  for (const auto& s : data) {
    gt.push_back(s.annotation);
    for (const auto& r : s.annotation.instances) {
      const CornerSet ordered = canonicalize_image_order(r.corner_set());
      NoiseSpec nu;
      nu.corner_sigma = 2.0;
      nu.seed = 2 * k;
      NoiseSpec nd;
      nd.depth_sigma = 0.05;
      nd.seed = 2 * k + 1;
      ++k;
      uv_noise.push_back({r.id, perturb(ordered, nu), std::nullopt});
      depth_noise.push_back({r.id, perturb(ordered, nd), std::nullopt});
    }
  }
  const double pi = std::acos(-1.0);
  const double rayleigh = 2.0 * std::sqrt(pi / 2.0);
  const double half_normal = 5.0 * std::sqrt(2.0 / pi);
  const MetricsReport ru = evaluate(uv_noise, gt);
  const MetricsReport rd = evaluate(depth_noise, gt);
  const double eu = std::abs(ru.global.pag_uv / rayleigh - 1.0);
  const double ed = std::abs(rd.global.pag_d / half_normal - 1.0);
  return {ru.global.count == 1000 && eu <= 0.05 && ed <= 0.05,
          fmt("n=%zu, PAG_uv %.4f vs %.4f (%.2f%%), PAG_d %.4f%% vs %.4f%% (%.2f%%), limit 5%%", ru.global.count,
              ru.global.pag_uv, rayleigh, 100 * eu, rd.global.pag_d, half_normal, 100 * ed)};
}

Outcome pipeline_round_trips() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double proj = 0.0, unproj = 0.0, virt = 0.0, lb = 0.0, prep = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Intrinsics k = Intrinsics::make(300 + 1500 * unit(rng), 300 + 1500 * unit(rng), 200 + 800 * unit(rng),
                                          150 + 600 * unit(rng));
    CornerSet cs;
    Corners3D pts;
    for (int c = 0; c < kNumCorners; ++c) {
      cs.uv[c] = Vec2(2000 * unit(rng), 1500 * unit(rng));
      cs.depth[c] = 0.5 + 80 * unit(rng);
      pts[c] = Vec3(20 * unit(rng) - 10, 10 * unit(rng) - 5, 0.5 + 80 * unit(rng));
    }
    const CornerSet back = project_corners(unproject_corners(cs, k), k);
    const Corners3D back3 = unproject_corners(project_corners(pts, k), k);
    for (int c = 0; c < kNumCorners; ++c) {
      proj = std::max({proj, (back.uv[c] - cs.uv[c]).norm(), std::abs(back.depth[c] - cs.depth[c])});
      unproj = std::max(unproj, (back3[c] - pts[c]).norm());
    }
    const double d = 0.1 + 100 * unit(rng);
    const double f = 500 + 1500 * unit(rng), h = 300 + 1000 * unit(rng);
    const double dv = virtual_depth_convert(d, f, h, DepthConversion::ToVirtual);
    virt = std::max(virt, std::abs(virtual_depth_convert(dv, f, h, DepthConversion::ToMetric) - d) / d);

    const LetterboxTransform t = LetterboxTransform::make(std::round(200 + 1800 * unit(rng)),
                                                          std::round(200 + 1800 * unit(rng)), 512);
    const Vec2 p(t.src_w * unit(rng), t.src_h * unit(rng));
    lb = std::max(lb, (t.inverse(t.forward(p)) - p).norm());
  }

  SceneConfig cfg;
  cfg.instances = 1;
  cfg.seed = 5;
  const auto data = generate_dataset(cfg, 1000);
  std::vector<SceneAnnotation> scenes;
  for (const auto& s : data) scenes.push_back(s.annotation);
  for (const auto& s : scenes) {
    const PreprocessedScene p = preprocess(s);
    for (std::size_t j = 0; j < p.instances.size(); ++j) {
      const CornerSet back = restore_instance(p.instances[j], p);
      for (int c = 0; c < kNumCorners; ++c) prep = std::max(prep, (back.uv[c] - s.instances[j].corners[c]).norm());
    }
  }
  std::stringstream ann;
  write_annotations(ann, scenes);
  const bool ann_ok = parse_annotations(ann).scenes == scenes;

  std::vector<PredictionRecord> preds;
  for (int i = 0; i < 1000; ++i) {
    PredictionRecord r;
    r.id = "p" + std::to_string(i);
    for (int c = 0; c < kNumCorners; ++c) {
      r.corners.uv[c] = Vec2(1e4 * unit(rng) - 5e3, 1e4 * unit(rng) - 5e3);
      r.corners.depth[c] = 1e-3 + 100 * unit(rng);
    }
    r.corners.space = i % 2 ? DepthSpace::Virtual : DepthSpace::Metric;
    if (i % 3 == 0) r.cuboid = random_cuboid(rng);
    preds.push_back(r);
  }
  std::stringstream pf;
  write_predictions(pf, preds);
  const auto back = read_predictions(pf);
  bool pred_ok = back.size() == preds.size();
  for (std::size_t i = 0; pred_ok && i < preds.size(); ++i) {
    pred_ok = back[i].id == preds[i].id && back[i].corners.uv == preds[i].corners.uv &&
              back[i].corners.depth == preds[i].corners.depth && back[i].corners.space == preds[i].corners.space &&
              back[i].cuboid.has_value() == preds[i].cuboid.has_value();
    if (pred_ok && preds[i].cuboid) {
      pred_ok = back[i].cuboid->center == preds[i].cuboid->center && back[i].cuboid->size == preds[i].cuboid->size &&
                back[i].cuboid->rotation == preds[i].cuboid->rotation;
    }
  }
  const bool ok = proj <= 1e-9 && unproj <= 1e-9 && virt <= 1e-12 && lb <= 1e-12 && prep <= 1e-9 && ann_ok && pred_ok;
  return {ok, fmt("project %.1e, unproject %.1e (<= 1e-9); virtual depth %.1e (<= 1e-12 rel); letterbox %.1e "
                  "(<= 1e-12); preprocess %.1e (<= 1e-9); annotations %s; predictions %s",
                  proj, unproj, virt, lb, prep, ann_ok ? "lossless" : "DIFFER", pred_ok ? "lossless" : "DIFFER")};
}

Outcome filtering_conformance() {
  SceneAnnotation scene;
  scene.image_id = "fixture";
  scene.dataset = "fixture";
  scene.width = 1024;
  scene.height = 512;
  scene.intrinsics = Intrinsics::make(800, 800, 512, 256);
  auto square = [](double x, double y, double side) {
    Corners2D c;
    for (int i = 0; i < kNumCorners; ++i) c[i] = Vec2(x + (i & 1 ? side : 0.0), y + (i & 2 ? side : 0.0));
    return c;
  };
  auto add = [&](const std::string& id, Corners2D corners, std::optional<Box2> box, QualityFlag flag = QualityFlag::Good) {
    InstanceRecord r;
    r.id = id;
    r.corners = corners;
    r.depths.fill(5.0);
    r.box = box;
    r.flag = flag;
    scene.instances.push_back(r);
  };
  add("box90_kept", square(100, 100, 90), Box2{100, 100, 190, 190});
  add("box60_small", square(100, 100, 60), Box2{100, 100, 160, 160});
  add("box64_at_threshold", square(300, 100, 64), Box2{300, 100, 364, 164});
  add("box63_below", square(300, 200, 63), Box2{300, 200, 363, 263});
  auto right_edge = square(900, 100, 124);
  add("corner_on_right_edge", right_edge, Box2{900, 100, 1024, 224});
  for (auto& p : right_edge) p.x() = std::min(p.x(), std::nextafter(1024.0, 0.0));
  add("corner_just_inside_right", right_edge, Box2{900, 100, 1023, 224});
  add("corner_on_bottom_edge", square(500, 412, 100), Box2{500, 412, 600, 512});
  add("corner_on_origin", square(0, 0, 100), Box2{0, 0, 100, 100});
  auto left = square(0, 300, 100);
  left[0].x() = -1e-9;
  add("corner_left_of_origin", left, Box2{0, 300, 100, 400});
  add("truncated_flag", square(600, 100, 120), Box2{600, 100, 720, 220}, QualityFlag::Truncated);
  add("missing_box_flag", square(600, 300, 120), std::nullopt, QualityFlag::MissingBox);
  add("no_box_rough_kept", square(750, 300, 100), std::nullopt);
  add("no_box_rough_small", square(750, 150, 50), std::nullopt);

  const std::vector<std::pair<std::string, std::string>> expected = {
      {"box90_kept", "kept"},
      {"box60_small", "box_too_small"},
      {"box64_at_threshold", "kept"},
      {"box63_below", "box_too_small"},
      {"corner_on_right_edge", "corners_outside"},
      {"corner_just_inside_right", "kept"},
      {"corner_on_bottom_edge", "corners_outside"},
      {"corner_on_origin", "kept"},
      {"corner_left_of_origin", "corners_outside"},
      {"truncated_flag", "not_good"},
      {"missing_box_flag", "not_good"},
      {"no_box_rough_kept", "kept"},
      {"no_box_rough_small", "box_too_small"},
  };
  const FilterResult f = filter_instances(scene);
  std::vector<std::pair<std::string, std::string>> got;
  std::size_t ki = 0, ri = 0;
  // Rebuild input order from the two order-preserving lists.
  for (const auto& r : scene.instances) {
    if (ki < f.kept.size() && f.kept[ki].id == r.id) {
      got.emplace_back(r.id, "kept");
      ++ki;
    } else if (ri < f.rejected.size() && f.rejected[ri].instance.id == r.id) {
      got.emplace_back(r.id, std::string(to_string(f.rejected[ri].reason)));
      ++ri;
    }
  }
  int matches = 0;
  std::string mismatch;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (i < got.size() && got[i] == expected[i]) {
      ++matches;
    } else {
      mismatch += " " + expected[i].first;
    }
  }
  const bool ok = matches == static_cast<int>(expected.size()) && got.size() == expected.size();
  return {ok, fmt("%d/%zu fixtures classified as documented (kept %zu, rejected %zu)%s%s", matches, expected.size(),
                  f.kept.size(), f.rejected.size(), mismatch.empty() ? "" : "; mismatched:", mismatch.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> known;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--known-failure") == 0 && i + 1 < argc) {
      known.insert(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--known-failure N]...\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"Hungarian oracle", hungarian_oracle},
      {"IoU3D oracle", iou_oracle},
      {"rectification fidelity", rectification_fidelity},
      {"heatmap synthesis round trip", synthesis_round_trip},
      {"heatmap fitting", training_surrogate},
      {"peak-weight sharpening", peak_sharpening},
      {"metric calibration", metric_calibration},
      {"pipeline round trips", pipeline_round_trips},
      {"filtering conformance", filtering_conformance},
  };
  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) failed.insert(id);
    std::printf("criterion %2d %s  %s: %s%s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str(),
                !o.pass && known.count(id) ? " [known failure]" : "");
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria pass\n", criteria.size() - failed.size(), criteria.size());
  for (int id : known) {
    if (!failed.count(id)) std::printf("criterion %d was listed as a known failure but passed\n", id);
  }
  return failed == known ? 0 : 1;
}
