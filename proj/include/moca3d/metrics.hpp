#pragma once

// Corner metrics (PAG, NHD), box IoU through rectification, and the dataset
// evaluation loop with per-dataset and global aggregation.

#include <Eigen/Core>

#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "moca3d/cuboid_iou.hpp"
#include "moca3d/dataset.hpp"
#include "moca3d/error.hpp"
#include "moca3d/geometry.hpp"
#include "moca3d/hungarian.hpp"
#include "moca3d/rectify.hpp"

namespace moca3d {

struct PagResult {
  double uv = 0.0;     // mean corner distance, pixels
  double depth = 0.0;  // mean relative depth error, percent
};

// Index-wise: both sets must already be in the same corner order and pixel frame.
inline PagResult pag(const CornerSet& pred, const CornerSet& gt) {
  if (pred.space != gt.space) fail(ErrorCode::DepthSpaceMismatch, "prediction and ground truth depth spaces differ");
  PagResult r;
  for (int i = 0; i < kNumCorners; ++i) {
    if (!(gt.depth[i] > 0.0)) fail(ErrorCode::NonPositiveGtDepth, "ground-truth depth must be positive");
    r.uv += (pred.uv[i] - gt.uv[i]).norm();
    r.depth += std::abs(pred.depth[i] - gt.depth[i]) / gt.depth[i];
  }
  r.uv /= kNumCorners;
  r.depth *= 100.0 / kNumCorners;
  return r;
}

// Largest distance between two corners; for a cuboid this is the space diagonal.
inline double corner_diagonal(const Corners3D& pts) {
  double best = 0.0;
  for (int i = 0; i < kNumCorners; ++i) {
    for (int j = i + 1; j < kNumCorners; ++j) best = std::max(best, (pts[i] - pts[j]).norm());
  }
  return best;
}

inline double nhd(const Corners3D& pred, const Corners3D& gt, double gt_diag) {
  if (!(gt_diag > 0.0) || !std::isfinite(gt_diag)) fail(ErrorCode::NonPositiveDiagonal, "box diagonal must be positive");
  Eigen::MatrixXd cost(kNumCorners, kNumCorners);
  for (int i = 0; i < kNumCorners; ++i) {
    for (int j = 0; j < kNumCorners; ++j) cost(i, j) = (pred[i] - gt[j]).norm();
  }
  return hungarian_assign(cost).cost / gt_diag;
}

inline double nhd(const Corners3D& pred, const Corners3D& gt) { return nhd(pred, gt, corner_diagonal(gt)); }

// ---------------------------------------------------------------- evaluation

struct EvalOptions {
  double target = kDefaultLetterbox;
  VirtualCamera camera;
  bool apply_filter = true;  // evaluate only instances that pass filter_instances
  bool rectify = true;       // false: use a prediction's own cuboid when present
  // Ground truth is always put in image order. Predictions are taken in the
  // order given (a model emits corners in that order already); set this to
  // re-sort predictions that come in some other vertex order.
  bool canonicalize_predictions = false;
};

struct InstanceMetrics {
  std::string id;
  std::string image_id;
  std::string dataset;
  double pag_uv = 0.0;
  double pag_d = 0.0;
  std::string pag_depth_space;  // "metric", or "virtual" when the scene has no intrinsics
  std::optional<double> nhd;
  std::optional<double> iou3d;
  std::string skip_reason;  // why nhd/iou3d are absent
};

struct GroupMetrics {
  std::string key;
  std::size_t count = 0;
  std::size_t count_3d = 0;  // instances with nhd and iou3d
  double pag_uv = 0.0;
  double pag_d = 0.0;
  double nhd = 0.0;
  double iou3d = 0.0;
};

struct MetricsReport {
  std::vector<InstanceMetrics> instances;
  std::vector<GroupMetrics> datasets;  // sorted by key
  GroupMetrics global;                 // mean over all instances
  GroupMetrics dataset_mean;           // mean of the per-dataset means
  std::size_t ignored_predictions = 0;  // predictions for filtered-out instances
};

namespace detail {

inline GroupMetrics aggregate(const std::string& key, const std::vector<const InstanceMetrics*>& rows) {
  GroupMetrics g;
  g.key = key;
  for (const auto* r : rows) {
    ++g.count;
    g.pag_uv += r->pag_uv;
    g.pag_d += r->pag_d;
    if (r->nhd && r->iou3d) {
      ++g.count_3d;
      g.nhd += *r->nhd;
      g.iou3d += *r->iou3d;
    }
  }
  if (g.count > 0) {
    g.pag_uv /= static_cast<double>(g.count);
    g.pag_d /= static_cast<double>(g.count);
  }
  if (g.count_3d > 0) {
    g.nhd /= static_cast<double>(g.count_3d);
    g.iou3d /= static_cast<double>(g.count_3d);
  }
  return g;
}

}  // namespace detail

inline InstanceMetrics evaluate_instance(const PredictionRecord& pred, const InstanceRecord& gt,
                                         const SceneAnnotation& scene, const EvalOptions& opts = {}) {
  pred.corners.validate();
  InstanceMetrics m;
  m.id = gt.id;
  m.image_id = scene.image_id;
  m.dataset = scene.dataset;

  const LetterboxTransform lb = LetterboxTransform::make(scene.width, scene.height, opts.target);
  CornerSet p = opts.canonicalize_predictions ? canonicalize_image_order(pred.corners) : pred.corners;
  CornerSet g = canonicalize_image_order(gt.corner_set());
  for (auto& q : p.uv) q = lb.forward(q);
  for (auto& q : g.uv) q = lb.forward(q);

  if (scene.intrinsics) {
    p = convert_depth_space(p, scene.intrinsics->fy, scene.height, DepthSpace::Metric, opts.camera);
  } else if (p.space == DepthSpace::Virtual) {
    // No camera: compare in virtual space with the virtual focal standing in for f.
    g = convert_depth_space(g, opts.camera.focal, scene.height, DepthSpace::Virtual, opts.camera);
  }
  const PagResult pr = pag(p, g);
  m.pag_uv = pr.uv;
  m.pag_d = pr.depth;
  m.pag_depth_space = std::string(to_string(g.space));

  if (!scene.intrinsics) {
    m.skip_reason = "missing_intrinsics";
    return m;
  }
  const Intrinsics& k = *scene.intrinsics;
  const CornerSet pred_metric = convert_depth_space(pred.corners, k.fy, scene.height, DepthSpace::Metric, opts.camera);
  const Corners3D p3 = unproject_corners(pred_metric, k);
  const Corners3D g3 = unproject_corners(gt.corner_set(), k);
  m.nhd = nhd(p3, g3);
  try {
    const Cuboid gt_box = kabsch_rectify(g3);
    const Cuboid pred_box = (!opts.rectify && pred.cuboid) ? *pred.cuboid : kabsch_rectify(p3);
    m.iou3d = iou3d(pred_box, gt_box);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateCorners) throw;
    m.nhd.reset();
    m.skip_reason = "degenerate_corners";
  }
  return m;
}

// Predictions are matched to ground truth by instance id. Every evaluated
// ground-truth instance needs exactly one prediction and every prediction
// needs a ground-truth instance (UnmatchedInstance otherwise).
inline MetricsReport evaluate(const std::vector<PredictionRecord>& predictions,
                              const std::vector<SceneAnnotation>& ground_truth, const EvalOptions& opts = {}) {
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) fail(ErrorCode::UnmatchedInstance, "duplicate prediction for '" + p.id + "'");
  }

  MetricsReport report;
  std::unordered_map<std::string, bool> seen;
  for (const auto& scene : ground_truth) {
    for (const auto& inst : scene.instances) {
      if (!seen.emplace(inst.id, true).second) {
        fail(ErrorCode::SchemaError, "duplicate ground-truth instance id '" + inst.id + "'");
      }
      const auto it = by_id.find(inst.id);
      if (opts.apply_filter && rejection_reason(inst, scene, opts.target)) {
        if (it != by_id.end()) ++report.ignored_predictions;
        continue;
      }
      if (it == by_id.end()) {
        fail(ErrorCode::UnmatchedInstance, "no prediction for instance '" + inst.id + "' (image " + scene.image_id + ")");
      }
      report.instances.push_back(evaluate_instance(*it->second, inst, scene, opts));
    }
  }
  for (const auto& p : predictions) {
    if (!seen.count(p.id)) fail(ErrorCode::UnmatchedInstance, "prediction '" + p.id + "' has no ground-truth instance");
  }

  std::map<std::string, std::vector<const InstanceMetrics*>> groups;
  std::vector<const InstanceMetrics*> all;
  for (const auto& m : report.instances) {
    groups[m.dataset].push_back(&m);
    all.push_back(&m);
  }
  for (const auto& [key, rows] : groups) report.datasets.push_back(detail::aggregate(key, rows));
  report.global = detail::aggregate("global", all);

  GroupMetrics& dm = report.dataset_mean;
  dm.key = "dataset_mean";
  std::size_t with_3d = 0;
  for (const auto& g : report.datasets) {
    dm.count += g.count;
    dm.count_3d += g.count_3d;
    dm.pag_uv += g.pag_uv;
    dm.pag_d += g.pag_d;
    if (g.count_3d > 0) {
      ++with_3d;
      dm.nhd += g.nhd;
      dm.iou3d += g.iou3d;
    }
  }
  if (!report.datasets.empty()) {
    dm.pag_uv /= static_cast<double>(report.datasets.size());
    dm.pag_d /= static_cast<double>(report.datasets.size());
  }
  if (with_3d > 0) {
    dm.nhd /= static_cast<double>(with_3d);
    dm.iou3d /= static_cast<double>(with_3d);
  }
  return report;
}

// ---------------------------------------------------------------- reports

inline nlohmann::json to_json(const GroupMetrics& g) {
  nlohmann::json j{{"key", g.key},     {"count", g.count},   {"count_3d", g.count_3d},
                   {"pag_uv", g.pag_uv}, {"pag_d", g.pag_d}};
  j["nhd"] = g.count_3d > 0 ? nlohmann::json(g.nhd) : nlohmann::json(nullptr);
  j["iou3d"] = g.count_3d > 0 ? nlohmann::json(g.iou3d) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const InstanceMetrics& m) {
  nlohmann::json j{{"id", m.id},         {"image_id", m.image_id}, {"dataset", m.dataset},
                   {"pag_uv", m.pag_uv}, {"pag_d", m.pag_d},       {"pag_depth_space", m.pag_depth_space}};
  j["nhd"] = m.nhd ? nlohmann::json(*m.nhd) : nlohmann::json(nullptr);
  j["iou3d"] = m.iou3d ? nlohmann::json(*m.iou3d) : nlohmann::json(nullptr);
  j["skipped"] = m.skip_reason.empty() ? nlohmann::json(nullptr) : nlohmann::json(m.skip_reason);
  return j;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["format"] = "moca3d-metrics";
  j["version"] = 1;
  j["datasets"] = nlohmann::json::array();
  for (const auto& g : r.datasets) j["datasets"].push_back(to_json(g));
  j["global"] = to_json(r.global);
  j["dataset_mean"] = to_json(r.dataset_mean);
  j["ignored_predictions"] = r.ignored_predictions;
  j["instances"] = nlohmann::json::array();
  for (const auto& m : r.instances) j["instances"].push_back(to_json(m));
  return j;
}

// Text table rendered from the JSON form so both outputs carry the same numbers.
inline std::string render_text(const nlohmann::json& report) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "dataset" << std::right << std::setw(8) << "n" << std::setw(8) << "n3d"
     << std::setw(11) << "PAG_uv" << std::setw(11) << "PAG_d%" << std::setw(10) << "NHD" << std::setw(10) << "IoU3D"
     << '\n';
  auto row = [&](const nlohmann::json& g) {
    os << std::left << std::setw(18) << g.at("key").get<std::string>() << std::right << std::setw(8)
       << g.at("count").get<std::size_t>() << std::setw(8) << g.at("count_3d").get<std::size_t>() << std::fixed
       << std::setprecision(3) << std::setw(11) << g.at("pag_uv").get<double>() << std::setw(11)
       << g.at("pag_d").get<double>();
    for (const char* k : {"nhd", "iou3d"}) {
      if (g.at(k).is_null()) {
        os << std::setw(10) << "-";
      } else {
        os << std::setw(10) << std::setprecision(4) << g.at(k).get<double>();
      }
    }
    os << '\n';
  };
  for (const auto& g : report.at("datasets")) row(g);
  row(report.at("global"));
  row(report.at("dataset_mean"));
  std::size_t skipped = 0;
  for (const auto& m : report.at("instances")) skipped += m.at("skipped").is_null() ? 0 : 1;
  if (skipped > 0) os << skipped << " instance(s) without NHD/IoU3D (see per-instance 'skipped')\n";
  return os.str();
}

}  // namespace moca3d
