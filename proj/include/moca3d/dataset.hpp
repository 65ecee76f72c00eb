#pragma once

// Annotation and prediction files, the instance filter, and preprocessing into
// letterboxed, image-ordered, virtual-depth instances.
//
// Annotation file (JSON Lines):
//   line 1   {"format":"moca3d-annotations","version":1}
//   line 2+  one scene per line:
//            {"image_id":str, "dataset":str, "width":num, "height":num,
//             "K":[9 numbers, row-major] | null,
//             "instances":[{"id":str, "box":[x1,y1,x2,y2] | null,
//                           "corners":[u1,v1,...,u8,v8], "depths":[8 numbers],
//                           "category":str | null,
//                           "flag":"good"|"truncated"|"missing_box"}]}
//   Unknown keys are ignored; blank lines are skipped.
//
// Prediction file (whitespace separated text):
//   line 1   moca3d-predictions 1
//   line 2+  id u1 v1 ... u8 v8 d1 ... d8 metric|virtual
//            [cuboid cx cy cz sx sy sz r00 r01 ... r22]

#include <charconv>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moca3d/dense_fields.hpp"
#include "moca3d/error.hpp"
#include "moca3d/geometry.hpp"

namespace moca3d {

inline constexpr int kAnnotationVersion = 1;
inline constexpr int kPredictionVersion = 1;
inline constexpr double kDefaultLetterbox = 512.0;
inline constexpr double kMinScaledBoxArea = 1024.0;

enum class QualityFlag { Good, Truncated, MissingBox };

inline std::string_view to_string(QualityFlag f) {
  switch (f) {
    case QualityFlag::Good: return "good";
    case QualityFlag::Truncated: return "truncated";
    case QualityFlag::MissingBox: return "missing_box";
  }
  return "good";
}

inline std::optional<QualityFlag> quality_flag_from_string(std::string_view s) {
  if (s == "good") return QualityFlag::Good;
  if (s == "truncated") return QualityFlag::Truncated;
  if (s == "missing_box") return QualityFlag::MissingBox;
  return std::nullopt;
}

struct InstanceRecord {
  std::string id;
  std::optional<Box2> box;  // tight box in source pixels
  Corners2D corners{};      // projected corners in source pixels
  CornerDepths depths{};    // metric
  std::optional<std::string> category;
  QualityFlag flag = QualityFlag::Good;

  CornerSet corner_set() const { return CornerSet{corners, depths, DepthSpace::Metric}; }

  bool operator==(const InstanceRecord&) const = default;
};

struct SceneAnnotation {
  std::string image_id;
  std::string dataset;
  double width = 0.0;
  double height = 0.0;
  std::optional<Intrinsics> intrinsics;
  std::vector<InstanceRecord> instances;
};

inline bool operator==(const SceneAnnotation& a, const SceneAnnotation& b) {
  return a.image_id == b.image_id && a.dataset == b.dataset && a.width == b.width && a.height == b.height &&
         a.intrinsics == b.intrinsics && a.instances == b.instances;
}

struct PredictionRecord {
  std::string id;
  CornerSet corners;
  std::optional<Cuboid> cuboid;
};

// ---------------------------------------------------------------- annotations

namespace detail {

[[noreturn]] inline void schema_fail(std::size_t line, const std::string& msg) {
  fail(ErrorCode::SchemaError, "line " + std::to_string(line) + ": " + msg);
}

inline double json_number(const nlohmann::json& j, const char* key, std::size_t line, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number()) schema_fail(line, where + "missing numeric field '" + key + "'");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) schema_fail(line, where + "field '" + key + "' is not finite");
  return v;
}

template <std::size_t N>
std::array<double, N> json_numbers(const nlohmann::json& j, std::size_t line, const std::string& what) {
  if (!j.is_array() || j.size() != N) {
    schema_fail(line, what + " must be an array of " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!j[i].is_number()) schema_fail(line, what + " must contain only numbers");
    out[i] = j[i].get<double>();
    if (!std::isfinite(out[i])) schema_fail(line, what + " contains a non-finite value");
  }
  return out;
}

inline std::string json_string(const nlohmann::json& j, const char* key, std::size_t line, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_string()) schema_fail(line, where + "missing string field '" + key + "'");
  return j.at(key).get<std::string>();
}

inline InstanceRecord parse_instance(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) schema_fail(line, "instance must be an object");
  InstanceRecord r;
  r.id = json_string(j, "id", line, "instance: ");
  const std::string where = "instance '" + r.id + "': ";

  if (j.contains("box") && !j.at("box").is_null()) {
    const auto b = json_numbers<4>(j.at("box"), line, where + "box");
    r.box = Box2{b[0], b[1], b[2], b[3]};
    if (!(r.box->x2 > r.box->x1) || !(r.box->y2 > r.box->y1)) schema_fail(line, where + "box needs x2 > x1 and y2 > y1");
  }
  if (!j.contains("corners")) schema_fail(line, where + "missing field 'corners'");
  const auto c = json_numbers<16>(j.at("corners"), line, where + "corners");
  for (int i = 0; i < kNumCorners; ++i) r.corners[i] = Vec2(c[2 * i], c[2 * i + 1]);
  if (!j.contains("depths")) schema_fail(line, where + "missing field 'depths'");
  const auto d = json_numbers<8>(j.at("depths"), line, where + "depths");
  for (int i = 0; i < kNumCorners; ++i) {
    if (!(d[i] > 0.0)) schema_fail(line, where + "depths must be positive");
    r.depths[i] = d[i];
  }
  if (j.contains("category") && !j.at("category").is_null()) {
    if (!j.at("category").is_string()) schema_fail(line, where + "category must be a string or null");
    r.category = j.at("category").get<std::string>();
  }
  const auto flag = quality_flag_from_string(json_string(j, "flag", line, where));
  if (!flag) schema_fail(line, where + "flag must be one of good, truncated, missing_box");
  r.flag = *flag;
  return r;
}

inline SceneAnnotation parse_scene(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) schema_fail(line, "scene must be an object");
  SceneAnnotation s;
  s.image_id = json_string(j, "image_id", line, "");
  const std::string where = "scene '" + s.image_id + "': ";
  s.dataset = json_string(j, "dataset", line, where);
  s.width = json_number(j, "width", line, where);
  s.height = json_number(j, "height", line, where);
  if (!(s.width > 0.0 && s.height > 0.0)) schema_fail(line, where + "width and height must be positive");
  if (j.contains("K") && !j.at("K").is_null()) {
    const auto k = json_numbers<9>(j.at("K"), line, where + "K");
    try {
      s.intrinsics = Intrinsics::from_row_major(k);
    } catch (const Error& e) {
      schema_fail(line, where + e.what());
    }
  }
  if (!j.contains("instances") || !j.at("instances").is_array()) schema_fail(line, where + "missing array 'instances'");
  for (const auto& inst : j.at("instances")) s.instances.push_back(parse_instance(inst, line));
  return s;
}

}  // namespace detail

struct ParseOptions {
  bool partial = false;  // skip malformed scene lines instead of throwing
};

struct ParseResult {
  std::vector<SceneAnnotation> scenes;
  std::size_t skipped = 0;
  std::vector<std::string> errors;  // one message per skipped line
};

inline ParseResult parse_annotations(std::istream& in, const ParseOptions& opts = {}) {
  ParseResult out;
  std::string text;
  std::size_t line = 0;
  bool header_seen = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      if (!header_seen || !opts.partial) detail::schema_fail(line, std::string("invalid JSON: ") + e.what());
      ++out.skipped;
      out.errors.push_back("line " + std::to_string(line) + ": invalid JSON");
      continue;
    }
    if (!header_seen) {
      if (!j.is_object() || j.value("format", "") != "moca3d-annotations") {
        detail::schema_fail(line, "expected header {\"format\":\"moca3d-annotations\",\"version\":1}");
      }
      if (j.value("version", -1) != kAnnotationVersion) detail::schema_fail(line, "unsupported annotation version");
      header_seen = true;
      continue;
    }
    try {
      out.scenes.push_back(detail::parse_scene(j, line));
    } catch (const Error& e) {
      if (!opts.partial) throw;
      ++out.skipped;
      out.errors.push_back(e.what());
    }
  }
  return out;
}

inline ParseResult parse_annotations_string(const std::string& text, const ParseOptions& opts = {}) {
  std::istringstream in(text);
  return parse_annotations(in, opts);
}

inline nlohmann::json scene_to_json(const SceneAnnotation& s) {
  nlohmann::json j;
  j["image_id"] = s.image_id;
  j["dataset"] = s.dataset;
  j["width"] = s.width;
  j["height"] = s.height;
  j["K"] = s.intrinsics ? nlohmann::json(s.intrinsics->row_major()) : nlohmann::json(nullptr);
  j["instances"] = nlohmann::json::array();
  for (const auto& r : s.instances) {
    nlohmann::json ji;
    ji["id"] = r.id;
    ji["box"] = r.box ? nlohmann::json({r.box->x1, r.box->y1, r.box->x2, r.box->y2}) : nlohmann::json(nullptr);
    std::vector<double> corners;
    for (const auto& c : r.corners) {
      corners.push_back(c.x());
      corners.push_back(c.y());
    }
    ji["corners"] = corners;
    ji["depths"] = r.depths;
    ji["category"] = r.category ? nlohmann::json(*r.category) : nlohmann::json(nullptr);
    ji["flag"] = to_string(r.flag);
    j["instances"].push_back(std::move(ji));
  }
  return j;
}

inline void write_annotations(std::ostream& out, const std::vector<SceneAnnotation>& scenes) {
  out << nlohmann::json{{"format", "moca3d-annotations"}, {"version", kAnnotationVersion}}.dump() << '\n';
  for (const auto& s : scenes) out << scene_to_json(s).dump() << '\n';
}

// ---------------------------------------------------------------- predictions

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_number(const std::string& tok, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    schema_fail(line, "expected a finite number, got '" + tok + "'");
  }
  return v;
}

}  // namespace detail

inline void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records) {
  out << "moca3d-predictions " << kPredictionVersion << '\n';
  for (const auto& r : records) {
    if (r.id.empty() || r.id.find_first_of(" \t\r\n") != std::string::npos) {
      fail(ErrorCode::SchemaError, "prediction id '" + r.id + "' must be non-empty without whitespace");
    }
    out << r.id;
    for (const auto& p : r.corners.uv) out << ' ' << detail::format_number(p.x()) << ' ' << detail::format_number(p.y());
    for (double d : r.corners.depth) out << ' ' << detail::format_number(d);
    out << ' ' << to_string(r.corners.space);
    if (r.cuboid) {
      out << " cuboid";
      for (int k = 0; k < 3; ++k) out << ' ' << detail::format_number(r.cuboid->center[k]);
      for (int k = 0; k < 3; ++k) out << ' ' << detail::format_number(r.cuboid->size[k]);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) out << ' ' << detail::format_number(r.cuboid->rotation(a, b));
      }
    }
    out << '\n';
  }
}

inline std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string text;
  std::size_t line = 0;
  bool header_seen = false;
  while (std::getline(in, text)) {
    ++line;
    std::istringstream ls(text);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(std::move(t));
    if (tok.empty()) continue;
    if (!header_seen) {
      if (tok.size() != 2 || tok[0] != "moca3d-predictions") detail::schema_fail(line, "expected header 'moca3d-predictions 1'");
      if (tok[1] != std::to_string(kPredictionVersion)) detail::schema_fail(line, "unsupported prediction version");
      header_seen = true;
      continue;
    }
    constexpr std::size_t kBase = 1 + 16 + 8 + 1;
    constexpr std::size_t kWithCuboid = kBase + 1 + 15;
    if (tok.size() != kBase && tok.size() != kWithCuboid) {
      detail::schema_fail(line, "expected " + std::to_string(kBase) + " or " + std::to_string(kWithCuboid) +
                                    " fields, got " + std::to_string(tok.size()));
    }
    PredictionRecord r;
    r.id = tok[0];
    for (int i = 0; i < kNumCorners; ++i) {
      r.corners.uv[i] = Vec2(detail::parse_number(tok[1 + 2 * i], line), detail::parse_number(tok[2 + 2 * i], line));
    }
    for (int i = 0; i < kNumCorners; ++i) {
      r.corners.depth[i] = detail::parse_number(tok[17 + i], line);
      if (!(r.corners.depth[i] > 0.0)) {
        detail::schema_fail(line, "instance '" + r.id + "' has non-positive depth " + tok[17 + i]);
      }
    }
    if (tok[25] == "metric") {
      r.corners.space = DepthSpace::Metric;
    } else if (tok[25] == "virtual") {
      r.corners.space = DepthSpace::Virtual;
    } else {
      detail::schema_fail(line, "depth space must be 'metric' or 'virtual', got '" + tok[25] + "'");
    }
    if (tok.size() == kWithCuboid) {
      if (tok[26] != "cuboid") detail::schema_fail(line, "expected 'cuboid' before the box parameters");
      Cuboid c;
      for (int k = 0; k < 3; ++k) c.center[k] = detail::parse_number(tok[27 + k], line);
      for (int k = 0; k < 3; ++k) c.size[k] = detail::parse_number(tok[30 + k], line);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) c.rotation(a, b) = detail::parse_number(tok[33 + 3 * a + b], line);
      }
      try {
        c.validate(1e-6);
      } catch (const Error& e) {
        detail::schema_fail(line, "instance '" + r.id + "': " + e.what());
      }
      r.cuboid = c;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- filtering

// Corner bounding box clamped to the image.
inline Box2 rough_box_from_corners(const Corners2D& corners, double width, double height) {
  Box2 b{corners[0].x(), corners[0].y(), corners[0].x(), corners[0].y()};
  for (const auto& p : corners) {
    if (!p.allFinite()) fail(ErrorCode::InvalidArgument, "corners must be finite");
    b.x1 = std::min(b.x1, p.x());
    b.y1 = std::min(b.y1, p.y());
    b.x2 = std::max(b.x2, p.x());
    b.y2 = std::max(b.y2, p.y());
  }
  b.x1 = std::clamp(b.x1, 0.0, width);
  b.x2 = std::clamp(b.x2, 0.0, width);
  b.y1 = std::clamp(b.y1, 0.0, height);
  b.y2 = std::clamp(b.y2, 0.0, height);
  if (!(b.x2 > b.x1) || !(b.y2 > b.y1)) fail(ErrorCode::DegenerateBox, "corner box has zero area inside the image");
  return b;
}

enum class RejectReason { NotGood, CornersOutside, BoxTooSmall };

inline std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::NotGood: return "not_good";
    case RejectReason::CornersOutside: return "corners_outside";
    case RejectReason::BoxTooSmall: return "box_too_small";
  }
  return "not_good";
}

struct Rejection {
  InstanceRecord instance;
  RejectReason reason;
};

struct FilterResult {
  std::vector<InstanceRecord> kept;
  std::vector<Rejection> rejected;
};

inline bool corners_inside(const Corners2D& corners, double width, double height) {
  for (const auto& p : corners) {
    if (!(p.x() >= 0.0 && p.x() < width && p.y() >= 0.0 && p.y() < height)) return false;
  }
  return true;
}

// Checks run in a fixed order and the first failure is the reported reason.
// A missing box falls back to the corner box.
inline std::optional<RejectReason> rejection_reason(const InstanceRecord& r, const SceneAnnotation& scene,
                                                    double target = kDefaultLetterbox) {
  if (r.flag != QualityFlag::Good) return RejectReason::NotGood;
  if (!corners_inside(r.corners, scene.width, scene.height)) return RejectReason::CornersOutside;
  const Box2 box = r.box ? *r.box : rough_box_from_corners(r.corners, scene.width, scene.height);
  const double scale = LetterboxTransform::make(scene.width, scene.height, target).scale;
  if (box.area() * scale * scale < kMinScaledBoxArea) return RejectReason::BoxTooSmall;
  return std::nullopt;
}

inline FilterResult filter_instances(const SceneAnnotation& scene, double target = kDefaultLetterbox) {
  FilterResult out;
  for (const auto& r : scene.instances) {
    if (auto reason = rejection_reason(r, scene, target)) {
      out.rejected.push_back({r, *reason});
    } else {
      out.kept.push_back(r);
    }
  }
  return out;
}

// ---------------------------------------------------------------- preprocessing

struct PreprocessOptions {
  double target = kDefaultLetterbox;
  VirtualCamera camera;
};

struct ModelInstance {
  std::string id;
  Box2 box;               // letterboxed, divided by target
  CornerSet corners;      // image order, letterboxed uv divided by target, virtual depth
  CornerPermutation order{};  // corners.uv[j] came from source corner order[j]
};

struct PreprocessedScene {
  std::string image_id;
  LetterboxTransform transform;
  double focal = 0.0;         // fy used for virtual depth
  double image_height = 0.0;  // source height used for virtual depth
  VirtualCamera camera;
  std::vector<ModelInstance> instances;
};

// Expects a filtered scene; needs intrinsics for the virtual-depth focal.
inline PreprocessedScene preprocess(const SceneAnnotation& scene, const std::vector<InstanceRecord>& instances,
                                    const PreprocessOptions& opts = {}) {
  if (!scene.intrinsics) {
    fail(ErrorCode::MissingIntrinsics, "scene '" + scene.image_id + "' has no intrinsics for virtual depth");
  }
  PreprocessedScene out;
  out.image_id = scene.image_id;
  out.transform = LetterboxTransform::make(scene.width, scene.height, opts.target);
  out.focal = scene.intrinsics->fy;
  out.image_height = scene.height;
  out.camera = opts.camera;
  for (const auto& r : instances) {
    ModelInstance m;
    m.id = r.id;
    const Box2 src = r.box ? *r.box : rough_box_from_corners(r.corners, scene.width, scene.height);
    const Vec2 lo = out.transform.forward(Vec2(src.x1, src.y1)) / opts.target;
    const Vec2 hi = out.transform.forward(Vec2(src.x2, src.y2)) / opts.target;
    m.box = Box2{lo.x(), lo.y(), hi.x(), hi.y()};

    CornerSet cs = r.corner_set();
    for (auto& p : cs.uv) p = out.transform.forward(p) / opts.target;
    m.order = canonical_order(cs.uv);
    cs = apply_permutation(cs, m.order);
    m.corners = convert_depth_space(cs, out.focal, out.image_height, DepthSpace::Virtual, out.camera);
    out.instances.push_back(std::move(m));
  }
  return out;
}

inline PreprocessedScene preprocess(const SceneAnnotation& scene, const PreprocessOptions& opts = {}) {
  return preprocess(scene, filter_instances(scene, opts.target).kept, opts);
}

// Source-pixel corners and metric depth in the original annotation order.
inline CornerSet restore_instance(const ModelInstance& m, const PreprocessedScene& meta) {
  const CornerSet metric = convert_depth_space(m.corners, meta.focal, meta.image_height, DepthSpace::Metric, meta.camera);
  CornerSet out;
  out.space = DepthSpace::Metric;
  for (int j = 0; j < kNumCorners; ++j) {
    out.uv[m.order[j]] = meta.transform.inverse(metric.uv[j] * meta.transform.dst);
    out.depth[m.order[j]] = metric.depth[j];
  }
  return out;
}

}  // namespace moca3d
