// moca3d_cli: evaluate, preprocess, synth, gradcheck, fit, rectify.
//
// Exit codes:
//   0 success
//   1 unexpected internal error
//   2 bad command line
//   3 file could not be read or written
//   4 malformed annotation or prediction file
//   5 data error (unmatched instance, missing intrinsics, degenerate input, ...)
//   6 a check did not meet its tolerance (gradcheck)

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "moca3d/moca3d.hpp"

namespace {

using namespace moca3d;

enum Exit : int { kOk = 0, kInternal = 1, kUsage = 2, kIo = 3, kSchema = 4, kData = 5, kCheckFailed = 6 };

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Re-throws a library error with the file name in front of the message.
struct FileError : std::runtime_error {
  FileError(const std::string& file, const Error& e) : std::runtime_error(file + ": " + e.what()), code(e.code()) {}
  ErrorCode code;
};

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

// Write-then-rename so readers never see a partial file.
void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path + "'");
  }
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
  } else {
    write_atomic(out_path, content);
  }
}

std::vector<SceneAnnotation> load_annotations(const std::string& path, bool partial) {
  auto in = open_input(path);
  try {
    ParseResult r = parse_annotations(in, ParseOptions{partial});
    for (const auto& e : r.errors) std::cerr << path << ": skipped " << e << '\n';
    return std::move(r.scenes);
  } catch (const Error& e) {
    throw FileError(path, e);
  }
}

std::vector<PredictionRecord> load_predictions(const std::string& path) {
  auto in = open_input(path);
  try {
    return read_predictions(in);
  } catch (const Error& e) {
    throw FileError(path, e);
  }
}

std::string to_text(const std::vector<PredictionRecord>& records) {
  std::ostringstream os;
  write_predictions(os, records);
  return os.str();
}

struct CommonOptions {
  std::string gt;
  std::string pred;
  std::string out;
  std::uint64_t seed = 0;
  int grid = kDefaultGridSize;
  double beta = kDefaultBeta;
  double target = kDefaultLetterbox;
  double fv = 512.0;
  double hv = 512.0;
  std::string format = "json";
  int steps = 500;
  double lr = 50.0;
  double tolerance = 1e-4;
};

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  bool canonicalize_pred = false;
  bool no_filter = false;
  bool partial = false;
};

int cmd_evaluate(const CommonOptions& o, const EvaluateArgs& a) {
  const auto gt = load_annotations(o.gt, a.partial);
  const auto pred = load_predictions(o.pred);
  EvalOptions opts;
  opts.target = o.target;
  opts.camera = VirtualCamera{o.fv, o.hv};
  opts.apply_filter = !a.no_filter;
  opts.canonicalize_predictions = a.canonicalize_pred;
  const nlohmann::json report = to_json(evaluate(pred, gt, opts));
  emit(o.out, o.format == "text" ? render_text(report) : report.dump(2) + "\n");
  return kOk;
}

// ---------------------------------------------------------------- preprocess

int cmd_preprocess(const CommonOptions& o, bool partial) {
  const auto scenes = load_annotations(o.gt, partial);
  PreprocessOptions opts;
  opts.target = o.target;
  opts.camera = VirtualCamera{o.fv, o.hv};

  std::ostringstream os;
  os << nlohmann::json{{"format", "moca3d-preprocessed"}, {"version", 1}}.dump() << '\n';
  std::size_t kept = 0, rejected = 0, skipped_scenes = 0;
  for (const auto& scene : scenes) {
    const FilterResult f = filter_instances(scene, opts.target);
    PreprocessedScene p;
    try {
      p = preprocess(scene, f.kept, opts);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MissingIntrinsics) throw;
      std::cerr << o.gt << ": scene '" << scene.image_id << "' skipped: " << e.what() << '\n';
      ++skipped_scenes;
      continue;
    }
    nlohmann::json j;
    j["image_id"] = p.image_id;
    j["letterbox"] = {{"scale", p.transform.scale}, {"pad_x", p.transform.pad_x}, {"pad_y", p.transform.pad_y},
                      {"src_w", p.transform.src_w}, {"src_h", p.transform.src_h}, {"dst", p.transform.dst}};
    j["focal"] = p.focal;
    j["image_height"] = p.image_height;
    j["virtual_camera"] = {{"focal", p.camera.focal}, {"height", p.camera.height}};
    j["instances"] = nlohmann::json::array();
    for (const auto& m : p.instances) {
      std::vector<double> corners;
      for (const auto& q : m.corners.uv) {
        corners.push_back(q.x());
        corners.push_back(q.y());
      }
      j["instances"].push_back({{"id", m.id},
                                {"box", {m.box.x1, m.box.y1, m.box.x2, m.box.y2}},
                                {"corners", corners},
                                {"depths", m.corners.depth},
                                {"order", m.order}});
    }
    j["rejected"] = nlohmann::json::array();
    for (const auto& r : f.rejected) j["rejected"].push_back({{"id", r.instance.id}, {"reason", to_string(r.reason)}});
    kept += p.instances.size();
    rejected += f.rejected.size();
    os << j.dump() << '\n';
  }
  write_atomic(o.out, os.str());
  std::cerr << "kept " << kept << ", rejected " << rejected << ", scenes skipped " << skipped_scenes << '\n';
  return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  int scenes = 10;
  int instances = 4;
  double image_size = 0.0;  // 0 keeps the default size ranges
  double corner_sigma = 0.0;
  double depth_sigma = 0.0;
};

int cmd_synth(const CommonOptions& o, const SynthArgs& a) {
  SceneConfig cfg;
  cfg.instances = a.instances;
  cfg.seed = o.seed;
  cfg.target = o.target;
  if (a.image_size > 0.0) cfg.width = cfg.height = Range{a.image_size, a.image_size};
  const auto data = generate_dataset(cfg, a.scenes);

  std::vector<SceneAnnotation> scenes;
  std::vector<PredictionRecord> preds;
  std::uint64_t k = 0;
  for (const auto& s : data) {
    scenes.push_back(s.annotation);
    for (const auto& r : s.annotation.instances) {
      NoiseSpec noise;
      noise.corner_sigma = a.corner_sigma;
      noise.depth_sigma = a.depth_sigma;
      noise.seed = splitmix64(o.seed ^ splitmix64(k++ + 0x51ED));
      preds.push_back({r.id, perturb(canonicalize_image_order(r.corner_set()), noise), std::nullopt});
    }
  }
  std::ostringstream os;
  write_annotations(os, scenes);
  write_atomic(o.out, os.str());
  if (!o.pred.empty()) write_atomic(o.pred, to_text(preds));
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const CommonOptions& o, std::uint64_t first_seed, const std::vector<int>& sizes, int count,
                  double step) {
  bool ok = true;
  std::cout << std::setw(6) << "grid" << std::setw(8) << "seed" << std::setw(14) << "logits" << std::setw(14) << "z_raw"
            << '\n';
  for (int size : sizes) {
    for (int i = 0; i < count; ++i) {
      const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
      const GradCheckResult r = run_gradcheck(seed, size, step);
      const bool pass = r.max_rel() <= o.tolerance;
      ok = ok && pass;
      std::cout << std::setw(6) << size << std::setw(8) << seed << std::scientific << std::setprecision(3)
                << std::setw(14) << r.max_rel_logits << std::setw(14) << r.max_rel_z_raw << std::defaultfloat
                << (pass ? "" : "  exceeds tolerance") << '\n';
    }
  }
  std::cout << (ok ? "all within " : "tolerance exceeded: ") << o.tolerance << '\n';
  return ok ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  double lr_depth = 100.0;
  double lambda = 50.0;
  double image_size = kDefaultLetterbox;
  std::string corners_out;
};

int cmd_fit(const CommonOptions& o, const FitArgs& a) {
  const FitInstance inst = synthetic_fit_instance(o.seed, o.grid, a.image_size, VirtualCamera{o.fv, o.hv});
  FitConfig cfg;
  cfg.steps = o.steps;
  cfg.lr_logits = o.lr;
  cfg.lr_depth = a.lr_depth;
  cfg.seed = o.seed;
  cfg.loss.beta = o.beta;
  cfg.loss.lambda = a.lambda;
  const FitTargets targets = make_targets(inst.corners_grid, inst.depths, inst.grid, cfg.loss);
  const FitResult r = fit_heatmaps(targets, inst.grid, cfg);

  std::ostringstream trace;
  trace << std::setprecision(17);
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& t = r.trace[i];
    trace << i << ' ' << t.coarse << ' ' << t.fine << ' ' << t.depth << ' ' << t.total << '\n';
  }
  write_atomic(o.out, trace.str());
  if (!a.corners_out.empty()) {
    write_atomic(a.corners_out, to_text({PredictionRecord{"fit_" + std::to_string(o.seed), r.corners, std::nullopt}}));
  }

  double max_px = 0.0, depth_rel = 0.0;
  for (int i = 0; i < kNumCorners; ++i) {
    max_px = std::max(max_px, (r.corners.uv[i] - inst.corners_image[i]).norm());
    depth_rel += std::abs(r.corners.depth[i] - inst.depths[i]) / inst.depths[i] / kNumCorners;
  }
  std::cout << "steps " << o.steps << ", max corner error " << max_px << " px, mean relative depth error "
            << 100.0 * depth_rel << " %\n";
  return kOk;
}

// ---------------------------------------------------------------- rectify

int cmd_rectify(const CommonOptions& o) {
  const auto scenes = load_annotations(o.gt, false);
  auto preds = load_predictions(o.pred);
  std::unordered_map<std::string, const SceneAnnotation*> scene_of;
  for (const auto& s : scenes) {
    for (const auto& r : s.instances) scene_of[r.id] = &s;
  }
  const VirtualCamera vc{o.fv, o.hv};
  for (auto& p : preds) {
    const auto it = scene_of.find(p.id);
    if (it == scene_of.end()) fail(ErrorCode::UnmatchedInstance, "prediction '" + p.id + "' not found in " + o.gt);
    const SceneAnnotation& s = *it->second;
    if (!s.intrinsics) {
      fail(ErrorCode::MissingIntrinsics, "instance '" + p.id + "': scene '" + s.image_id + "' has no intrinsics");
    }
    const CornerSet metric = convert_depth_space(p.corners, s.intrinsics->fy, s.height, DepthSpace::Metric, vc);
    try {
      p.cuboid = kabsch_rectify(unproject_corners(metric, *s.intrinsics));
    } catch (const Error& e) {
      fail(e.code(), "instance '" + p.id + "': " + e.what());
    }
  }
  write_atomic(o.out, to_text(preds));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-aligned 3D box geometry toolkit"};
  app.require_subcommand(1);
  CommonOptions o;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed")->capture_default_str(); };
  auto add_camera = [&](CLI::App* c) {
    c->add_option("--target", o.target, "Letterbox side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--fv", o.fv, "Virtual focal length")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--hv", o.hv, "Virtual image height")->capture_default_str()->check(CLI::PositiveNumber);
  };

  auto* ev = app.add_subcommand("evaluate", "Score predictions against annotations");
  EvaluateArgs ev_args;
  ev->add_option("--gt", o.gt, "Annotation file")->required();
  ev->add_option("--pred", o.pred, "Prediction file")->required();
  ev->add_option("--out", o.out, "Report path (stdout if omitted)");
  ev->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"json", "text"}))->capture_default_str();
  add_camera(ev);
  ev->add_flag("--canonicalize-pred", ev_args.canonicalize_pred, "Re-sort prediction corners into image order");
  ev->add_flag("--no-filter", ev_args.no_filter, "Evaluate every instance, not only those passing the filter");
  ev->add_flag("--partial", ev_args.partial, "Skip malformed annotation lines instead of failing");

  auto* pp = app.add_subcommand("preprocess", "Filter, letterbox and normalize annotations");
  bool pp_partial = false;
  pp->add_option("--gt", o.gt, "Annotation file")->required();
  pp->add_option("--out", o.out, "Output path")->required();
  add_camera(pp);
  pp->add_flag("--partial", pp_partial, "Skip malformed annotation lines instead of failing");

  auto* sy = app.add_subcommand("synth", "Generate a synthetic annotation file");
  SynthArgs sy_args;
  sy->add_option("--out", o.out, "Annotation output path")->required();
  sy->add_option("--pred", o.pred, "Also write noisy predictions here");
  add_seed(sy);
  sy->add_option("--scenes", sy_args.scenes, "Number of scenes")->capture_default_str()->check(CLI::NonNegativeNumber);
  sy->add_option("--instances", sy_args.instances, "Instances per scene")->capture_default_str()->check(CLI::NonNegativeNumber);
  sy->add_option("--image-size", sy_args.image_size, "Square image side (default: random sizes)")->check(CLI::PositiveNumber);
  sy->add_option("--corner-sigma", sy_args.corner_sigma, "Prediction corner noise, pixels")->check(CLI::NonNegativeNumber);
  sy->add_option("--depth-sigma", sy_args.depth_sigma, "Prediction relative depth noise")->check(CLI::NonNegativeNumber);
  sy->add_option("--target", o.target, "Letterbox side used by the filter")->capture_default_str()->check(CLI::PositiveNumber);

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  std::vector<int> gc_sizes{8, 16};
  int gc_count = 5;
  double gc_step = 1e-4;
  std::uint64_t gc_seed = 1;
  gc->add_option("--seed", gc_seed, "First seed")->capture_default_str();
  gc->add_option("--count", gc_count, "Seeds per grid size")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--grid", gc_sizes, "Grid sizes")->capture_default_str()->check(CLI::Range(2, 64));
  gc->add_option("--step", gc_step, "Central-difference step")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", o.tolerance, "Maximum relative error")->capture_default_str()->check(CLI::PositiveNumber);

  auto* ft = app.add_subcommand("fit", "Fit dense fields to a synthetic instance by gradient descent");
  FitArgs ft_args;
  ft->add_option("--out", o.out, "Loss trace path")->required();
  ft->add_option("--corners-out", ft_args.corners_out, "Write the extracted corners as a prediction file");
  ft->add_option("--seed", o.seed, "Instance and initialization seed");
  ft->add_option("--grid", o.grid, "Grid side")->capture_default_str()->check(CLI::Range(2, 512));
  ft->add_option("--steps", o.steps, "Gradient steps")->capture_default_str()->check(CLI::NonNegativeNumber);
  ft->add_option("--lr", o.lr, "Learning rate for the heatmap logits")->capture_default_str()->check(CLI::PositiveNumber);
  ft->add_option("--lr-depth", ft_args.lr_depth, "Learning rate for the depth field")->capture_default_str();
  ft->add_option("--beta", o.beta, "Soft-argmax inverse temperature")->capture_default_str()->check(CLI::PositiveNumber);
  ft->add_option("--lambda", ft_args.lambda, "Peak weight")->capture_default_str();
  ft->add_option("--image-size", ft_args.image_size, "Square image side")->capture_default_str();
  ft->add_option("--fv", o.fv, "Virtual focal length")->capture_default_str()->check(CLI::PositiveNumber);
  ft->add_option("--hv", o.hv, "Virtual image height")->capture_default_str()->check(CLI::PositiveNumber);

  auto* rc = app.add_subcommand("rectify", "Fit a cuboid to each predicted corner set");
  rc->add_option("--pred", o.pred, "Prediction file")->required();
  rc->add_option("--gt", o.gt, "Annotation file providing intrinsics")->required();
  rc->add_option("--out", o.out, "Output prediction file with cuboids")->required();
  rc->add_option("--fv", o.fv, "Virtual focal length")->capture_default_str()->check(CLI::PositiveNumber);
  rc->add_option("--hv", o.hv, "Virtual image height")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*ev) return cmd_evaluate(o, ev_args);
    if (*pp) return cmd_preprocess(o, pp_partial);
    if (*sy) return cmd_synth(o, sy_args);
    if (*gc) return cmd_gradcheck(o, gc_seed, gc_sizes, gc_count, gc_step);
    if (*ft) return cmd_fit(o, ft_args);
    if (*rc) return cmd_rectify(o);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const FileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code == ErrorCode::SchemaError ? kSchema : kData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::SchemaError ? kSchema : kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
