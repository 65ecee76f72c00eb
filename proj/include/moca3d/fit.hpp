#pragma once

// Plain gradient descent of the dense fields against fixed targets.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "moca3d/dense_fields.hpp"
#include "moca3d/losses.hpp"

namespace moca3d {

struct FitConfig {
  int steps = 500;
  double lr_logits = 50.0;
  double lr_depth = 100.0;
  // Steps spent on the coarse-only phase; negative means steps * 5 / 120.
  int warmup_steps = -1;
  double init_logit = -4.0;
  double init_depth = 1.0;
  double init_jitter = 1e-3;  // stddev of seeded noise added to the initial logits
  std::uint64_t seed = 0;
  LossConfig loss;
};

struct FitResult {
  FieldParams params;
  HeatField field;
  std::vector<LossReport> trace;  // loss before each update
  CornerSet corners;              // extracted from the final field
};

// Called after each update with the step index and the updated parameters.
using FitObserver = std::function<void(int step, const FieldParams&)>;

inline int resolved_warmup(const FitConfig& cfg) {
  if (cfg.warmup_steps >= 0) return cfg.warmup_steps;
  return static_cast<int>(std::lround(cfg.steps * 5.0 / 120.0));
}

inline LossWeights fit_weights(const FitConfig& cfg, int step) {
  if (cfg.steps <= 1) return ScheduleEndpoints{}.start;
  return schedule(step, cfg.steps - 1, std::min(resolved_warmup(cfg), cfg.steps - 2));
}

inline FieldParams initial_params(const Grid& grid, const FitConfig& cfg) {
  FieldParams p{FieldStack(kNumCorners, grid.height, grid.width, cfg.init_logit),
                FieldStack(kNumCorners, grid.height, grid.width, softplus_inverse(cfg.init_depth))};
  if (cfg.init_jitter > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, cfg.init_jitter);
    for (double& v : p.logits.values()) v += noise(rng);
  }
  return p;
}

inline FitResult fit_heatmaps(const FitTargets& targets, const Grid& grid, const FitConfig& cfg = {},
                              const FitObserver& observer = {}) {
  grid.validate();
  if (cfg.steps < 0) fail(ErrorCode::InvalidArgument, "step count must be non-negative");
  if (targets.heat.width() != grid.width || targets.heat.height() != grid.height) {
    fail(ErrorCode::ShapeMismatch, "targets do not match grid");
  }
  FitResult r;
  r.params = initial_params(grid, cfg);
  r.trace.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    const LossGradient g = grad_total(r.params, targets, fit_weights(cfg, step), cfg.loss);
    if (!std::isfinite(g.report.total)) {
      fail(ErrorCode::Diverged, "total loss became non-finite at step " + std::to_string(step));
    }
    r.trace.push_back(g.report);
    for (std::size_t i = 0; i < g.d_logits.size(); ++i) {
      r.params.logits[i] -= cfg.lr_logits * g.d_logits[i];
      r.params.z_raw[i] -= cfg.lr_depth * g.d_z_raw[i];
    }
    if (observer) observer(step, r.params);
  }
  r.field = activate(r.params);
  r.corners = extract_corners(r.field, grid, cfg.loss.beta);
  return r;
}

}  // namespace moca3d
