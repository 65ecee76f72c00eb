#pragma once

// Corner heatmap / depth supervision: peak-weighted heatmap regression,
// soft-argmax coordinate refinement and heatmap-weighted depth regression,
// with exact gradients w.r.t. the pre-activation fields.

#include <algorithm>
#include <cmath>
#include <string>

#include "moca3d/dense_fields.hpp"
#include "moca3d/error.hpp"
#include "moca3d/geometry.hpp"

namespace moca3d {

struct LossConfig {
  double delta = 1.0;    // SmoothL1 transition
  double tau = 0.1;      // peak threshold on the target heatmap
  double lambda = 50.0;  // peak weight
  double eps = 1e-6;     // normalizer guard
  double beta = kDefaultBeta;
};

struct LossWeights {
  double coarse = 1.0;
  double fine = 0.0;
  double depth = 0.0;
};

struct LossReport {
  double coarse = 0.0;
  double fine = 0.0;
  double depth = 0.0;
  double total = 0.0;
  LossWeights weights;
};

inline double smooth_l1(double x, double delta = 1.0) {
  const double a = std::abs(x);
  return a < delta ? 0.5 * x * x / delta : a - 0.5 * delta;
}

inline double smooth_l1_grad(double x, double delta = 1.0) {
  if (x >= delta) return 1.0;
  if (x <= -delta) return -1.0;
  return x / delta;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double softplus_inverse(double y) {
  if (!(y > 0.0)) fail(ErrorCode::NonPositiveInput, "softplus inverse needs a positive value");
  return y + std::log(-std::expm1(-y));
}

// A(x,y) = lambda where W(x,y) > tau, else 1.
inline FieldStack peak_weights(const FieldStack& target, double tau, double lambda) {
  if (!(tau > 0.0 && tau < 1.0)) fail(ErrorCode::InvalidArgument, "tau must lie in (0,1)");
  if (!(lambda >= 1.0)) fail(ErrorCode::InvalidArgument, "lambda must be >= 1");
  FieldStack a(target.channels(), target.height(), target.width());
  for (std::size_t i = 0; i < target.size(); ++i) a[i] = target[i] > tau ? lambda : 1.0;
  return a;
}

// Everything the losses compare against, all in grid units.
struct FitTargets {
  FieldStack heat;   // W
  FieldStack peak;   // A
  Corners2D corners{};
  CornerDepths depths{};
};

inline FitTargets make_targets(const Corners2D& corners_grid, const CornerDepths& depths, const Grid& grid,
                               const LossConfig& cfg = {}) {
  FitTargets t;
  t.heat = target_heatmaps(corners_grid, grid, adaptive_sigma2(corners_grid)).values;
  t.peak = peak_weights(t.heat, cfg.tau, cfg.lambda);
  t.corners = corners_grid;
  t.depths = depths;
  return t;
}

inline double loss_coarse(const FieldStack& heat, const FieldStack& target, const FieldStack& peak,
                          const LossConfig& cfg = {}) {
  require_same_shape(heat, target, "heatmap and target differ in shape");
  require_same_shape(heat, peak, "heatmap and peak weights differ in shape");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < heat.size(); ++i) {
    num += peak[i] * smooth_l1(heat[i] - target[i], cfg.delta);
    den += peak[i];
  }
  return num / (den + cfg.eps);
}

// SmoothL1 per coordinate, summed over (u, v), averaged over corners.
inline double loss_fine(const Corners2D& predicted, const Corners2D& truth, double delta = 1.0) {
  double sum = 0.0;
  for (int i = 0; i < kNumCorners; ++i) {
    sum += smooth_l1(predicted[i].x() - truth[i].x(), delta) + smooth_l1(predicted[i].y() - truth[i].y(), delta);
  }
  return sum / kNumCorners;
}

inline double loss_depth(const FieldStack& heat, const FieldStack& depth, const CornerDepths& truth,
                         const LossConfig& cfg = {}) {
  require_same_shape(heat, depth, "heatmap and depth map differ in shape");
  if (heat.channels() != kNumCorners) fail(ErrorCode::ShapeMismatch, "depth loss needs 8 channels");
  double num = 0.0;
  double den = 0.0;
  for (int c = 0; c < kNumCorners; ++c) {
    const auto h = heat.channel(c);
    const auto z = depth.channel(c);
    for (std::size_t i = 0; i < h.size(); ++i) {
      num += h[i] * smooth_l1(z[i] - truth[c], cfg.delta);
      den += h[i];
    }
  }
  return num / (den + cfg.eps);
}

struct ScheduleEndpoints {
  LossWeights start{50.0, 0.0, 0.0};
  LossWeights end{1.0, 2.0, 5.0};
};

// Coarse-only until warmup, then a linear ramp that reaches the end weights at
// epoch == total_epochs.
inline LossWeights schedule(int epoch, int total_epochs, int warmup_epochs, const ScheduleEndpoints& ep = {}) {
  if (epoch < 0 || epoch > total_epochs) fail(ErrorCode::InvalidArgument, "epoch outside [0, total]");
  if (warmup_epochs < 0 || warmup_epochs >= total_epochs) {
    fail(ErrorCode::InvalidArgument, "warmup must be shorter than the schedule");
  }
  if (epoch < warmup_epochs) return ep.start;
  const double t = static_cast<double>(epoch - warmup_epochs) / (total_epochs - warmup_epochs);
  return {ep.start.coarse + t * (ep.end.coarse - ep.start.coarse), ep.start.fine + t * (ep.end.fine - ep.start.fine),
          ep.start.depth + t * (ep.end.depth - ep.start.depth)};
}

inline void check_targets(const HeatField& field, const FitTargets& targets) {
  if (field.heat.channels() != kNumCorners) fail(ErrorCode::ShapeMismatch, "heat field needs 8 channels");
  require_same_shape(field.heat, field.depth, "heat and depth fields differ in shape");
  require_same_shape(field.heat, targets.heat, "field and target heatmaps differ in shape");
  require_same_shape(field.heat, targets.peak, "field and peak weights differ in shape");
}

inline Corners2D soft_argmax_corners(const FieldStack& heat, double beta) {
  Corners2D out;
  for (int c = 0; c < kNumCorners; ++c) out[c] = soft_argmax(heat.channel(c), heat.width(), heat.height(), beta).point;
  return out;
}

inline LossReport total_loss(const HeatField& field, const FitTargets& targets, const LossWeights& weights,
                             const LossConfig& cfg = {}) {
  check_targets(field, targets);
  LossReport r;
  r.weights = weights;
  r.coarse = loss_coarse(field.heat, targets.heat, targets.peak, cfg);
  r.fine = loss_fine(soft_argmax_corners(field.heat, cfg.beta), targets.corners, cfg.delta);
  r.depth = loss_depth(field.heat, field.depth, targets.depths, cfg);
  r.total = weights.coarse * r.coarse + weights.fine * r.fine + weights.depth * r.depth;
  return r;
}

// Pre-activation parameters: H = sigmoid(logits), Z = softplus(z_raw).
struct FieldParams {
  FieldStack logits;
  FieldStack z_raw;
};

inline HeatField activate(const FieldParams& p) {
  require_same_shape(p.logits, p.z_raw, "logits and z_raw differ in shape");
  HeatField f;
  f.heat = FieldStack(p.logits.channels(), p.logits.height(), p.logits.width());
  f.depth = FieldStack(p.z_raw.channels(), p.z_raw.height(), p.z_raw.width());
  for (std::size_t i = 0; i < p.logits.size(); ++i) {
    f.heat[i] = sigmoid(p.logits[i]);
    f.depth[i] = softplus(p.z_raw[i]);
  }
  return f;
}

struct LossGradient {
  LossReport report;
  FieldStack d_logits;
  FieldStack d_z_raw;
};

// Exact gradient of total_loss(activate(params)).
//
//   dL/dH = w_c A s'(H - W) / (sum A + eps)
//         + w_d (s(Z - d) - L_depth) / (sum H + eps)
//         + w_f / 8 * beta * pi * [s'(u^ - u)(x - u^) + s'(v^ - v)(y - v^)]
//   dL/dZ = w_d H s'(Z - d) / (sum H + eps)
//
// The depth term as defined never reads the sampled depth, so nothing flows
// through the sampling location here; see sampled_depth_gradient for that
// path.
inline LossGradient grad_total(const FieldParams& params, const FitTargets& targets, const LossWeights& weights,
                               const LossConfig& cfg = {}) {
  const HeatField field = activate(params);
  check_targets(field, targets);
  const int w = field.heat.width();
  const int h = field.heat.height();

  LossGradient g;
  g.report.weights = weights;
  g.d_logits = FieldStack(kNumCorners, h, w);
  g.d_z_raw = FieldStack(kNumCorners, h, w);

  double sum_a = 0.0;
  double coarse_num = 0.0;
  double sum_h = 0.0;
  double depth_num = 0.0;
  for (int c = 0; c < kNumCorners; ++c) {
    const auto hc = field.heat.channel(c);
    const auto zc = field.depth.channel(c);
    const auto wc = targets.heat.channel(c);
    const auto ac = targets.peak.channel(c);
    for (std::size_t i = 0; i < hc.size(); ++i) {
      sum_a += ac[i];
      coarse_num += ac[i] * smooth_l1(hc[i] - wc[i], cfg.delta);
      sum_h += hc[i];
      depth_num += hc[i] * smooth_l1(zc[i] - targets.depths[c], cfg.delta);
    }
  }
  const double coarse_den = sum_a + cfg.eps;
  const double depth_den = sum_h + cfg.eps;
  g.report.coarse = coarse_num / coarse_den;
  g.report.depth = depth_num / depth_den;

  double fine_sum = 0.0;
  for (int c = 0; c < kNumCorners; ++c) {
    const auto hc = field.heat.channel(c);
    const auto zc = field.depth.channel(c);
    const auto wc = targets.heat.channel(c);
    const auto ac = targets.peak.channel(c);
    const SoftArgmax sa = soft_argmax(hc, w, h, cfg.beta);
    const Vec2 err = sa.point - targets.corners[c];
    fine_sum += smooth_l1(err.x(), cfg.delta) + smooth_l1(err.y(), cfg.delta);
    const double gu = weights.fine / kNumCorners * smooth_l1_grad(err.x(), cfg.delta);
    const double gv = weights.fine / kNumCorners * smooth_l1_grad(err.y(), cfg.delta);

    auto dl = g.d_logits.channel(c);
    auto dz = g.d_z_raw.channel(c);
    const auto zr = params.z_raw.channel(c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double dz_res = zc[i] - targets.depths[c];
        double d_heat = weights.coarse * ac[i] * smooth_l1_grad(hc[i] - wc[i], cfg.delta) / coarse_den;
        d_heat += weights.depth * (smooth_l1(dz_res, cfg.delta) - g.report.depth) / depth_den;
        d_heat += cfg.beta * sa.prob[i] * (gu * (x - sa.point.x()) + gv * (y - sa.point.y()));
        dl[i] = d_heat * hc[i] * (1.0 - hc[i]);
        dz[i] = weights.depth * hc[i] * smooth_l1_grad(dz_res, cfg.delta) / depth_den * sigmoid(zr[i]);
      }
    }
  }
  g.report.fine = fine_sum / kNumCorners;
  g.report.total = weights.coarse * g.report.coarse + weights.fine * g.report.fine + weights.depth * g.report.depth;
  return g;
}

struct SampledDepthGradient {
  double value = 0.0;
  std::vector<double> d_heat;   // h x w, through the soft-argmax location
  std::vector<double> d_depth;  // h x w, the four bilinear weights
};

// Jacobian of the extracted depth d^ = Sample(Z, soft_argmax(H)) w.r.t. one
// heat channel and one depth channel.
inline SampledDepthGradient sampled_depth_gradient(std::span<const double> heat, std::span<const double> depth,
                                                   int width, int height, double beta = kDefaultBeta) {
  const SoftArgmax sa = soft_argmax(heat, width, height, beta);
  const BilinearSample s = bilinear_sample(depth, width, height, sa.point);
  SampledDepthGradient g;
  g.value = s.value;
  g.d_heat.resize(heat.size());
  g.d_depth.assign(depth.size(), 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      g.d_heat[i] = beta * sa.prob[i] * (s.d_dx * (x - sa.point.x()) + s.d_dy * (y - sa.point.y()));
    }
  }
  auto idx = [&](int x, int y) { return static_cast<std::size_t>(y) * width + x; };
  g.d_depth[idx(s.x0, s.y0)] += (1.0 - s.fx) * (1.0 - s.fy);
  g.d_depth[idx(s.x0 + 1, s.y0)] += s.fx * (1.0 - s.fy);
  g.d_depth[idx(s.x0, s.y0 + 1)] += (1.0 - s.fx) * s.fy;
  g.d_depth[idx(s.x0 + 1, s.y0 + 1)] += s.fx * s.fy;
  return g;
}

// Central differences (L(theta + h e_i) - L(theta - h e_i)) / 2h for every
// parameter, differenced in the loss's own return type. `theta` is restored
// before returning.
template <typename Loss>
std::vector<double> finite_diff_grad(Loss&& loss, std::vector<double>& theta, double step = 1e-4) {
  if (!(step > 0.0)) fail(ErrorCode::InvalidArgument, "finite difference step must be positive");
  using R = decltype(loss(theta));
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + step;
    const R plus = loss(theta);
    theta[i] = saved - step;
    const R minus = loss(theta);
    theta[i] = saved;
    grad[i] = static_cast<double>((plus - minus) / (R(2) * R(step)));
  }
  return grad;
}

// max |a - n| / (|n| + floor) over all entries.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-8) {
  if (analytic.size() != numeric.size()) fail(ErrorCode::ShapeMismatch, "gradient sizes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (std::abs(numeric[i]) + floor));
  }
  return worst;
}

}  // namespace moca3d
