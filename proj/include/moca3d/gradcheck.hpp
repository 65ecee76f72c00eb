#pragma once

// Analytic-vs-numeric gradient check for the total loss.
//
// The numeric side differentiates reference_total_loss, a direct transcription
// of the loss written independently of losses.hpp and evaluated in extended
// precision so that rounding noise (~1e-16 * L / h in double) stays well
// below the tolerance on tiny gradient entries.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "moca3d/dense_fields.hpp"
#include "moca3d/losses.hpp"

namespace moca3d {

template <typename T>
T reference_smooth_l1(T x, T delta) {
  using std::abs;
  return abs(x) < delta ? T(0.5) * x * x / delta : abs(x) - T(0.5) * delta;
}

// Per-channel partial sums of the loss; the total is a fixed combination of
// their sums, so perturbing one cell only needs its own channel recomputed.
template <typename T>
struct ReferencePartial {
  T coarse_num = 0, coarse_den = 0, depth_num = 0, depth_den = 0, fine = 0;
};

template <typename T>
ReferencePartial<T> reference_channel_terms(int c, std::span<const double> logits, std::span<const double> z_raw,
                                            const FitTargets& targets, const LossConfig& cfg) {
  using std::exp;
  using std::log1p;
  const int w = targets.heat.width();
  const std::size_t n = targets.heat.channel_size();
  const T delta = cfg.delta;
  ReferencePartial<T> p;
  std::vector<T> heat(n);
  T peak = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = c * n + i;
    heat[i] = T(1) / (T(1) + exp(-T(logits[k])));
    const T zr = z_raw[k];
    const T z = zr > 0 ? zr + log1p(exp(-zr)) : log1p(exp(zr));
    p.coarse_num += T(targets.peak[k]) * reference_smooth_l1(heat[i] - T(targets.heat[k]), delta);
    p.coarse_den += T(targets.peak[k]);
    p.depth_num += heat[i] * reference_smooth_l1(z - T(targets.depths[c]), delta);
    p.depth_den += heat[i];
    peak = std::max(peak, heat[i]);
  }
  T mass = 0, mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T e = exp(T(cfg.beta) * (heat[i] - peak));
    mass += e;
    mx += e * T(static_cast<int>(i % w));
    my += e * T(static_cast<int>(i / w));
  }
  p.fine = reference_smooth_l1(mx / mass - T(targets.corners[c].x()), delta) +
           reference_smooth_l1(my / mass - T(targets.corners[c].y()), delta);
  return p;
}

template <typename T>
T reference_combine(const std::array<ReferencePartial<T>, kNumCorners>& parts, const LossWeights& weights,
                    const LossConfig& cfg) {
  ReferencePartial<T> s;
  for (const auto& p : parts) {
    s.coarse_num += p.coarse_num;
    s.coarse_den += p.coarse_den;
    s.depth_num += p.depth_num;
    s.depth_den += p.depth_den;
    s.fine += p.fine;
  }
  const T coarse = s.coarse_num / (s.coarse_den + T(cfg.eps));
  const T depth = s.depth_num / (s.depth_den + T(cfg.eps));
  return T(weights.coarse) * coarse + T(weights.fine) * s.fine / T(kNumCorners) + T(weights.depth) * depth;
}

template <typename T>
T reference_total_loss(std::span<const double> logits, std::span<const double> z_raw, const FitTargets& targets,
                       const LossWeights& weights, const LossConfig& cfg) {
  std::array<ReferencePartial<T>, kNumCorners> parts;
  for (int c = 0; c < kNumCorners; ++c) parts[c] = reference_channel_terms<T>(c, logits, z_raw, targets, cfg);
  return reference_combine(parts, weights, cfg);
}

// Random but well-conditioned instance: logits spread so heatmaps are neither
// saturated nor flat, depths straddling the targets.
struct GradCheckInstance {
  FieldParams params;
  FitTargets targets;
  LossWeights weights;
};

inline GradCheckInstance random_gradcheck_instance(std::uint64_t seed, int size, const LossConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Grid grid = Grid::square(size);

  Corners2D corners;
  CornerDepths depths;
  for (int c = 0; c < kNumCorners; ++c) {
    corners[c] = Vec2(unit(rng) * (size - 1), unit(rng) * (size - 1));
    depths[c] = 2.0 + 8.0 * unit(rng);
  }
  GradCheckInstance inst;
  inst.targets = make_targets(corners, depths, grid, cfg);
  inst.params.logits = FieldStack(kNumCorners, size, size);
  inst.params.z_raw = FieldStack(kNumCorners, size, size);
  for (int c = 0; c < kNumCorners; ++c) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        inst.params.logits(c, y, x) = 1.5 * normal(rng);
        inst.params.z_raw(c, y, x) = softplus_inverse(std::max(0.05, depths[c] + 3.0 * normal(rng)));
      }
    }
  }
  inst.weights = {0.5 + unit(rng), 0.5 + unit(rng), 0.5 + unit(rng)};
  return inst;
}

struct GradCheckResult {
  std::uint64_t seed = 0;
  int size = 0;
  double max_rel_logits = 0.0;
  double max_rel_z_raw = 0.0;
  double max_rel() const { return std::max(max_rel_logits, max_rel_z_raw); }
};

inline GradCheckResult run_gradcheck(std::uint64_t seed, int size, double step = 1e-4, const LossConfig& cfg = {}) {
  GradCheckInstance inst = random_gradcheck_instance(seed, size, cfg);
  const LossGradient analytic = grad_total(inst.params, inst.targets, inst.weights, cfg);

  using Ext = long double;
  std::vector<double> logits = inst.params.logits.values();
  std::vector<double> z_raw = inst.params.z_raw.values();
  std::array<ReferencePartial<Ext>, kNumCorners> base;
  for (int c = 0; c < kNumCorners; ++c) base[c] = reference_channel_terms<Ext>(c, logits, z_raw, inst.targets, cfg);

  // Central differences with the subtraction done in extended precision; the
  // divisor is the step actually taken after rounding theta +/- h.
  const std::size_t per_channel = inst.targets.heat.channel_size();
  auto central = [&](std::vector<double>& theta) {
    std::vector<double> grad(theta.size());
    auto parts = base;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const int c = static_cast<int>(i / per_channel);
      const double saved = theta[i];
      theta[i] = saved + step;
      const Ext up = static_cast<Ext>(theta[i]) - saved;
      parts[c] = reference_channel_terms<Ext>(c, logits, z_raw, inst.targets, cfg);
      const Ext plus = reference_combine(parts, inst.weights, cfg);
      theta[i] = saved - step;
      const Ext down = saved - static_cast<Ext>(theta[i]);
      parts[c] = reference_channel_terms<Ext>(c, logits, z_raw, inst.targets, cfg);
      const Ext minus = reference_combine(parts, inst.weights, cfg);
      theta[i] = saved;
      parts[c] = base[c];
      grad[i] = static_cast<double>((plus - minus) / (up + down));
    }
    return grad;
  };

  GradCheckResult r{seed, size};
  r.max_rel_logits = max_relative_error(analytic.d_logits.values(), central(logits));
  r.max_rel_z_raw = max_relative_error(analytic.d_z_raw.values(), central(z_raw));
  return r;
}

}  // namespace moca3d
