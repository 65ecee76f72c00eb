#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "moca3d/fit.hpp"
#include "moca3d/gradcheck.hpp"
#include "moca3d/losses.hpp"
#include "moca3d/synthetic.hpp"

using namespace moca3d;

TEST(SmoothL1, Examples) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.0), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(1.0), 0.5);  // continuous at the knee
}

TEST(Activations, SoftplusInverse) {
  for (double y : {1e-6, 0.3, 1.0, 7.5, 40.0}) EXPECT_NEAR(softplus(softplus_inverse(y)), y, 1e-12 * std::max(1.0, y));
  EXPECT_THROW(softplus_inverse(0.0), Error);
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_GT(sigmoid(-800.0), -1e-300);
  EXPECT_TRUE(std::isfinite(softplus(800.0)));
}

TEST(PeakWeights, ThresholdRule) {
  FieldStack w(1, 1, 3);
  w[0] = 0.8;
  w[1] = 0.1;
  w[2] = 0.05;
  const FieldStack a = peak_weights(w, 0.1, 50.0);
  EXPECT_DOUBLE_EQ(a[0], 50.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);  // strictly greater than tau
  EXPECT_DOUBLE_EQ(a[2], 1.0);
  const FieldStack u = peak_weights(w, 0.1, 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(u[i], 1.0);
  EXPECT_THROW(peak_weights(w, 0.1, 0.5), Error);
}

TEST(LossCoarse, Examples) {
  FieldStack target(8, 4, 4, 0.25);
  FieldStack peak(8, 4, 4, 1.0);
  EXPECT_DOUBLE_EQ(loss_coarse(target, target, peak), 0.0);
  FieldStack h = target;
  for (double& v : h.values()) v += 0.5;
  EXPECT_NEAR(loss_coarse(h, target, peak), 0.125, 1e-9);
  EXPECT_THROW(loss_coarse(FieldStack(8, 4, 5), target, peak), Error);
}

TEST(LossFine, Examples) {
  Corners2D p;
  for (int i = 0; i < 8; ++i) p[i] = Vec2(i, 2 * i);
  EXPECT_DOUBLE_EQ(loss_fine(p, p), 0.0);
  Corners2D half = p, far = p;
  for (auto& q : half) q.x() += 0.5;
  for (auto& q : far) q += Vec2(3, 4);
  EXPECT_DOUBLE_EQ(loss_fine(half, p), 0.125);
  EXPECT_DOUBLE_EQ(loss_fine(far, p), 6.0);
}

TEST(LossDepth, Examples) {
  CornerDepths d;
  for (int i = 0; i < 8; ++i) d[i] = 1.0 + i;
  FieldStack heat(8, 3, 3, 0.4), depth(8, 3, 3);
  for (int c = 0; c < 8; ++c) {
    for (double& z : depth.channel(c)) z = d[c];
  }
  EXPECT_DOUBLE_EQ(loss_depth(heat, depth, d), 0.0);
  FieldStack zero(8, 3, 3, 0.0);
  for (double& z : depth.values()) z += 2.0;
  EXPECT_DOUBLE_EQ(loss_depth(zero, depth, d), 0.0);
  EXPECT_NEAR(loss_depth(heat, depth, d), 1.5, 1e-6);
}

TEST(Schedule, EndpointsAndMidpoint) {
  const LossWeights w0 = schedule(0, 120, 5);
  EXPECT_DOUBLE_EQ(w0.coarse, 50);
  EXPECT_DOUBLE_EQ(w0.fine, 0);
  EXPECT_DOUBLE_EQ(w0.depth, 0);
  const LossWeights w4 = schedule(4, 120, 5);
  EXPECT_DOUBLE_EQ(w4.coarse, 50);
  const LossWeights end = schedule(120, 120, 5);
  EXPECT_DOUBLE_EQ(end.coarse, 1);
  EXPECT_DOUBLE_EQ(end.fine, 2);
  EXPECT_DOUBLE_EQ(end.depth, 5);
  const LossWeights mid = schedule(60, 110, 10);
  EXPECT_DOUBLE_EQ(mid.coarse, 25.5);
  EXPECT_DOUBLE_EQ(mid.fine, 1);
  EXPECT_DOUBLE_EQ(mid.depth, 2.5);
  EXPECT_THROW(schedule(121, 120, 5), Error);
  EXPECT_THROW(schedule(0, 10, 10), Error);
}

namespace {

FitTargets small_targets(std::uint64_t seed, int n) {
  const FitInstance inst = synthetic_fit_instance(seed, n);
  return make_targets(inst.corners_grid, inst.depths, inst.grid);
}

HeatField matching_field(const FitTargets& t) {
  HeatField f(t.heat.height(), t.heat.width());
  f.heat = t.heat;
  for (int c = 0; c < 8; ++c) {
    for (double& z : f.depth.channel(c)) z = t.depths[c];
  }
  return f;
}

}  // namespace

TEST(TotalLoss, WeightedSumAndProjection) {
  const FitTargets t = small_targets(2, 16);
  HeatField f = matching_field(t);
  for (double& v : f.heat.values()) v = 0.5 * v + 0.1;
  for (double& z : f.depth.values()) z *= 1.3;
  const LossWeights w{3.0, 0.7, 2.0};
  const LossReport r = total_loss(f, t, w);
  EXPECT_NEAR(r.total, 3.0 * r.coarse + 0.7 * r.fine + 2.0 * r.depth, 1e-12);
  EXPECT_DOUBLE_EQ(total_loss(f, t, LossWeights{1, 0, 0}).total, r.coarse);
}

TEST(TotalLoss, ZeroAtExactMatch) {
  // Corners on grid nodes so the fine term also vanishes (up to softmax leakage).
  const Grid g = Grid::square(32);
  Corners2D c;
  CornerDepths d;
  for (int i = 0; i < 8; ++i) {
    c[i] = Vec2(4 + 3 * i, 25 - 2 * i);
    d[i] = 2.0 + i;
  }
  const FitTargets t = make_targets(c, d, g);
  const LossReport r = total_loss(matching_field(t), t, LossWeights{1, 2, 5});
  EXPECT_NEAR(r.total, 0.0, 1e-9);
}

TEST(Gradient, StationaryWhenTargetsMatchCurrentHeat) {
  FitTargets t = small_targets(3, 12);
  FitConfig cfg;
  FieldParams p = initial_params(Grid::square(12), cfg);
  t.heat = activate(p).heat;
  t.peak = peak_weights(t.heat, 0.1, 50.0);
  const LossGradient g = grad_total(p, t, LossWeights{1, 0, 0});
  for (double v : g.d_logits.values()) EXPECT_LT(std::abs(v), 1e-10);
}

TEST(FiniteDiff, QuadraticAndLinear) {
  std::vector<double> x{3.0};
  const auto q = finite_diff_grad([](const std::vector<double>& v) { return v[0] * v[0]; }, x, 1e-4);
  EXPECT_NEAR(q[0], 6.0, 1e-6);
  std::vector<double> y{1.0, -2.0};
  for (double h : {1e-1, 1e-3, 0.5}) {
    const auto l = finite_diff_grad([](const std::vector<double>& v) { return 2.0 * v[0] - 3.0 * v[1]; }, y, h);
    EXPECT_NEAR(l[0], 2.0, 1e-12);
    EXPECT_NEAR(l[1], -3.0, 1e-12);
  }
  EXPECT_EQ(y, (std::vector<double>{1.0, -2.0}));
}

TEST(Gradient, MatchesFiniteDifferenceOnSmallGrid) {
  const GradCheckResult r = run_gradcheck(1, 8);
  EXPECT_LE(r.max_rel(), 1e-4);
}

TEST(SampledDepthGradient, MatchesFiniteDifference) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int w = 6, h = 5;
  std::vector<double> heat(w * h), depth(w * h);
  for (auto& v : heat) v = u(rng);
  for (auto& v : depth) v = 1.0 + 3.0 * u(rng);
  const double beta = 4.0;  // soft enough that the location moves
  const SampledDepthGradient g = sampled_depth_gradient(heat, depth, w, h, beta);
  auto sampled = [&](const std::vector<double>& hh) {
    return bilinear_sample(depth, w, h, soft_argmax(hh, w, h, beta).point).value;
  };
  const auto num_h = finite_diff_grad(sampled, heat, 1e-6);
  EXPECT_LT(max_relative_error(g.d_heat, num_h, 1e-6), 1e-4);
  auto by_depth = [&](const std::vector<double>& dd) {
    return bilinear_sample(dd, w, h, soft_argmax(heat, w, h, beta).point).value;
  };
  const auto num_d = finite_diff_grad(by_depth, depth, 1e-6);
  EXPECT_LT(max_relative_error(g.d_depth, num_d, 1e-6), 1e-6);
}

TEST(Fit, ZeroStepsReturnsInitialization) {
  const FitInstance inst = synthetic_fit_instance(1, 16);
  const FitTargets t = make_targets(inst.corners_grid, inst.depths, inst.grid);
  FitConfig cfg;
  cfg.steps = 0;
  const FitResult r = fit_heatmaps(t, inst.grid, cfg);
  const FieldParams p0 = initial_params(inst.grid, cfg);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.params.logits.values(), p0.logits.values());
  EXPECT_EQ(r.params.z_raw.values(), p0.z_raw.values());
}

TEST(Fit, DeterministicTrace) {
  const FitInstance inst = synthetic_fit_instance(6, 24);
  const FitTargets t = make_targets(inst.corners_grid, inst.depths, inst.grid);
  FitConfig cfg;
  cfg.steps = 60;
  const FitResult a = fit_heatmaps(t, inst.grid, cfg);
  const FitResult b = fit_heatmaps(t, inst.grid, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(std::memcmp(&a.trace[i], &b.trace[i], sizeof(LossReport)), 0) << "step " << i;
  }
  EXPECT_EQ(a.params.logits.values(), b.params.logits.values());
}

// The scheduled total is not monotone (the ramp raises the fine and depth
// weights), so the descent property is checked under each step's own weights.
TEST(Fit, EachStepDescendsItsOwnObjective) {
  const FitInstance inst = synthetic_fit_instance(0, 64);
  const FitTargets t = make_targets(inst.corners_grid, inst.depths, inst.grid);
  FitConfig cfg;
  int violations = 0;
  std::vector<double> after;
  const FitResult r = fit_heatmaps(t, inst.grid, cfg, [&](int step, const FieldParams& p) {
    after.push_back(total_loss(activate(p), t, fit_weights(cfg, step), cfg.loss).total);
  });
  for (std::size_t s = 10; s < r.trace.size(); ++s) violations += after[s] > r.trace[s].total;
  EXPECT_EQ(violations, 0);
  for (const auto& rep : r.trace) EXPECT_TRUE(std::isfinite(rep.total));
  EXPECT_LT(r.trace.back().total, r.trace[cfg.steps / 2].total);
}

TEST(Fit, DivergenceIsReported) {
  const FitInstance inst = synthetic_fit_instance(0, 12);
  const FitTargets t = make_targets(inst.corners_grid, inst.depths, inst.grid);
  FitConfig cfg;
  cfg.steps = 5;
  cfg.lr_logits = std::nan("");
  try {
    fit_heatmaps(t, inst.grid, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Diverged);
  }
}
