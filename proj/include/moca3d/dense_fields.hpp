#pragma once

// Dense per-corner fields on the prediction grid: box prior maps, target
// heatmaps, soft-argmax extraction and bilinear depth sampling.
//
// Grid coordinates are cell indices (x in [0, w-1], y in [0, h-1]). A grid
// maps to an image of image_w x image_h pixels with cell centers aligned to
// pixel centers: u = (x + 0.5) * image_w / w - 0.5.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "moca3d/error.hpp"
#include "moca3d/geometry.hpp"

namespace moca3d {

inline constexpr double kDefaultBeta = 100.0;
inline constexpr int kDefaultGridSize = 128;
inline constexpr double kMinSigma2 = 1.0;

struct Grid {
  int width = kDefaultGridSize;
  int height = kDefaultGridSize;
  double image_w = 512.0;
  double image_h = 512.0;

  static Grid make(int width, int height, double image_w, double image_h) {
    Grid g{width, height, image_w, image_h};
    g.validate();
    return g;
  }

  // Grid whose cells coincide with image pixels.
  static Grid square(int n) { return make(n, n, n, n); }

  void validate() const {
    if (width < 2 || height < 2) fail(ErrorCode::InvalidArgument, "grid must be at least 2x2");
    if (!(image_w > 0.0 && image_h > 0.0)) fail(ErrorCode::InvalidArgument, "grid image size must be positive");
  }

  int cells() const { return width * height; }
  double scale_x() const { return image_w / width; }
  double scale_y() const { return image_h / height; }

  Vec2 to_image(const Vec2& g) const {
    return Vec2((g.x() + 0.5) * scale_x() - 0.5, (g.y() + 0.5) * scale_y() - 0.5);
  }
  Vec2 to_grid(const Vec2& p) const {
    return Vec2((p.x() + 0.5) / scale_x() - 0.5, (p.y() + 0.5) / scale_y() - 0.5);
  }
};

// Row-major stack of equally sized 2D channels: index (c * h + y) * w + x.
class FieldStack {
 public:
  FieldStack() = default;
  FieldStack(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  std::size_t channel_size() const { return static_cast<std::size_t>(height_) * width_; }

  double& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  double operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> channel(int c) { return {data_.data() + c * channel_size(), channel_size()}; }
  std::span<const double> channel(int c) const { return {data_.data() + c * channel_size(), channel_size()}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const FieldStack& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const FieldStack& a, const FieldStack& b, const char* what) {
  if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, what);
}

// Eight corner heatmaps H in [0,1] and eight depth maps Z >= 0.
struct HeatField {
  FieldStack heat;
  FieldStack depth;

  HeatField() = default;
  HeatField(int height, int width) : heat(kNumCorners, height, width), depth(kNumCorners, height, width) {}

  void validate() const {
    if (heat.channels() != kNumCorners) fail(ErrorCode::ShapeMismatch, "heat field needs 8 channels");
    require_same_shape(heat, depth, "heat and depth fields differ in shape");
    for (double h : heat.values()) {
      if (!(h >= 0.0 && h <= 1.0)) fail(ErrorCode::InvalidArgument, "heatmap values must lie in [0,1]");
    }
    for (double z : depth.values()) {
      if (!(z >= 0.0) || !std::isfinite(z)) fail(ErrorCode::InvalidArgument, "depth values must be finite and >= 0");
    }
  }
};

// Axis-aligned 2D box (x1, y1) top-left, (x2, y2) bottom-right.
struct Box2 {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  Vec2 center() const { return Vec2(0.5 * (x1 + x2), 0.5 * (y1 + y2)); }

  bool operator==(const Box2&) const = default;

  void validate() const {
    if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2))) {
      fail(ErrorCode::DegenerateBox, "box must be finite");
    }
    if (!(x2 > x1) || !(y2 > y1)) fail(ErrorCode::DegenerateBox, "box must have positive width and height");
  }
};

struct BoxPrior {
  double dx = 0.0;
  double dy = 0.0;
  double u = 0.0;
  double v = 0.0;
};

inline BoxPrior box_prior_at(const Box2& box, const Vec2& p) {
  box.validate();
  const Vec2 c = box.center();
  return {(p.x() - c.x()) / box.width(), (p.y() - c.y()) / box.height(), (p.x() - box.x1) / box.width(),
          (p.y() - box.y1) / box.height()};
}

// Four channels (dx, dy, u, v) evaluated at normalized cell centers.
inline FieldStack box_prior_map(const Box2& box, const Grid& grid) {
  box.validate();
  grid.validate();
  FieldStack out(4, grid.height, grid.width);
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      const Vec2 p((x + 0.5) / grid.width, (y + 0.5) / grid.height);
      const BoxPrior b = box_prior_at(box, p);
      out(0, y, x) = b.dx;
      out(1, y, x) = b.dy;
      out(2, y, x) = b.u;
      out(3, y, x) = b.v;
    }
  }
  return out;
}

// Corners TL, TR, BL, BR; edge midpoints top, bottom, left, right; center.
inline std::array<Vec2, 9> box_keypoints(const Box2& b) {
  b.validate();
  const Vec2 c = b.center();
  return {Vec2(b.x1, b.y1), Vec2(b.x2, b.y1), Vec2(b.x1, b.y2), Vec2(b.x2, b.y2),
          Vec2(c.x(), b.y1), Vec2(c.x(), b.y2), Vec2(b.x1, c.y()), Vec2(b.x2, c.y()),
          c};
}

inline Vec2 corner_centroid(const Corners2D& corners) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : corners) c += p;
  return c / kNumCorners;
}

// 2*sigma_i^2 = (|p_i - c| / 5)^2, floored at kMinSigma2.
inline CornerDepths adaptive_sigma2(const Corners2D& corners, const Vec2& center) {
  CornerDepths out;
  for (int i = 0; i < kNumCorners; ++i) {
    const double r = (corners[i] - center).norm() / 5.0;
    out[i] = std::max(r * r, kMinSigma2);
  }
  return out;
}

inline CornerDepths adaptive_sigma2(const Corners2D& corners) {
  return adaptive_sigma2(corners, corner_centroid(corners));
}

struct TargetHeatmaps {
  FieldStack values;
  CornerDepths sigmas2{};
};

// Dense Gaussian peaks W_i(x,y) = exp(-|(x,y) - p_i|^2 / (2 sigma_i^2)), corners in
// grid units, no truncation radius.
inline TargetHeatmaps target_heatmaps(const Corners2D& corners, const Grid& grid, const CornerDepths& sigmas2) {
  grid.validate();
  TargetHeatmaps t{FieldStack(kNumCorners, grid.height, grid.width), sigmas2};
  for (int c = 0; c < kNumCorners; ++c) {
    if (!(sigmas2[c] > 0.0)) fail(ErrorCode::InvalidArgument, "2*sigma^2 must be positive");
    for (int y = 0; y < grid.height; ++y) {
      const double dy = y - corners[c].y();
      for (int x = 0; x < grid.width; ++x) {
        const double dx = x - corners[c].x();
        t.values(c, y, x) = std::exp(-(dx * dx + dy * dy) / sigmas2[c]);
      }
    }
  }
  return t;
}

struct SoftArgmax {
  Vec2 point = Vec2::Zero();
  std::vector<double> prob;  // row-major h x w
};

// pi = softmax(beta * field), point = expected (x, y) under pi. Sums run in
// row-major order so results do not depend on any parallel schedule.
inline SoftArgmax soft_argmax(std::span<const double> field, int width, int height, double beta = kDefaultBeta) {
  if (!(beta > 0.0)) fail(ErrorCode::InvalidArgument, "beta must be positive");
  if (field.size() != static_cast<std::size_t>(width) * height) {
    fail(ErrorCode::ShapeMismatch, "soft_argmax field size does not match grid");
  }
  SoftArgmax out;
  out.prob.resize(field.size());
  const double peak = *std::max_element(field.begin(), field.end());
  double total = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    out.prob[i] = std::exp(beta * (field[i] - peak));
    total += out.prob[i];
  }
  double ex = 0.0;
  double ey = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double& p = out.prob[static_cast<std::size_t>(y) * width + x];
      p /= total;
      ex += x * p;
      ey += y * p;
    }
  }
  out.point = Vec2(ex, ey);
  return out;
}

struct BilinearSample {
  double value = 0.0;
  double d_dx = 0.0;  // derivative w.r.t. the sample location; 0 where clamped
  double d_dy = 0.0;
  int x0 = 0;
  int y0 = 0;
  double fx = 0.0;
  double fy = 0.0;
};

// Bilinear interpolation with the location clamped to [0, w-1] x [0, h-1].
inline BilinearSample bilinear_sample(std::span<const double> field, int width, int height, const Vec2& p) {
  if (width < 2 || height < 2 || field.size() != static_cast<std::size_t>(width) * height) {
    fail(ErrorCode::ShapeMismatch, "bilinear_sample needs a field of at least 2x2");
  }
  const bool clamp_x = !(p.x() >= 0.0 && p.x() <= width - 1.0);
  const bool clamp_y = !(p.y() >= 0.0 && p.y() <= height - 1.0);
  const double px = std::clamp(p.x(), 0.0, width - 1.0);
  const double py = std::clamp(p.y(), 0.0, height - 1.0);

  BilinearSample s;
  s.x0 = std::min(static_cast<int>(std::floor(px)), width - 2);
  s.y0 = std::min(static_cast<int>(std::floor(py)), height - 2);
  s.fx = px - s.x0;
  s.fy = py - s.y0;

  auto at = [&](int x, int y) { return field[static_cast<std::size_t>(y) * width + x]; };
  const double v00 = at(s.x0, s.y0);
  const double v10 = at(s.x0 + 1, s.y0);
  const double v01 = at(s.x0, s.y0 + 1);
  const double v11 = at(s.x0 + 1, s.y0 + 1);

  // lerp form keeps constant fields exact
  const double top = v00 + s.fx * (v10 - v00);
  const double bottom = v01 + s.fx * (v11 - v01);
  s.value = top + s.fy * (bottom - top);
  s.d_dx = clamp_x ? 0.0 : (1.0 - s.fy) * (v10 - v00) + s.fy * (v11 - v01);
  s.d_dy = clamp_y ? 0.0 : bottom - top;
  return s;
}

// Soft-argmax per channel, depth sampled at the soft-argmax location, then
// coordinates rescaled to image pixels. Depths stay in the space the depth
// field was trained in (virtual).
inline CornerSet extract_corners(const HeatField& field, const Grid& grid, double beta = kDefaultBeta) {
  if (field.heat.width() != grid.width || field.heat.height() != grid.height) {
    fail(ErrorCode::ShapeMismatch, "heat field does not match grid");
  }
  require_same_shape(field.heat, field.depth, "heat and depth fields differ in shape");
  CornerSet out;
  out.space = DepthSpace::Virtual;
  for (int c = 0; c < kNumCorners; ++c) {
    const SoftArgmax sa = soft_argmax(field.heat.channel(c), grid.width, grid.height, beta);
    out.depth[c] = bilinear_sample(field.depth.channel(c), grid.width, grid.height, sa.point).value;
    out.uv[c] = grid.to_image(sa.point);
  }
  return out;
}

}  // namespace moca3d
