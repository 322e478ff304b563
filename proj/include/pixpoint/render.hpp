#pragma once

// Orthographic z-buffered point splatting into position maps.

#include <cstdint>
#include <vector>

#include "pixpoint/dataset.hpp"
#include "pixpoint/geometry.hpp"

namespace pixpoint::data {

/// World→camera rigid pose with an orthographic projection. The camera looks
/// along +z of its own frame; smaller camera z is nearer. Pixel (row, col)
/// covers [col, col+1) × [row, row+1) and a camera-frame point (x, y) maps to
/// u = cx + scale·x, v = cy − scale·y.
struct CameraView {
  int view_index = 0;
  RigidTransform pose;
  double scale = 1.0;  // pixels per world unit
  double cx = 0.0;
  double cy = 0.0;
  int height = 64;
  int width = 64;
  bool orthographic_axis = false;

  Vec3 to_camera(const Vec3& world) const { return pose.apply_point(world); }
};

/// Throws when the pose is not a rotation or the image is empty.
void validate_camera(const CameraView& cam);

/// H×W×4 (x, y, z, alpha); background pixels hold (0, 0, 0, 0).
struct PositionMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  PositionMap() = default;
  PositionMap(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 4, 0.0f) {}

  float* at(int row, int col) { return data.data() + (static_cast<std::size_t>(row) * width + col) * 4; }
  const float* at(int row, int col) const { return data.data() + (static_cast<std::size_t>(row) * width + col) * 4; }
  bool covered(int row, int col) const { return at(row, col)[3] > 0.5f; }
  Vec3 xyz(int row, int col) const {
    const float* p = at(row, col);
    return {p[0], p[1], p[2]};
  }
  friend bool operator==(const PositionMap&, const PositionMap&) = default;
};

struct RenderOutput {
  PositionMap map;
  /// Part label of the winning splat per pixel, −1 for background.
  std::vector<int> part;
};

/// Camera looking at `target` from direction `dir`, scaled so the projected
/// points fit the image with the given margin fraction.
CameraView fit_orthographic(const Matrix& points, const Vec3& target, const Vec3& dir, int view_index,
                            int resolution, double margin = 0.08);

/// 6 axis-aligned views followed by `random_views` seeded random directions.
std::vector<CameraView> make_view_cameras(const ObjectInstance& inst, int resolution, int random_views,
                                          std::uint64_t seed);

/// Splats every row of inst.points: each point covers the pixel containing
/// its projection plus all pixels whose centers lie within `splat_radius`.
/// The nearest depth wins (lowest point index on ties).
RenderOutput render_view(const ObjectInstance& inst, const CameraView& camera, double splat_radius);

}  // namespace pixpoint::data
