#include "pixpoint/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "pixpoint/error.hpp"

namespace pixpoint::data {

void validate_camera(const CameraView& cam) {
  require(orthonormality_error(cam.pose.rotation) < 1e-9, ErrorCode::kInvalidArgument,
          "camera: pose rotation not orthonormal");
  require(cam.height > 0 && cam.width > 0, ErrorCode::kInvalidArgument, "camera: empty image");
  require(cam.scale > 0, ErrorCode::kInvalidArgument, "camera: non-positive scale");
}

CameraView fit_orthographic(const Matrix& points, const Vec3& target, const Vec3& dir, int view_index,
                            int resolution, double margin) {
  const Vec3 forward = normalized(-1.0 * dir);  // camera looks toward the target
  Vec3 up_hint{0, 1, 0};
  if (std::abs(dot(up_hint, forward)) > 0.95) up_hint = {0, 0, 1};
  const Vec3 right = normalized(cross(up_hint, forward));
  const Vec3 up = cross(forward, right);
  CameraView cam;
  cam.view_index = view_index;
  // Rows are the camera axes: x = right, y = up, z = forward.
  cam.pose.rotation = {right, up, forward};
  cam.pose.translation = -1.0 * pixpoint::apply(cam.pose.rotation, target);
  cam.height = cam.width = resolution;
  cam.cx = resolution / 2.0;
  cam.cy = resolution / 2.0;
  double extent = 1e-6;
  for (std::size_t i = 0; i < points.rows; ++i) {
    const Vec3 c = cam.to_camera({points(i, 0), points(i, 1), points(i, 2)});
    extent = std::max({extent, std::abs(c[0]), std::abs(c[1])});
  }
  cam.scale = (resolution / 2.0) * (1.0 - margin) / extent;
  return cam;
}

std::vector<CameraView> make_view_cameras(const ObjectInstance& inst, int resolution, int random_views,
                                          std::uint64_t seed) {
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (std::size_t i = 0; i < inst.points.rows; ++i)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], inst.points(i, a));
      hi[a] = std::max(hi[a], inst.points(i, a));
    }
  const Vec3 target = 0.5 * (lo + hi);
  std::vector<CameraView> cams;
  const Vec3 axes[6] = {{0, 0, 1}, {1, 0, 0}, {0, 0, -1}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
  for (int i = 0; i < 6; ++i) {
    cams.push_back(fit_orthographic(inst.points, target, axes[i], i, resolution));
    cams.back().orthographic_axis = true;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < random_views; ++i) {
    Vec3 d{0, 0, 0};
    while (norm(d) < 1e-6) d = {gauss(rng), gauss(rng), gauss(rng)};
    cams.push_back(fit_orthographic(inst.points, target, normalized(d), 6 + i, resolution));
  }
  return cams;
}

RenderOutput render_view(const ObjectInstance& inst, const CameraView& camera, double splat_radius) {
  validate_camera(camera);
  const int h = camera.height, w = camera.width;
  RenderOutput out{PositionMap(h, w), std::vector<int>(static_cast<std::size_t>(h) * w, -1)};
  std::vector<double> depth(static_cast<std::size_t>(h) * w, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> winner(static_cast<std::size_t>(h) * w, inst.points.rows);
  const int reach = static_cast<int>(std::ceil(splat_radius)) + 1;
  const double r2 = splat_radius * splat_radius;

  for (std::size_t i = 0; i < inst.points.rows; ++i) {
    const Vec3 c = camera.to_camera({inst.points(i, 0), inst.points(i, 1), inst.points(i, 2)});
    const double u = camera.cx + camera.scale * c[0];
    const double v = camera.cy - camera.scale * c[1];
    const int col0 = static_cast<int>(std::floor(u));
    const int row0 = static_cast<int>(std::floor(v));
    for (int row = row0 - reach; row <= row0 + reach; ++row) {
      if (row < 0 || row >= h) continue;
      for (int col = col0 - reach; col <= col0 + reach; ++col) {
        if (col < 0 || col >= w) continue;
        const double du = col + 0.5 - u, dv = row + 0.5 - v;
        const bool own = row == row0 && col == col0;
        if (!own && du * du + dv * dv > r2) continue;
        const std::size_t px = static_cast<std::size_t>(row) * w + col;
        if (c[2] < depth[px]) {
          depth[px] = c[2];
          winner[px] = i;
        }
      }
    }
  }
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col) {
      const std::size_t px = static_cast<std::size_t>(row) * w + col;
      if (winner[px] == inst.points.rows) continue;
      const std::size_t i = winner[px];
      float* p = out.map.at(row, col);
      p[0] = static_cast<float>(inst.points(i, 0));
      p[1] = static_cast<float>(inst.points(i, 1));
      p[2] = static_cast<float>(inst.points(i, 2));
      p[3] = 1.0f;
      out.part[px] = inst.point_part.empty() ? 0 : inst.point_part[i];
    }
  return out;
}

}  // namespace pixpoint::data
