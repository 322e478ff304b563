#pragma once

// Frozen 2D side: patch-grid features, per-view context, teacher tokens and
// the geometric query set.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pixpoint/dataset.hpp"
#include "pixpoint/matrix.hpp"
#include "pixpoint/render.hpp"

namespace pixpoint::tok2d {

using data::CameraView;
using data::PositionMap;

/// Number of per-cell geometric statistics fed to the backbone.
inline constexpr std::size_t kCellStats = 11;

struct BackboneConfig {
  std::size_t feature_dim = 96;   // F2d
  std::size_t hidden = 128;
  std::size_t context_dim = 16;   // Dc
  std::size_t patch = 8;
  /// Angular frequency scale of the first layer for world-coordinate inputs.
  double frequency = 6.0;
  std::uint64_t seed = 11;
};

/// Frozen random-weight perceptron over cell statistics plus the context map.
class Backbone2d {
 public:
  explicit Backbone2d(const BackboneConfig& cfg = {});

  const BackboneConfig& config() const { return cfg_; }
  /// stats (kCellStats) → feature (F2d)
  std::vector<double> features(const double* stats) const;
  /// F2d → Dc
  std::vector<double> context(const std::vector<double>& mean_feature) const;

 private:
  BackboneConfig cfg_;
  Matrix w1_;  // kCellStats × hidden
  std::vector<double> b1_;
  Matrix w2_;  // hidden × F2d
  Matrix wc_;  // F2d × Dc
};

struct PatchGrid {
  int view_index = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t patch = 0;
  Matrix features;          // (grid_h·grid_w) × F2d, row-major cell order
  std::vector<char> valid;  // per cell

  std::size_t cells() const { return grid_h * grid_w; }
  std::size_t valid_count() const;
  /// Indices of valid cells in row-major order.
  std::vector<std::size_t> valid_cells() const;
};

/// Covered-pixel fraction required for a valid cell (the center pixel must also be covered).
inline constexpr double kValidCoverage = 0.5;

/// Per-cell statistics: coverage, mean world xyz (centered on the unit cube),
/// mean camera-frame xyz, 10·depth standard deviation and a normal proxy from
/// in-cell finite differences, oriented toward the camera.
std::vector<double> cell_statistics(const PositionMap& map, const CameraView& camera, std::size_t row,
                                    std::size_t col, std::size_t patch);

PatchGrid extract_patch_features(const PositionMap& map, const CameraView& camera, const Backbone2d& backbone);

/// Mean of valid-cell features through the frozen context map; zero without valid cells.
std::vector<double> compute_view_context(const PatchGrid& grid, const Backbone2d& backbone);

struct TeacherConfig {
  std::size_t dim = 32;  // Dt
  std::size_t hidden = 64;
  std::size_t categories = 8;
  std::size_t part_bins = 8;
  double view_perturbation = 0.05;
  std::uint64_t seed = 23;
};

/// Frozen stand-in for an image class-token teacher.
class TeacherNet {
 public:
  explicit TeacherNet(const TeacherConfig& cfg = {});
  const TeacherConfig& config() const { return cfg_; }

  /// Instance-level descriptor: one-hot category ⊕ bbox extents ⊕ part histogram.
  std::vector<double> shape_input(const data::ObjectInstance& inst) const;
  std::vector<double> token(const data::ObjectInstance& inst, const CameraView& camera) const;

 private:
  TeacherConfig cfg_;
  Matrix w1_;
  std::vector<double> b1_;
  Matrix w2_;
  Matrix wv_;  // 3 × dim, view perturbation
};

/// d_s for one view.
std::vector<double> teacher_token(const TeacherNet& net, const data::ObjectInstance& inst,
                                  const CameraView& camera);

/// t_i: mean of the rows of `tokens` (views × Dt).
std::vector<double> mean_teacher(const Matrix& tokens);

struct QuerySet {
  Matrix q;                       // M × 3 world coordinates
  Matrix x;                       // M × F2d features
  std::vector<std::size_t> view;  // π(m): index into the grid list passed to sample_queries
  std::vector<std::size_t> cell;  // row-major cell index within its view

  std::size_t size() const { return view.size(); }
  bool empty() const { return view.empty(); }
};

/// Pools every valid grid-center sample across views; FPS down to m_max when
/// larger, first pick nearest the pool centroid, ties to the lowest index.
QuerySet sample_queries(const std::vector<const PatchGrid*>& grids, const std::vector<const PositionMap*>& maps,
                        std::size_t m_max);

}  // namespace pixpoint::tok2d
