#include "pixpoint/tokenize2d.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "pixpoint/error.hpp"
#include "pixpoint/kernels.hpp"

namespace pixpoint::tok2d {

namespace {

Matrix frozen_gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.data) v = g(rng);
  return m;
}

// out = act(inᵀ · w), w is in×out
std::vector<double> apply_layer(const double* in, const Matrix& w) {
  std::vector<double> out(w.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double s = in[i];
    if (s == 0.0) continue;
    for (std::size_t j = 0; j < w.cols; ++j) out[j] += s * w(i, j);
  }
  return out;
}

}  // namespace

Backbone2d::Backbone2d(const BackboneConfig& cfg) : cfg_(cfg) {
  require(cfg.feature_dim > 0 && cfg.hidden > 0 && cfg.context_dim > 0 && cfg.patch > 0,
          ErrorCode::kConfig, "backbone: dimensions must be positive");
  std::mt19937_64 rng(cfg.seed);
  w1_ = frozen_gaussian(kCellStats, cfg.hidden, 1.0, rng);
  // World-coordinate rows get the high-frequency scale.
  for (std::size_t r = 1; r <= 3; ++r)
    for (std::size_t c = 0; c < cfg.hidden; ++c) w1_(r, c) *= cfg.frequency;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  b1_.resize(cfg.hidden);
  for (double& b : b1_) b = phase(rng);
  w2_ = frozen_gaussian(cfg.hidden, cfg.feature_dim, std::sqrt(2.0 / static_cast<double>(cfg.hidden)), rng);
  wc_ = frozen_gaussian(cfg.feature_dim, cfg.context_dim, 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim)),
                        rng);
}

std::vector<double> Backbone2d::features(const double* stats) const {
  std::vector<double> h = apply_layer(stats, w1_);
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::sin(h[j] + b1_[j]);
  std::vector<double> f = apply_layer(h.data(), w2_);
  for (double& v : f) v = std::tanh(v);
  return f;
}

std::vector<double> Backbone2d::context(const std::vector<double>& mean_feature) const {
  require(mean_feature.size() == cfg_.feature_dim, ErrorCode::kShapeMismatch, "backbone context: bad feature size");
  return apply_layer(mean_feature.data(), wc_);
}

std::size_t PatchGrid::valid_count() const {
  std::size_t n = 0;
  for (char v : valid) n += v ? 1 : 0;
  return n;
}

std::vector<std::size_t> PatchGrid::valid_cells() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) out.push_back(i);
  return out;
}

std::vector<double> cell_statistics(const PositionMap& map, const CameraView& camera, std::size_t row,
                                    std::size_t col, std::size_t patch) {
  std::vector<double> s(kCellStats, 0.0);
  const int r0 = static_cast<int>(row * patch), c0 = static_cast<int>(col * patch);
  const int p = static_cast<int>(patch);
  double count = 0.0, depth_sq = 0.0;
  Vec3 world{0, 0, 0}, cam{0, 0, 0}, normal{0, 0, 0};
  for (int r = r0; r < r0 + p; ++r)
    for (int c = c0; c < c0 + p; ++c) {
      if (!map.covered(r, c)) continue;
      const Vec3 x = map.xyz(r, c);
      const Vec3 xc = camera.to_camera(x);
      world = world + x;
      cam = cam + xc;
      depth_sq += xc[2] * xc[2];
      count += 1.0;
      if (r + 1 < r0 + p && c + 1 < c0 + p && map.covered(r + 1, c) && map.covered(r, c + 1))
        normal = normal + cross(map.xyz(r, c + 1) - x, map.xyz(r + 1, c) - x);
    }
  if (count == 0.0) return s;
  world = (1.0 / count) * world;
  cam = (1.0 / count) * cam;
  const double var = std::max(0.0, depth_sq / count - cam[2] * cam[2]);
  // Orient the proxy toward the camera (camera looks along its +z).
  Vec3 n = normalized(normal);
  const Vec3 forward = camera.pose.rotation[2];
  if (dot(n, forward) > 0) n = -1.0 * n;
  s[0] = count / static_cast<double>(patch * patch);
  for (int a = 0; a < 3; ++a) {
    s[1 + a] = world[a] - 0.5;
    s[4 + a] = cam[a];
    s[8 + a] = n[a];
  }
  s[7] = 10.0 * std::sqrt(var);
  return s;
}

PatchGrid extract_patch_features(const PositionMap& map, const CameraView& camera, const Backbone2d& backbone) {
  const std::size_t patch = backbone.config().patch;
  require(map.height > 0 && map.width > 0 && map.height % static_cast<int>(patch) == 0 &&
              map.width % static_cast<int>(patch) == 0,
          ErrorCode::kInvalidArgument, "extract_patch_features: map size not divisible by the patch size");
  PatchGrid grid;
  grid.view_index = camera.view_index;
  grid.patch = patch;
  grid.grid_h = static_cast<std::size_t>(map.height) / patch;
  grid.grid_w = static_cast<std::size_t>(map.width) / patch;
  grid.features = Matrix(grid.cells(), backbone.config().feature_dim);
  grid.valid.assign(grid.cells(), 0);
  for (std::size_t u = 0; u < grid.grid_h; ++u)
    for (std::size_t v = 0; v < grid.grid_w; ++v) {
      const std::size_t cell = u * grid.grid_w + v;
      const int cr = static_cast<int>(u * patch + patch / 2), cc = static_cast<int>(v * patch + patch / 2);
      if (!map.covered(cr, cc)) continue;
      const auto stats = cell_statistics(map, camera, u, v, patch);
      if (stats[0] < kValidCoverage) continue;
      grid.valid[cell] = 1;
      const auto f = backbone.features(stats.data());
      std::copy(f.begin(), f.end(), grid.features.row(cell).begin());
    }
  return grid;
}

std::vector<double> compute_view_context(const PatchGrid& grid, const Backbone2d& backbone) {
  const std::size_t dim = backbone.config().feature_dim;
  std::vector<double> mean(dim, 0.0);
  std::size_t n = 0;
  for (std::size_t cell = 0; cell < grid.cells(); ++cell) {
    if (!grid.valid[cell]) continue;
    const auto row = grid.features.row(cell);
    for (std::size_t j = 0; j < dim; ++j) mean[j] += row[j];
    ++n;
  }
  if (n == 0) return std::vector<double>(backbone.config().context_dim, 0.0);
  for (double& v : mean) v /= static_cast<double>(n);
  return backbone.context(mean);
}

TeacherNet::TeacherNet(const TeacherConfig& cfg) : cfg_(cfg) {
  std::mt19937_64 rng(cfg.seed);
  const std::size_t in = cfg.categories + 3 + cfg.part_bins;
  w1_ = frozen_gaussian(in, cfg.hidden, 1.0, rng);
  // Category evidence dominates; geometry modulates it.
  for (std::size_t r = 0; r < cfg.categories; ++r)
    for (std::size_t c = 0; c < cfg.hidden; ++c) w1_(r, c) *= 2.0;
  std::normal_distribution<double> g(0.0, 0.5);
  b1_.resize(cfg.hidden);
  for (double& b : b1_) b = g(rng);
  w2_ = frozen_gaussian(cfg.hidden, cfg.dim, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)), rng);
  wv_ = frozen_gaussian(3, cfg.dim, 1.0, rng);
}

std::vector<double> TeacherNet::shape_input(const data::ObjectInstance& inst) const {
  std::vector<double> in(cfg_.categories + 3 + cfg_.part_bins, 0.0);
  require(inst.category_id >= 0 && static_cast<std::size_t>(inst.category_id) < cfg_.categories,
          ErrorCode::kInvalidArgument, "teacher: category id out of range");
  in[static_cast<std::size_t>(inst.category_id)] = 1.0;
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (std::size_t i = 0; i < inst.points.rows; ++i)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], inst.points(i, a));
      hi[a] = std::max(hi[a], inst.points(i, a));
    }
  for (int a = 0; a < 3; ++a) in[cfg_.categories + a] = inst.points.rows ? hi[a] - lo[a] : 0.0;
  const std::size_t base = cfg_.categories + 3;
  for (int label : inst.point_part) {
    const std::size_t bin = static_cast<std::size_t>(std::max(0, label)) % cfg_.part_bins;
    in[base + bin] += 1.0 / static_cast<double>(inst.point_part.size());
  }
  return in;
}

std::vector<double> TeacherNet::token(const data::ObjectInstance& inst, const CameraView& camera) const {
  const auto in = shape_input(inst);
  std::vector<double> h = apply_layer(in.data(), w1_);
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::tanh(h[j] + b1_[j]);
  std::vector<double> d = apply_layer(h.data(), w2_);
  const Vec3 forward = camera.pose.rotation[2];
  const auto view = apply_layer(forward.data(), wv_);
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = std::tanh(d[j]) + cfg_.view_perturbation * std::tanh(view[j]);
  return d;
}

std::vector<double> teacher_token(const TeacherNet& net, const data::ObjectInstance& inst,
                                  const CameraView& camera) {
  return net.token(inst, camera);
}

std::vector<double> mean_teacher(const Matrix& tokens) {
  require(tokens.rows > 0, ErrorCode::kInvalidArgument, "mean_teacher: no views");
  std::vector<double> t(tokens.cols, 0.0);
  for (std::size_t r = 0; r < tokens.rows; ++r)
    for (std::size_t c = 0; c < tokens.cols; ++c) t[c] += tokens(r, c);
  for (double& v : t) v /= static_cast<double>(tokens.rows);
  return t;
}

QuerySet sample_queries(const std::vector<const PatchGrid*>& grids, const std::vector<const PositionMap*>& maps,
                        std::size_t m_max) {
  require(grids.size() == maps.size(), ErrorCode::kShapeMismatch, "sample_queries: grids and maps differ in count");
  struct Candidate {
    std::size_t view, cell;
    Vec3 q;
  };
  std::vector<Candidate> pool;
  for (std::size_t s = 0; s < grids.size(); ++s) {
    const PatchGrid& g = *grids[s];
    const PositionMap& m = *maps[s];
    require(g.grid_h * g.patch == static_cast<std::size_t>(m.height) &&
                g.grid_w * g.patch == static_cast<std::size_t>(m.width),
            ErrorCode::kShapeMismatch, "sample_queries: grid does not match its map");
    for (std::size_t cell : g.valid_cells()) {
      const std::size_t u = cell / g.grid_w, v = cell % g.grid_w;
      const int r = static_cast<int>(u * g.patch + g.patch / 2), c = static_cast<int>(v * g.patch + g.patch / 2);
      pool.push_back({s, cell, m.xyz(r, c)});
    }
  }
  std::vector<std::size_t> keep(pool.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
  if (pool.size() > m_max) {
    Matrix pts(pool.size(), 3);
    for (std::size_t i = 0; i < pool.size(); ++i)
      for (int a = 0; a < 3; ++a) pts(i, a) = pool[i].q[a];
    keep = kernels::farthest_point_sampling(pts, m_max, kernels::nearest_to_centroid(pts));
  }
  QuerySet qs;
  const std::size_t fdim = grids.empty() ? 0 : grids.front()->features.cols;
  qs.q = Matrix(keep.size(), 3);
  qs.x = Matrix(keep.size(), fdim);
  for (std::size_t m = 0; m < keep.size(); ++m) {
    const Candidate& c = pool[keep[m]];
    for (int a = 0; a < 3; ++a) qs.q(m, a) = c.q[a];
    const auto f = grids[c.view]->features.row(c.cell);
    std::copy(f.begin(), f.end(), qs.x.row(m).begin());
    qs.view.push_back(c.view);
    qs.cell.push_back(c.cell);
  }
  return qs;
}

}  // namespace pixpoint::tok2d
