#pragma once

// 2D part mask → 3D face region: patch activation, matching, density
// clustering and face-adjacency flood fill.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pixpoint/corpus.hpp"
#include "pixpoint/matrix.hpp"
#include "pixpoint/model.hpp"
#include "pixpoint/pipeline.hpp"

namespace pixpoint::part {

struct TransferConfig {
  double coverage_frac = 0.3;
  double sim_min = 0.5;
  double eps = 0.15;
  std::size_t min_pts = 2;
  double seed_radius = 0.05;
  double flood_radius = 0.50;
};

void validate(const TransferConfig& cfg);

struct PartMask2D {
  int height = 0;
  int width = 0;
  std::vector<char> mask;  // row-major
  std::size_t view = 0;
  int click_row = 0;
  int click_col = 0;
  int part_label = -1;  // −1 for an external mask

  bool at(int r, int c) const { return mask[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + c] != 0; }
  std::size_t area() const;
};

/// Smallest rendered part footprint containing the click; background clicks throw.
PartMask2D select_mask(const data::ViewRender& render, std::size_t view, int row, int col);

/// Plain-text PBM (P1) mask of the render size; the click must lie inside it.
PartMask2D load_mask(const std::filesystem::path& path, const data::ViewRender& render, std::size_t view, int row,
                     int col);

/// Row-major cell indices whose mask-covered pixel fraction is at least `coverage_frac`.
std::vector<std::size_t> activate_patches(const PartMask2D& mask, std::size_t patch, double coverage_frac);

struct Match {
  std::size_t patch = 0;  // row index into the patch descriptor matrix
  std::size_t token = 0;
  double similarity = 0.0;
};

struct MatchSet {
  std::vector<Match> matches;   // sorted by token
  std::size_t raw = 0;          // one per patch before dedup
  std::size_t deduplicated = 0;

  bool no_confident_region() const { return matches.empty(); }
};

/// Top-1 token per patch row, dedup per token keeping the highest similarity
/// (lowest patch on ties), then drop similarities below `sim_min`.
MatchSet match_and_filter(const Matrix& patch_desc, const Matrix& token_desc, double sim_min);

/// Sequential DBSCAN over rows of `points` (first three columns); −1 = noise.
/// Neighborhoods include the point itself and use distance ≤ eps.
std::vector<int> dbscan(const Matrix& points, double eps, std::size_t min_pts);

/// Largest cluster label (ties to the lowest), or −1 without clusters.
int dominant_cluster(const std::vector<int>& labels);

struct Region3D {
  std::vector<std::uint32_t> faces;  // sorted
  std::vector<std::uint32_t> seeds;  // sorted
  int cluster = -1;
};

/// BFS from `seeds` through faces with `allowed` set, then the largest
/// connected component (ties to the one holding the lowest face index).
Region3D flood_fill(const std::vector<std::uint32_t>& seeds, const std::vector<std::vector<std::uint32_t>>& adjacency,
                    const std::vector<char>& allowed);

/// Distance from `p` to triangle `f` of the instance.
double face_distance(const data::ObjectInstance& inst, std::size_t f, const Vec3& p);

/// Faces within `radius` of any of `centers`.
std::vector<char> faces_near(const data::ObjectInstance& inst, const std::vector<Vec3>& centers, double radius);

enum class TransferStatus { kOk, kNoActivePatches, kNoConfidentMatch, kNoCluster, kNoSeeds };

const char* status_name(TransferStatus s);

struct TransferResult {
  TransferStatus status = TransferStatus::kOk;
  PartMask2D mask;
  std::vector<std::size_t> active;        // active valid cells
  std::size_t active_invalid = 0;         // active cells without a descriptor
  std::vector<std::size_t> match_cells;   // cell of each match
  MatchSet matches;
  std::vector<int> labels;                // DBSCAN label per match
  int dominant = -1;
  std::vector<std::size_t> cluster_tokens;
  Region3D region;
};

/// Full pipeline from a mask on one view of a prepared object.
TransferResult transfer(Model& model, const PreparedObject& obj, const PartMask2D& mask, const TransferConfig& cfg);

/// Face-count IoU of two sorted face sets.
double face_iou(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b);
double area_iou(const data::ObjectInstance& inst, const std::vector<std::uint32_t>& a,
                const std::vector<std::uint32_t>& b);

std::vector<std::uint32_t> part_faces(const data::ObjectInstance& inst, int label);

/// True when `faces` form one connected component of the adjacency graph.
bool single_component(const std::vector<std::uint32_t>& faces,
                      const std::vector<std::vector<std::uint32_t>>& adjacency);

struct TripleResult {
  int object_id = 0;
  std::size_t view = 0;
  int row = 0;
  int col = 0;
  int part_label = -1;
  TransferStatus status = TransferStatus::kOk;
  double iou = 0.0;
  double area_iou = 0.0;
  bool connected = true;
  std::size_t region_faces = 0;
};

struct TransferReport {
  std::vector<TripleResult> triples;
  double mean_iou = 0.0;
  double mean_area_iou = 0.0;
  bool all_connected = true;
  std::size_t no_region = 0;
};

/// Random foreground clicks on held-out objects of multi-part categories,
/// `per_object` clicks each, scored against the clicked part's faces.
TransferReport evaluate_transfer(Model& model, const PreparedSet& data, const TransferConfig& cfg,
                                 std::size_t per_object, std::uint64_t seed);

}  // namespace pixpoint::part
