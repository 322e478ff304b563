#pragma once

// Frozen per-object inputs (patch grids, contexts, teacher tokens, token
// fields) and the per-instance encoding used by training and evaluation.

#include <cstddef>
#include <memory>
#include <vector>

#include "pixpoint/corpus.hpp"
#include "pixpoint/model.hpp"

namespace pixpoint {

struct PreparedView {
  tok2d::PatchGrid grid;
  std::vector<double> context;
  std::vector<double> teacher;
  std::vector<std::size_t> valid_cells;
};

struct PreparedObject {
  const data::ObjectRecord* record = nullptr;
  int resolution = 0;
  /// Renders of this tier; either the record's own or a re-rendered tier.
  const std::vector<data::ViewRender>* renders = nullptr;
  std::vector<data::ViewRender> owned_renders;
  std::vector<PreparedView> views;
  tok3d::TokenField field;

  std::size_t view_count() const { return views.size(); }
  const data::ViewRender& render(std::size_t s) const { return (*renders)[s]; }
};

class PreparedSet {
 public:
  /// Prepares every object of `corpus` selected by `include` at `resolution`.
  PreparedSet(const data::Corpus& corpus, const ModelConfig& cfg, int resolution, bool held_out);

  std::size_t size() const { return objects_.size(); }
  const PreparedObject& operator[](std::size_t i) const { return *objects_[i]; }
  int resolution() const { return resolution_; }

 private:
  int resolution_ = 0;
  std::vector<std::unique_ptr<PreparedObject>> objects_;
};

/// Shared 2D tokens of every valid cell in the selected views.
struct Encoded2d {
  ag::Var shared;                     // rows × Dsh
  std::vector<std::size_t> row_view;  // position in `views` of each row
  std::vector<std::size_t> row_cell;
  std::vector<std::size_t> view_begin;  // first row of each selected view
  std::vector<std::size_t> view_count;
  std::vector<std::size_t> views;       // selected view indices

  /// Row of (selection position, cell), or npos.
  std::size_t row_of(std::size_t view_pos, std::size_t cell) const;
};

Encoded2d encode_views(ag::Graph& g, Model& model, const PreparedObject& obj, const std::vector<std::size_t>& views);

/// Token field → local 3D descriptors and shared tokens.
struct Encoded3d {
  ag::Var shared;
  ag::Var local;
};

Encoded3d encode_tokens(ag::Graph& g, Model& model, const PreparedObject& obj);

/// Fusion input rows for the selected views: pooled tokens, contexts and teachers.
struct ViewBatch {
  ag::Var pooled;
  Matrix context;
  Matrix teacher;
  std::vector<char> valid;
};

ViewBatch pool_views(ag::Graph& g, Model& model, const PreparedObject& obj, const Encoded2d& enc);

/// Full 2D global descriptor of the selected views; also returns refined view rows.
struct Global2dResult {
  ag::Var descriptor;
  ag::Var refined;
  std::vector<std::size_t> valid_rows;
  Matrix teacher_mean;  // 1×Dt
};

Global2dResult encode_global2d(ag::Graph& g, Model& model, const PreparedObject& obj, const Encoded2d& enc,
                               bool use_teacher);

}  // namespace pixpoint
