#include "pixpoint/pipeline.hpp"

#include <limits>

#include "pixpoint/error.hpp"

namespace pixpoint {

PreparedSet::PreparedSet(const data::Corpus& corpus, const ModelConfig& cfg, int resolution, bool held_out)
    : resolution_(resolution) {
  tok2d::BackboneConfig bcfg;
  bcfg.feature_dim = cfg.f2d;
  bcfg.context_dim = cfg.dc;
  bcfg.patch = cfg.patch;
  bcfg.frequency = cfg.backbone_frequency;
  bcfg.seed = cfg.backbone_seed;
  const tok2d::Backbone2d backbone(bcfg);
  tok2d::TeacherConfig tcfg;
  tcfg.dim = cfg.dt;
  tcfg.seed = cfg.teacher_seed;
  const tok2d::TeacherNet teacher(tcfg);
  std::vector<const data::ObjectRecord*> chosen;
  for (const data::ObjectRecord& rec : corpus.objects)
    if (rec.held_out == held_out) chosen.push_back(&rec);
  objects_.resize(chosen.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(chosen.size()); ++i) {
    auto obj = std::make_unique<PreparedObject>();
    const data::ObjectRecord& rec = *chosen[static_cast<std::size_t>(i)];
    obj->record = &rec;
    obj->resolution = resolution;
    if (!rec.views.empty() && rec.views.front().camera.height == resolution) {
      obj->renders = &rec.views;
    } else {
      obj->owned_renders = data::render_tier(rec, corpus.config, resolution);
      obj->renders = &obj->owned_renders;
    }
    for (const data::ViewRender& v : *obj->renders) {
      PreparedView pv;
      pv.grid = tok2d::extract_patch_features(v.map, v.camera, backbone);
      pv.context = tok2d::compute_view_context(pv.grid, backbone);
      pv.teacher = tok2d::teacher_token(teacher, rec.instance, v.camera);
      pv.valid_cells = pv.grid.valid_cells();
      obj->views.push_back(std::move(pv));
    }
    obj->field = tok3d::build_token_field(rec.surface.points, cfg.n3d, cfg.k_neighbors);
    objects_[static_cast<std::size_t>(i)] = std::move(obj);
  }
}

std::size_t Encoded2d::row_of(std::size_t view_pos, std::size_t cell) const {
  for (std::size_t r = view_begin[view_pos]; r < view_begin[view_pos] + view_count[view_pos]; ++r)
    if (row_cell[r] == cell) return r;
  return std::numeric_limits<std::size_t>::max();
}

Encoded2d encode_views(ag::Graph& g, Model& model, const PreparedObject& obj, const std::vector<std::size_t>& views) {
  const ModelConfig& cfg = model.config();
  Encoded2d enc;
  enc.views = views;
  std::size_t rows = 0;
  for (std::size_t s : views) {
    require(s < obj.view_count(), ErrorCode::kInvalidArgument, "encode_views: view index out of range");
    rows += obj.views[s].valid_cells.size();
  }
  Matrix x(rows, cfg.f2d), c(rows, cfg.dc);
  std::size_t r = 0;
  for (std::size_t pos = 0; pos < views.size(); ++pos) {
    const PreparedView& pv = obj.views[views[pos]];
    enc.view_begin.push_back(r);
    enc.view_count.push_back(pv.valid_cells.size());
    for (std::size_t cell : pv.valid_cells) {
      const auto f = pv.grid.features.row(cell);
      std::copy(f.begin(), f.end(), x.row(r).begin());
      std::copy(pv.context.begin(), pv.context.end(), c.row(r).begin());
      enc.row_view.push_back(pos);
      enc.row_cell.push_back(cell);
      ++r;
    }
  }
  if (rows > 0) enc.shared = model.shared2d(g, x, c);
  return enc;
}

Encoded3d encode_tokens(ag::Graph& g, Model& model, const PreparedObject& obj) {
  Encoded3d enc;
  enc.shared = model.shared3d(g, model.latents(g, obj.field));
  enc.local = model.local3d(g, enc.shared);
  return enc;
}

ViewBatch pool_views(ag::Graph& g, Model& model, const PreparedObject& obj, const Encoded2d& enc) {
  const ModelConfig& cfg = model.config();
  ViewBatch vb;
  const std::size_t n = enc.views.size();
  vb.context = Matrix(n, cfg.dc);
  vb.teacher = Matrix(n, cfg.dt);
  std::vector<ag::Var> rows;
  for (std::size_t pos = 0; pos < n; ++pos) {
    const PreparedView& pv = obj.views[enc.views[pos]];
    global::PooledView pooled{};
    if (enc.view_count[pos] > 0) {
      std::vector<std::size_t> idx(enc.view_count[pos]);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = enc.view_begin[pos] + i;
      ag::Var tokens = ag::gather_rows(enc.shared, idx);
      pooled = global::pool_view(g, &tokens, cfg.dsh);
    } else {
      pooled = global::pool_view(g, nullptr, cfg.dsh);
    }
    rows.push_back(pooled.token);
    vb.valid.push_back(pooled.valid ? 1 : 0);
    std::copy(pv.context.begin(), pv.context.end(), vb.context.row(pos).begin());
    std::copy(pv.teacher.begin(), pv.teacher.end(), vb.teacher.row(pos).begin());
  }
  vb.pooled = ag::concat_rows(rows);
  return vb;
}

Global2dResult encode_global2d(ag::Graph& g, Model& model, const PreparedObject& obj, const Encoded2d& enc,
                               bool use_teacher) {
  ViewBatch vb = pool_views(g, model, obj, enc);
  Global2dResult res;
  for (std::size_t i = 0; i < vb.valid.size(); ++i)
    if (vb.valid[i]) res.valid_rows.push_back(i);
  require(!res.valid_rows.empty(), ErrorCode::kInvalidArgument, "global 2D descriptor: no valid views");
  ag::Var fused =
      model.fusion().forward(g, vb.pooled, g.constant(vb.context), g.constant(vb.teacher), use_teacher);
  res.refined = model.global2d().refine(g, fused);
  res.descriptor = model.global2d().describe(g, res.refined, res.valid_rows);
  res.teacher_mean = Matrix(1, vb.teacher.cols);
  for (std::size_t r : res.valid_rows)
    for (std::size_t c = 0; c < vb.teacher.cols; ++c) res.teacher_mean(0, c) += vb.teacher(r, c);
  for (double& v : res.teacher_mean.data) v /= static_cast<double>(res.valid_rows.size());
  return res;
}

}  // namespace pixpoint
