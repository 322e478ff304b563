#include "pixpoint/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "pixpoint/error.hpp"

namespace pixpoint::eval {

namespace {

constexpr std::size_t kNpos = std::numeric_limits<std::size_t>::max();

double distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return std::sqrt(s);
}

Matrix value_of(ag::Var v) { return v.value(); }

}  // namespace

std::vector<std::size_t> rank_by_similarity(std::span<const double> query, const Matrix& gallery) {
  require(query.size() == gallery.cols, ErrorCode::kShapeMismatch, "rank_by_similarity: width mismatch");
  std::vector<double> sim(gallery.rows, 0.0);
  for (std::size_t r = 0; r < gallery.rows; ++r)
    for (std::size_t c = 0; c < gallery.cols; ++c) sim[r] += query[c] * gallery(r, c);
  std::vector<std::size_t> order(gallery.rows);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  return order;
}

LocAccResult loc_acc_from_rankings(const Matrix& gt, const std::vector<std::vector<std::size_t>>& rankings,
                                   const Matrix& centers, const std::vector<std::size_t>& ks, double bbox_edge) {
  require(gt.rows > 0, ErrorCode::kInvalidArgument, "loc_acc: no queries");
  require(rankings.size() == gt.rows, ErrorCode::kShapeMismatch, "loc_acc: one ranking per query expected");
  require(bbox_edge > 0, ErrorCode::kInvalidArgument, "loc_acc: bounding-box edge must be positive");
  const double d_norm = std::sqrt(3.0) * bbox_edge;
  LocAccResult res;
  res.ks = ks;
  res.scores.assign(ks.size(), 0.0);
  res.dstar.assign(gt.rows, std::vector<double>(ks.size(), 0.0));
  for (std::size_t q = 0; q < gt.rows; ++q) {
    const auto& rank = rankings[q];
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const std::size_t k = std::min(ks[i], rank.size());
      require(k >= 1, ErrorCode::kInvalidArgument, "loc_acc: empty ranking");
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) best = std::min(best, distance(gt, q, centers, rank[j]));
      res.dstar[q][i] = best;
      res.scores[i] += std::clamp((1.0 - best / d_norm) * 100.0, 0.0, 100.0);
    }
  }
  for (double& s : res.scores) s /= static_cast<double>(gt.rows);
  return res;
}

LocAccResult loc_acc(const Matrix& gt, const Matrix& desc2d, const Matrix& desc3d, const Matrix& centers,
                     const std::vector<std::size_t>& ks, double bbox_edge) {
  require(desc2d.rows == gt.rows && desc3d.rows == centers.rows, ErrorCode::kShapeMismatch,
          "loc_acc: descriptor counts disagree");
  std::vector<std::vector<std::size_t>> rankings(gt.rows);
  for (std::size_t q = 0; q < gt.rows; ++q) rankings[q] = rank_by_similarity(desc2d.row(q), desc3d);
  return loc_acc_from_rankings(gt, rankings, centers, ks, bbox_edge);
}

RetrievalResult retrieval_eval(const Matrix& queries, const std::vector<int>& query_labels, const Matrix& gallery,
                               const std::vector<int>& gallery_labels, const std::vector<std::size_t>& ks) {
  require(gallery.rows > 0, ErrorCode::kInvalidArgument, "retrieval: empty gallery");
  require(queries.rows == query_labels.size() && gallery.rows == gallery_labels.size(), ErrorCode::kShapeMismatch,
          "retrieval: label counts disagree");
  RetrievalResult res;
  res.ks = ks;
  res.recall.assign(ks.size(), 0.0);
  for (std::size_t q = 0; q < queries.rows; ++q) {
    const auto order = rank_by_similarity(queries.row(q), gallery);
    std::size_t first = 0;
    for (std::size_t r = 0; r < order.size(); ++r)
      if (gallery_labels[order[r]] == query_labels[q]) {
        first = r + 1;
        break;
      }
    res.first_correct_rank.push_back(first);
    if (first > 0) res.mrr += 1.0 / static_cast<double>(first);
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (first > 0 && first <= ks[i]) res.recall[i] += 1.0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, queries.rows));
  for (double& r : res.recall) r = 100.0 * r / n;
  res.mrr = 100.0 * res.mrr / n;
  return res;
}

Chance chance_levels(const std::vector<int>& query_labels, const std::vector<int>& gallery_labels) {
  Chance ch;
  const double g = static_cast<double>(gallery_labels.size());
  for (int label : query_labels) {
    const double c = static_cast<double>(std::count(gallery_labels.begin(), gallery_labels.end(), label));
    if (c == 0) continue;
    ch.recall1 += c / g;
    // P(first correct at rank r) = Π_{i<r-1} (g−c−i)/(g−i) · c/(g−r+1)
    double none_before = 1.0;
    for (double r = 1; r <= g - c + 1; r += 1) {
      ch.mrr += none_before * c / (g - r + 1) / r;
      none_before *= (g - c - (r - 1)) / (g - (r - 1));
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, query_labels.size()));
  ch.recall1 = 100.0 * ch.recall1 / n;
  ch.mrr = 100.0 * ch.mrr / n;
  return ch;
}

Protocol parse_protocol(const std::string& name) {
  if (name == "s1-random") return Protocol::kS1Random;
  if (name == "s4-random") return Protocol::kS4Random;
  if (name == "s4-ortho") return Protocol::kS4Ortho;
  fail(ErrorCode::kConfig, "unknown protocol " + name + " (s1-random, s4-random, s4-ortho)");
}

const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kS1Random: return "s1-random";
    case Protocol::kS4Random: return "s4-random";
    case Protocol::kS4Ortho: return "s4-ortho";
  }
  return "?";
}

std::vector<std::size_t> protocol_views(Protocol p, std::size_t available, std::uint64_t seed) {
  if (p == Protocol::kS4Ortho) {
    require(available >= 4, ErrorCode::kInvalidArgument, "s4-ortho needs four axis views");
    return {0, 1, 2, 3};
  }
  const std::size_t s = std::min<std::size_t>(p == Protocol::kS1Random ? 1 : 4, available);
  std::vector<std::size_t> all(available);
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, available - 1)(rng);
    std::swap(all[i], all[j]);
  }
  all.resize(s);
  return all;
}

std::size_t ObjectDescriptors::row_of(std::size_t pos, std::size_t cell) const {
  const auto& idx = cell_index[pos];
  const auto it = std::lower_bound(idx.begin(), idx.end(), cell);
  return it != idx.end() && *it == cell ? static_cast<std::size_t>(it - idx.begin()) : kNpos;
}

ObjectDescriptors describe_object(Model& model, const PreparedObject& obj, const std::vector<std::size_t>& views) {
  ag::Graph g;
  ObjectDescriptors out;
  out.views = views;
  out.tokens = value_of(encode_tokens(g, model, obj).local);
  const Encoded2d enc = encode_views(g, model, obj, views);
  Matrix all;
  if (!enc.row_view.empty()) all = value_of(model.local2d(g, enc.shared));
  for (std::size_t pos = 0; pos < views.size(); ++pos) {
    Matrix m(enc.view_count[pos], model.config().dloc);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < enc.view_count[pos]; ++i) {
      const std::size_t r = enc.view_begin[pos] + i;
      std::copy(all.row(r).begin(), all.row(r).end(), m.row(i).begin());
      ids.push_back(enc.row_cell[r]);
    }
    out.cells.push_back(std::move(m));
    out.cell_index.push_back(std::move(ids));
  }
  return out;
}

LocalReport evaluate_local(Model& model, const PreparedSet& data, const LocalEvalOptions& opts) {
  require(data.size() > 0, ErrorCode::kInvalidArgument, "evaluate_local: no objects");
  std::vector<double> gt_rows;
  std::vector<std::vector<std::size_t>> rank_model, rank_random, rank_oracle;
  std::vector<double> center_rows;
  // Rankings index a concatenated token table so one scorer handles every object.
  std::size_t token_offset = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const PreparedObject& obj = data[i];
    const std::uint64_t obj_seed = opts.seed * 1000003ULL + static_cast<std::uint64_t>(obj.record->instance.object_id);
    const auto views = protocol_views(opts.protocol, obj.view_count(), obj_seed);
    const ObjectDescriptors desc = describe_object(model, obj, views);
    const Matrix& centers = obj.field.centers;
    std::mt19937_64 rng(obj_seed ^ 0xabcdefULL);
    for (std::size_t pos = 0; pos < views.size(); ++pos) {
      const PreparedView& pv = obj.views[views[pos]];
      const data::PositionMap& map = obj.render(views[pos]).map;
      const std::size_t patch = pv.grid.patch;
      std::vector<std::pair<int, int>> pixels;
      for (int r = 0; r < map.height; ++r)
        for (int c = 0; c < map.width; ++c) {
          const std::size_t cell = (static_cast<std::size_t>(r) / patch) * pv.grid.grid_w + static_cast<std::size_t>(c) / patch;
          if (map.covered(r, c) && pv.grid.valid[cell]) pixels.emplace_back(r, c);
        }
      const std::size_t take = std::min(opts.pixels_per_view, pixels.size());
      for (std::size_t t = 0; t < take; ++t) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(t, pixels.size() - 1)(rng);
        std::swap(pixels[t], pixels[j]);
        const auto [r, c] = pixels[t];
        const Vec3 x = map.xyz(r, c);
        gt_rows.insert(gt_rows.end(), x.begin(), x.end());
        const std::size_t cell = (static_cast<std::size_t>(r) / patch) * pv.grid.grid_w + static_cast<std::size_t>(c) / patch;
        const std::size_t row = desc.row_of(pos, cell);
        auto ranked = rank_by_similarity(desc.cells[pos].row(row), desc.tokens);
        std::vector<std::size_t> random(centers.rows);
        std::iota(random.begin(), random.end(), 0);
        std::shuffle(random.begin(), random.end(), rng);
        std::vector<std::size_t> oracle(centers.rows);
        std::iota(oracle.begin(), oracle.end(), 0);
        std::vector<double> dist(centers.rows);
        for (std::size_t n = 0; n < centers.rows; ++n) {
          double s = 0.0;
          for (int a = 0; a < 3; ++a) s += (x[a] - centers(n, a)) * (x[a] - centers(n, a));
          dist[n] = s;
        }
        std::stable_sort(oracle.begin(), oracle.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
        for (auto* list : {&ranked, &random, &oracle})
          for (std::size_t& n : *list) n += token_offset;
        rank_model.push_back(std::move(ranked));
        rank_random.push_back(std::move(random));
        rank_oracle.push_back(std::move(oracle));
      }
    }
    for (std::size_t n = 0; n < centers.rows; ++n)
      for (int a = 0; a < 3; ++a) center_rows.push_back(centers(n, a));
    token_offset += centers.rows;
  }
  const Matrix gt(gt_rows.size() / 3, 3, gt_rows);
  const Matrix centers(center_rows.size() / 3, 3, center_rows);
  LocalReport rep;
  rep.queries = gt.rows;
  const double edge = data[0].record->instance.bbox_edge;
  rep.model = loc_acc_from_rankings(gt, rank_model, centers, opts.ks, edge);
  rep.baseline = loc_acc_from_rankings(gt, rank_random, centers, opts.ks, edge);
  rep.ceiling = loc_acc_from_rankings(gt, rank_oracle, centers, opts.ks, edge);
  return rep;
}

RetrievalReport evaluate_retrieval(Model& model, const PreparedSet& data, Protocol protocol, bool use_teacher,
                                   const std::vector<std::size_t>& ks, std::uint64_t seed) {
  require(data.size() > 0, ErrorCode::kInvalidArgument, "evaluate_retrieval: no objects");
  const std::size_t dg = model.config().dg;
  Matrix queries(data.size(), dg), gallery(data.size(), dg);
  std::vector<int> labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const PreparedObject& obj = data[i];
    labels[i] = obj.record->instance.category_id;
    const auto views = protocol_views(
        protocol, obj.view_count(), seed * 1000003ULL + static_cast<std::uint64_t>(obj.record->instance.object_id));
    ag::Graph g;
    const Encoded3d enc3 = encode_tokens(g, model, obj);
    const Matrix g3 = model.global3d().forward(g, enc3.shared).value();
    std::copy(g3.data.begin(), g3.data.end(), gallery.row(i).begin());
    const Encoded2d enc2 = encode_views(g, model, obj, views);
    require(!enc2.row_view.empty(), ErrorCode::kInvalidArgument, "evaluate_retrieval: object without valid cells");
    const Matrix g2 = encode_global2d(g, model, obj, enc2, use_teacher).descriptor.value();
    std::copy(g2.data.begin(), g2.data.end(), queries.row(i).begin());
  }
  RetrievalReport rep;
  rep.result = retrieval_eval(queries, labels, gallery, labels, ks);
  rep.chance = chance_levels(labels, labels);
  return rep;
}

Ranked query_2d_to_3d(Model& model, const PreparedObject& obj, std::size_t view, int row, int col) {
  require(view < obj.view_count(), ErrorCode::kInvalidArgument, "query: view out of range");
  const data::PositionMap& map = obj.render(view).map;
  require(row >= 0 && col >= 0 && row < map.height && col < map.width, ErrorCode::kInvalidArgument,
          "query: pixel outside the image");
  require(map.covered(row, col), ErrorCode::kInvalidArgument, "query: background pixel");
  const PreparedView& pv = obj.views[view];
  const std::size_t cell = (static_cast<std::size_t>(row) / pv.grid.patch) * pv.grid.grid_w +
                           static_cast<std::size_t>(col) / pv.grid.patch;
  require(pv.grid.valid[cell], ErrorCode::kInvalidArgument, "query: pixel lies in an invalid patch");
  const ObjectDescriptors desc = describe_object(model, obj, {view});
  const auto q = desc.cells[0].row(desc.row_of(0, cell));
  Ranked out;
  out.index = rank_by_similarity(q, desc.tokens);
  for (std::size_t n : out.index) {
    double s = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) s += q[c] * desc.tokens(n, c);
    out.similarity.push_back(s);
  }
  return out;
}

std::vector<PixelHit> query_3d_to_2d(Model& model, const PreparedObject& obj, std::size_t token,
                                     const std::vector<std::size_t>& views) {
  require(token < obj.field.tokens(), ErrorCode::kInvalidArgument, "query: token out of range");
  const ObjectDescriptors desc = describe_object(model, obj, views);
  std::vector<PixelHit> hits;
  for (std::size_t pos = 0; pos < views.size(); ++pos) {
    const tok2d::PatchGrid& grid = obj.views[views[pos]].grid;
    for (std::size_t r = 0; r < desc.cells[pos].rows; ++r) {
      PixelHit h;
      h.view = views[pos];
      h.cell = desc.cell_index[pos][r];
      h.row = static_cast<int>((h.cell / grid.grid_w) * grid.patch + grid.patch / 2);
      h.col = static_cast<int>((h.cell % grid.grid_w) * grid.patch + grid.patch / 2);
      for (std::size_t c = 0; c < desc.tokens.cols; ++c) h.similarity += desc.tokens(token, c) * desc.cells[pos](r, c);
      hits.push_back(h);
    }
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const PixelHit& a, const PixelHit& b) { return a.similarity > b.similarity; });
  return hits;
}

Ranked query_3d_to_3d(Model& model, const PreparedObject& obj, std::size_t token, const PreparedObject& other) {
  require(token < obj.field.tokens(), ErrorCode::kInvalidArgument, "query: token out of range");
  const ObjectDescriptors a = describe_object(model, obj, {});
  const ObjectDescriptors b = describe_object(model, other, {});
  const auto q = a.tokens.row(token);
  Ranked out;
  out.index = rank_by_similarity(q, b.tokens);
  for (std::size_t n : out.index) {
    double s = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) s += q[c] * b.tokens(n, c);
    out.similarity.push_back(s);
  }
  return out;
}

}  // namespace pixpoint::eval
