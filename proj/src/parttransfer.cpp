#include "pixpoint/parttransfer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "pixpoint/error.hpp"
#include "pixpoint/eval.hpp"

namespace pixpoint::part {

void validate(const TransferConfig& c) {
  require(c.coverage_frac > 0 && c.coverage_frac <= 1, ErrorCode::kConfig, "transfer: coverage_frac must be in (0, 1]");
  require(c.sim_min >= -1 && c.sim_min <= 1, ErrorCode::kConfig, "transfer: sim_min must be in [-1, 1]");
  require(c.eps > 0 && c.min_pts >= 1, ErrorCode::kConfig, "transfer: eps must be positive and min_pts at least 1");
  require(c.seed_radius > 0 && c.flood_radius > 0, ErrorCode::kConfig, "transfer: radii must be positive");
}

std::size_t PartMask2D::area() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

PartMask2D select_mask(const data::ViewRender& render, std::size_t view, int row, int col) {
  const data::PositionMap& map = render.map;
  require(row >= 0 && col >= 0 && row < map.height && col < map.width, ErrorCode::kInvalidArgument,
          "select_mask: click outside the image");
  require(map.covered(row, col), ErrorCode::kInvalidArgument, "select_mask: click on background");
  PartMask2D m;
  m.height = map.height;
  m.width = map.width;
  m.view = view;
  m.click_row = row;
  m.click_col = col;
  m.part_label = render.part[static_cast<std::size_t>(row) * map.width + col];
  m.mask.assign(render.part.size(), 0);
  for (std::size_t i = 0; i < render.part.size(); ++i) m.mask[i] = render.part[i] == m.part_label ? 1 : 0;
  return m;
}

PartMask2D load_mask(const std::filesystem::path& path, const data::ViewRender& render, std::size_t view, int row,
                     int col) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "load_mask: cannot open " + path.string());
  std::string text, line;
  while (std::getline(in, line)) text += line.substr(0, line.find('#')) + '\n';
  std::istringstream is(text);
  std::string magic;
  int w = 0, h = 0;
  is >> magic >> w >> h;
  require(magic == "P1", ErrorCode::kInvalidArgument, "load_mask: expected a plain PBM (P1) file");
  require(h == render.map.height && w == render.map.width, ErrorCode::kShapeMismatch,
          "load_mask: mask size differs from the render");
  PartMask2D m;
  m.height = h;
  m.width = w;
  m.view = view;
  m.click_row = row;
  m.click_col = col;
  m.mask.assign(static_cast<std::size_t>(h) * w, 0);
  for (std::size_t i = 0; i < m.mask.size(); ++i) {
    char c = 0;
    do {
      require(static_cast<bool>(is >> c), ErrorCode::kTruncated, "load_mask: not enough pixels");
    } while (c != '0' && c != '1');
    m.mask[i] = c == '1' && render.map.covered(static_cast<int>(i) / w, static_cast<int>(i) % w) ? 1 : 0;
  }
  require(row >= 0 && col >= 0 && row < h && col < w && m.at(row, col), ErrorCode::kInvalidArgument,
          "load_mask: click outside the foreground mask");
  return m;
}

std::vector<std::size_t> activate_patches(const PartMask2D& mask, std::size_t patch, double coverage_frac) {
  require(patch > 0 && mask.height % static_cast<int>(patch) == 0 && mask.width % static_cast<int>(patch) == 0,
          ErrorCode::kInvalidArgument, "activate_patches: mask size not divisible by the patch size");
  const std::size_t gh = static_cast<std::size_t>(mask.height) / patch, gw = static_cast<std::size_t>(mask.width) / patch;
  std::vector<std::size_t> active;
  for (std::size_t u = 0; u < gh; ++u)
    for (std::size_t v = 0; v < gw; ++v) {
      std::size_t covered = 0;
      for (std::size_t r = u * patch; r < (u + 1) * patch; ++r)
        for (std::size_t c = v * patch; c < (v + 1) * patch; ++c) covered += mask.at(static_cast<int>(r), static_cast<int>(c));
      if (static_cast<double>(covered) >= coverage_frac * static_cast<double>(patch * patch)) active.push_back(u * gw + v);
    }
  return active;
}

MatchSet match_and_filter(const Matrix& patch_desc, const Matrix& token_desc, double sim_min) {
  require(patch_desc.rows == 0 || patch_desc.cols == token_desc.cols, ErrorCode::kShapeMismatch,
          "match_and_filter: descriptor widths differ");
  require(token_desc.rows > 0, ErrorCode::kInvalidArgument, "match_and_filter: no tokens");
  MatchSet out;
  out.raw = patch_desc.rows;
  std::map<std::size_t, Match> best;
  for (std::size_t p = 0; p < patch_desc.rows; ++p) {
    const auto order = eval::rank_by_similarity(patch_desc.row(p), token_desc);
    Match m{p, order[0], 0.0};
    for (std::size_t c = 0; c < token_desc.cols; ++c) m.similarity += patch_desc(p, c) * token_desc(m.token, c);
    auto it = best.find(m.token);
    if (it == best.end() || m.similarity > it->second.similarity) best[m.token] = m;
  }
  out.deduplicated = best.size();
  for (const auto& [token, m] : best)
    if (m.similarity >= sim_min) out.matches.push_back(m);
  return out;
}

std::vector<int> dbscan(const Matrix& points, double eps, std::size_t min_pts) {
  require(eps > 0 && min_pts >= 1, ErrorCode::kInvalidArgument, "dbscan: eps must be positive, min_pts at least 1");
  require(points.rows == 0 || points.cols >= 3, ErrorCode::kShapeMismatch, "dbscan: points need three coordinates");
  const std::size_t n = points.rows;
  std::vector<std::vector<std::size_t>> nbr(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0.0;
      for (int a = 0; a < 3; ++a) d += (points(i, a) - points(j, a)) * (points(i, a) - points(j, a));
      if (d <= eps * eps) nbr[i].push_back(j);
    }
  std::vector<int> label(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != -1 || nbr[i].size() < min_pts) continue;
    const int c = next++;
    label[i] = c;
    std::deque<std::size_t> queue{i};
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      if (nbr[p].size() < min_pts) continue;
      for (std::size_t q : nbr[p])
        if (label[q] == -1) {
          label[q] = c;
          queue.push_back(q);
        }
    }
  }
  return label;
}

int dominant_cluster(const std::vector<int>& labels) {
  std::map<int, std::size_t> count;
  for (int l : labels)
    if (l >= 0) ++count[l];
  int best = -1;
  std::size_t best_n = 0;
  for (const auto& [l, n] : count)
    if (n > best_n) {
      best = l;
      best_n = n;
    }
  return best;
}

Region3D flood_fill(const std::vector<std::uint32_t>& seeds, const std::vector<std::vector<std::uint32_t>>& adjacency,
                    const std::vector<char>& allowed) {
  require(allowed.size() == adjacency.size(), ErrorCode::kShapeMismatch, "flood_fill: predicate size mismatch");
  Region3D region;
  region.seeds = seeds;
  std::sort(region.seeds.begin(), region.seeds.end());
  region.seeds.erase(std::unique(region.seeds.begin(), region.seeds.end()), region.seeds.end());
  std::vector<int> comp(adjacency.size(), -1);
  std::vector<std::vector<std::uint32_t>> comps;
  for (std::uint32_t s : region.seeds) {
    require(s < adjacency.size(), ErrorCode::kInvalidArgument, "flood_fill: seed face out of range");
    if (comp[s] != -1) continue;
    const int id = static_cast<int>(comps.size());
    comps.emplace_back();
    std::deque<std::uint32_t> queue{s};
    comp[s] = id;
    while (!queue.empty()) {
      const std::uint32_t f = queue.front();
      queue.pop_front();
      comps.back().push_back(f);
      for (std::uint32_t g : adjacency[f])
        if (comp[g] == -1 && allowed[g]) {
          comp[g] = id;
          queue.push_back(g);
        }
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    std::sort(comps[c].begin(), comps[c].end());
    if (comps[c].size() > comps[best].size() ||
        (comps[c].size() == comps[best].size() && comps[c].front() < comps[best].front()))
      best = c;
  }
  if (!comps.empty()) region.faces = comps[best];
  return region;
}

double face_distance(const data::ObjectInstance& inst, std::size_t f, const Vec3& p) {
  const auto& face = inst.faces[f];
  const auto vert = [&](int k) {
    const std::uint32_t v = face[static_cast<std::size_t>(k)];
    return Vec3{inst.vertices(v, 0), inst.vertices(v, 1), inst.vertices(v, 2)};
  };
  const Vec3 a = vert(0), b = vert(1), c = vert(2);
  // Closest point on a triangle by Voronoi-region tests.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return norm(p - a);
  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return norm(p - b);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return norm(p - (a + (d1 / (d1 - d3)) * ab));
  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return norm(p - c);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return norm(p - (a + (d2 / (d2 - d6)) * ac));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return norm(p - (b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b)));
  const double denom = 1.0 / (va + vb + vc);
  return norm(p - (a + (vb * denom) * ab + (vc * denom) * ac));
}

std::vector<char> faces_near(const data::ObjectInstance& inst, const std::vector<Vec3>& centers, double radius) {
  std::vector<char> near(inst.faces.size(), 0);
  for (std::size_t f = 0; f < inst.faces.size(); ++f)
    for (const Vec3& c : centers)
      if (face_distance(inst, f, c) <= radius) {
        near[f] = 1;
        break;
      }
  return near;
}

const char* status_name(TransferStatus s) {
  switch (s) {
    case TransferStatus::kOk: return "ok";
    case TransferStatus::kNoActivePatches: return "no_active_patches";
    case TransferStatus::kNoConfidentMatch: return "no_confident_region";
    case TransferStatus::kNoCluster: return "no_cluster";
    case TransferStatus::kNoSeeds: return "no_seeds";
  }
  return "?";
}

TransferResult transfer(Model& model, const PreparedObject& obj, const PartMask2D& mask, const TransferConfig& cfg) {
  validate(cfg);
  require(mask.view < obj.view_count(), ErrorCode::kInvalidArgument, "transfer: view out of range");
  TransferResult res;
  res.mask = mask;
  const eval::ObjectDescriptors desc = eval::describe_object(model, obj, {mask.view});
  for (std::size_t cell : activate_patches(mask, obj.views[mask.view].grid.patch, cfg.coverage_frac)) {
    if (desc.row_of(0, cell) == std::numeric_limits<std::size_t>::max())
      ++res.active_invalid;
    else
      res.active.push_back(cell);
  }
  if (res.active.empty()) {
    res.status = TransferStatus::kNoActivePatches;
    return res;
  }
  Matrix patch_desc(res.active.size(), desc.tokens.cols);
  for (std::size_t i = 0; i < res.active.size(); ++i) {
    const auto row = desc.cells[0].row(desc.row_of(0, res.active[i]));
    std::copy(row.begin(), row.end(), patch_desc.row(i).begin());
  }
  res.matches = match_and_filter(patch_desc, desc.tokens, cfg.sim_min);
  for (const Match& m : res.matches.matches) res.match_cells.push_back(res.active[m.patch]);
  if (res.matches.no_confident_region()) {
    res.status = TransferStatus::kNoConfidentMatch;
    return res;
  }
  Matrix pts(res.matches.matches.size(), 3);
  for (std::size_t i = 0; i < pts.rows; ++i)
    for (int a = 0; a < 3; ++a) pts(i, a) = obj.field.centers(res.matches.matches[i].token, a);
  res.labels = dbscan(pts, cfg.eps, cfg.min_pts);
  res.dominant = dominant_cluster(res.labels);
  if (res.dominant < 0) {
    res.status = TransferStatus::kNoCluster;
    return res;
  }
  std::vector<Vec3> centers;
  for (std::size_t i = 0; i < res.labels.size(); ++i)
    if (res.labels[i] == res.dominant) {
      res.cluster_tokens.push_back(res.matches.matches[i].token);
      centers.push_back({pts(i, 0), pts(i, 1), pts(i, 2)});
    }
  const data::ObjectInstance& inst = obj.record->instance;
  const std::vector<char> seed_mask = faces_near(inst, centers, cfg.seed_radius);
  std::vector<char> allowed = faces_near(inst, centers, cfg.flood_radius);
  std::vector<std::uint32_t> seeds;
  for (std::size_t f = 0; f < seed_mask.size(); ++f)
    if (seed_mask[f]) {
      seeds.push_back(static_cast<std::uint32_t>(f));
      allowed[f] = 1;
    }
  if (seeds.empty()) {
    res.status = TransferStatus::kNoSeeds;
    return res;
  }
  res.region = flood_fill(seeds, inst.face_adjacency, allowed);
  res.region.cluster = res.dominant;
  return res;
}

double face_iou(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  std::vector<std::uint32_t> inter;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  const std::size_t uni = a.size() + b.size() - inter.size();
  return uni == 0 ? 0.0 : static_cast<double>(inter.size()) / static_cast<double>(uni);
}

double area_iou(const data::ObjectInstance& inst, const std::vector<std::uint32_t>& a,
                const std::vector<std::uint32_t>& b) {
  std::vector<std::uint32_t> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  double ai = 0.0, au = 0.0;
  for (std::uint32_t f : inter) ai += data::face_area(inst, f);
  for (std::uint32_t f : uni) au += data::face_area(inst, f);
  return au == 0.0 ? 0.0 : ai / au;
}

std::vector<std::uint32_t> part_faces(const data::ObjectInstance& inst, int label) {
  std::vector<std::uint32_t> out;
  for (std::size_t f = 0; f < inst.face_part.size(); ++f)
    if (inst.face_part[f] == label) out.push_back(static_cast<std::uint32_t>(f));
  return out;
}

bool single_component(const std::vector<std::uint32_t>& faces,
                      const std::vector<std::vector<std::uint32_t>>& adjacency) {
  if (faces.empty()) return true;
  // Union-find over the induced subgraph.
  std::map<std::uint32_t, std::uint32_t> parent;
  for (std::uint32_t f : faces) parent[f] = f;
  const auto find = [&](std::uint32_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::uint32_t f : faces)
    for (std::uint32_t g : adjacency[f])
      if (parent.count(g)) parent[find(f)] = find(g);
  const std::uint32_t root = find(faces.front());
  return std::all_of(faces.begin(), faces.end(), [&](std::uint32_t f) { return find(f) == root; });
}

TransferReport evaluate_transfer(Model& model, const PreparedSet& data, const TransferConfig& cfg,
                                 std::size_t per_object, std::uint64_t seed) {
  TransferReport rep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const PreparedObject& obj = data[i];
    const data::ObjectInstance& inst = obj.record->instance;
    if (std::set<int>(inst.face_part.begin(), inst.face_part.end()).size() < 2) continue;
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(inst.object_id));
    for (std::size_t t = 0; t < per_object; ++t) {
      const std::size_t view = std::uniform_int_distribution<std::size_t>(0, obj.view_count() - 1)(rng);
      const data::ViewRender& render = obj.render(view);
      std::vector<std::pair<int, int>> fg;
      for (int r = 0; r < render.map.height; ++r)
        for (int c = 0; c < render.map.width; ++c)
          if (render.map.covered(r, c)) fg.emplace_back(r, c);
      if (fg.empty()) continue;
      const auto [row, col] = fg[std::uniform_int_distribution<std::size_t>(0, fg.size() - 1)(rng)];
      const PartMask2D mask = select_mask(render, view, row, col);
      const TransferResult res = transfer(model, obj, mask, cfg);
      TripleResult tr;
      tr.object_id = inst.object_id;
      tr.view = view;
      tr.row = row;
      tr.col = col;
      tr.part_label = mask.part_label;
      tr.status = res.status;
      tr.region_faces = res.region.faces.size();
      const auto gt = part_faces(inst, mask.part_label);
      tr.iou = face_iou(res.region.faces, gt);
      tr.area_iou = area_iou(inst, res.region.faces, gt);
      tr.connected = single_component(res.region.faces, inst.face_adjacency);
      rep.triples.push_back(tr);
    }
  }
  for (const TripleResult& t : rep.triples) {
    rep.mean_iou += t.iou;
    rep.mean_area_iou += t.area_iou;
    rep.all_connected = rep.all_connected && t.connected;
    if (t.status != TransferStatus::kOk) ++rep.no_region;
  }
  if (!rep.triples.empty()) {
    rep.mean_iou /= static_cast<double>(rep.triples.size());
    rep.mean_area_iou /= static_cast<double>(rep.triples.size());
  }
  return rep;
}

}  // namespace pixpoint::part
