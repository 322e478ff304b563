#include "pixpoint/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <tuple>
#include <unordered_map>

#include "pixpoint/error.hpp"

namespace pixpoint::data {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Corner {
  Vec3 pos;
  Vec3 normal;
};

// Triangle soup of one primitive in its local frame.
struct Soup {
  std::vector<std::array<Corner, 3>> tris;
  bool sphere = false;
  double sphere_radius = 0.0;
};

// Adds a triangle, orienting it so its geometric normal points away from the
// primitive origin. `smooth` keeps the given corner normals, otherwise the
// face normal is used at every corner.
void add_tri(Soup& soup, Vec3 a, Vec3 b, Vec3 c, const std::array<Vec3, 3>* smooth) {
  Vec3 n = cross(b - a, c - a);
  if (norm(n) < 1e-14) return;
  const Vec3 centroid = (1.0 / 3.0) * (a + b + c);
  std::array<Vec3, 3> normals{};
  if (smooth) normals = *smooth;
  if (dot(n, centroid) < 0) {
    std::swap(b, c);
    std::swap(normals[1], normals[2]);
    n = -1.0 * n;
  }
  if (!smooth) normals = {normalized(n), normalized(n), normalized(n)};
  soup.tris.push_back({Corner{a, normals[0]}, Corner{b, normals[1]}, Corner{c, normals[2]}});
}

Soup box_soup(const Vec3& e, int div = 3) {
  Soup s;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    for (double sign : {-1.0, 1.0}) {
      auto at = [&](int i, int j) {
        Vec3 p{};
        p[axis] = sign * e[axis] / 2;
        p[u] = -e[u] / 2 + e[u] * i / div;
        p[v] = -e[v] / 2 + e[v] * j / div;
        return p;
      };
      for (int i = 0; i < div; ++i)
        for (int j = 0; j < div; ++j) {
          add_tri(s, at(i, j), at(i + 1, j), at(i + 1, j + 1), nullptr);
          add_tri(s, at(i, j), at(i + 1, j + 1), at(i, j + 1), nullptr);
        }
    }
  }
  return s;
}

Soup sphere_soup(double r, int nlat = 12, int nlon = 24) {
  Soup s;
  s.sphere = true;
  s.sphere_radius = r;
  auto at = [&](int i, int j) {
    const double th = kPi * i / nlat;
    const double ph = 2 * kPi * (j % nlon) / nlon;
    if (i == 0) return Vec3{0, r, 0};
    if (i == nlat) return Vec3{0, -r, 0};
    return Vec3{r * std::sin(th) * std::cos(ph), r * std::cos(th), r * std::sin(th) * std::sin(ph)};
  };
  for (int i = 0; i < nlat; ++i)
    for (int j = 0; j < nlon; ++j) {
      const Vec3 a = at(i, j), b = at(i + 1, j), c = at(i + 1, j + 1), d = at(i, j + 1);
      std::array<Vec3, 3> n1{normalized(a), normalized(b), normalized(c)};
      add_tri(s, a, b, c, &n1);
      std::array<Vec3, 3> n2{normalized(a), normalized(c), normalized(d)};
      add_tri(s, a, c, d, &n2);
    }
  return s;
}

void add_cap(Soup& s, double r, double y, int nseg) {
  auto ring = [&](double rad, int j) {
    const double ph = 2 * kPi * (j % nseg) / nseg;
    return Vec3{rad * std::cos(ph), y, rad * std::sin(ph)};
  };
  const Vec3 center{0, y, 0};
  for (int j = 0; j < nseg; ++j) {
    add_tri(s, center, ring(r / 2, j), ring(r / 2, j + 1), nullptr);
    add_tri(s, ring(r / 2, j), ring(r, j), ring(r, j + 1), nullptr);
    add_tri(s, ring(r / 2, j), ring(r, j + 1), ring(r / 2, j + 1), nullptr);
  }
}

Soup cylinder_soup(double r, double h, int nseg = 24, int rows = 3) {
  Soup s;
  auto at = [&](int k, int j) {
    const double ph = 2 * kPi * (j % nseg) / nseg;
    return Vec3{r * std::cos(ph), -h / 2 + h * k / rows, r * std::sin(ph)};
  };
  auto radial = [&](const Vec3& p) { return normalized(Vec3{p[0], 0, p[2]}); };
  for (int k = 0; k < rows; ++k)
    for (int j = 0; j < nseg; ++j) {
      const Vec3 a = at(k, j), b = at(k + 1, j), c = at(k + 1, j + 1), d = at(k, j + 1);
      std::array<Vec3, 3> n1{radial(a), radial(b), radial(c)};
      add_tri(s, a, b, c, &n1);
      std::array<Vec3, 3> n2{radial(a), radial(c), radial(d)};
      add_tri(s, a, c, d, &n2);
    }
  add_cap(s, r, -h / 2, nseg);
  add_cap(s, r, h / 2, nseg);
  return s;
}

Soup cone_soup(double r, double h, int nseg = 24, int rows = 3) {
  Soup s;
  auto at = [&](int k, int j) {
    const double t = static_cast<double>(k) / rows;
    const double ph = 2 * kPi * (j % nseg) / nseg;
    if (k == rows) return Vec3{0, h / 2, 0};
    return Vec3{r * (1 - t) * std::cos(ph), -h / 2 + h * t, r * (1 - t) * std::sin(ph)};
  };
  for (int k = 0; k < rows; ++k)
    for (int j = 0; j < nseg; ++j) {
      add_tri(s, at(k, j), at(k + 1, j), at(k + 1, j + 1), nullptr);
      add_tri(s, at(k, j), at(k + 1, j + 1), at(k, j + 1), nullptr);
    }
  add_cap(s, r, -h / 2, nseg);
  return s;
}

bool sizes_degenerate(Primitive p, const Vec3& size) {
  constexpr double kMin = 1e-6;
  switch (p) {
    case Primitive::kBox:
      return size[0] <= kMin || size[1] <= kMin || size[2] <= kMin;
    case Primitive::kSphere:
      return size[0] <= kMin;
    case Primitive::kCylinder:
    case Primitive::kCone:
      return size[0] <= kMin || size[1] <= kMin;
  }
  return true;
}

float to_float(double v) { return static_cast<float>(v); }

PartSpec part(Primitive prim, int label, Vec3 pos, Vec3 lo, Vec3 hi, Vec3 euler = {0, 0, 0}) {
  PartSpec p;
  p.primitive = prim;
  p.part_label = label;
  p.pose.rotation = euler_xyz(euler);
  p.pose.translation = pos;
  p.size_min = lo;
  p.size_max = hi;
  return p;
}

std::vector<ShapeTemplate> make_builtin() {
  using P = Primitive;
  std::vector<ShapeTemplate> out;
  {
    ShapeTemplate t{0, "chair", {}};
    t.parts.push_back(part(P::kBox, 0, {0, 0.45, 0}, {0.45, 0.05, 0.45}, {0.6, 0.1, 0.6}));
    int label = 1;
    for (double x : {-0.2, 0.2})
      for (double z : {-0.2, 0.2})
        t.parts.push_back(part(P::kCylinder, label++, {x, 0.2, z}, {0.04, 0.4, 0}, {0.07, 0.5, 0}));
    t.parts.push_back(part(P::kBox, label, {0, 0.75, -0.25}, {0.45, 0.4, 0.04}, {0.6, 0.6, 0.08}));
    out.push_back(t);
  }
  {
    ShapeTemplate t{1, "table", {}};
    t.parts.push_back(part(P::kBox, 0, {0, 0.7, 0}, {0.9, 0.04, 0.5}, {1.2, 0.08, 0.8}));
    int label = 1;
    for (double x : {-0.45, 0.45})
      for (double z : {-0.25, 0.25})
        t.parts.push_back(part(P::kCylinder, label++, {x, 0.35, z}, {0.05, 0.6, 0}, {0.08, 0.7, 0}));
    out.push_back(t);
  }
  {
    ShapeTemplate t{2, "lamp", {}};
    t.parts.push_back(part(P::kCylinder, 0, {0, 0.03, 0}, {0.3, 0.04, 0}, {0.45, 0.08, 0}));
    t.parts.push_back(part(P::kCylinder, 1, {0, 0.4, 0}, {0.03, 0.6, 0}, {0.05, 0.8, 0}));
    t.parts.push_back(part(P::kCone, 2, {0, 0.8, 0}, {0.3, 0.2, 0}, {0.45, 0.3, 0}));
    out.push_back(t);
  }
  {
    ShapeTemplate t{3, "bottle", {}};
    t.parts.push_back(part(P::kCylinder, 0, {0, 0.27, 0}, {0.3, 0.45, 0}, {0.4, 0.6, 0}));
    t.parts.push_back(part(P::kCone, 1, {0, 0.6, 0}, {0.3, 0.12, 0}, {0.4, 0.18, 0}));
    t.parts.push_back(part(P::kCylinder, 2, {0, 0.75, 0}, {0.08, 0.15, 0}, {0.12, 0.25, 0}));
    out.push_back(t);
  }
  {
    ShapeTemplate t{4, "airplane", {}};
    t.parts.push_back(part(P::kCylinder, 0, {0, 0, 0}, {0.12, 0.9, 0}, {0.18, 1.1, 0}, {0, 0, kPi / 2}));
    t.parts.push_back(part(P::kBox, 1, {0.05, 0, 0}, {0.18, 0.02, 0.8}, {0.25, 0.04, 1.0}));
    t.parts.push_back(part(P::kBox, 2, {-0.45, 0.12, 0}, {0.1, 0.15, 0.02}, {0.15, 0.25, 0.03}));
    t.parts.push_back(part(P::kCone, 3, {0.58, 0, 0}, {0.12, 0.12, 0}, {0.18, 0.2, 0}, {0, 0, -kPi / 2}));
    out.push_back(t);
  }
  {
    ShapeTemplate t{5, "mug", {}};
    t.parts.push_back(part(P::kCylinder, 0, {0, 0.3, 0}, {0.45, 0.5, 0}, {0.55, 0.65, 0}));
    t.parts.push_back(part(P::kBox, 1, {0.33, 0.3, 0}, {0.12, 0.3, 0.05}, {0.18, 0.4, 0.08}));
    out.push_back(t);
  }
  {
    ShapeTemplate t{6, "stool", {}};
    t.parts.push_back(part(P::kCylinder, 0, {0, 0.5, 0}, {0.5, 0.05, 0}, {0.65, 0.08, 0}));
    t.parts.push_back(part(P::kCylinder, 1, {0.18, 0.24, 0}, {0.04, 0.45, 0}, {0.06, 0.5, 0}));
    t.parts.push_back(part(P::kCylinder, 2, {-0.09, 0.24, 0.156}, {0.04, 0.45, 0}, {0.06, 0.5, 0}));
    t.parts.push_back(part(P::kCylinder, 3, {-0.09, 0.24, -0.156}, {0.04, 0.45, 0}, {0.06, 0.5, 0}));
    out.push_back(t);
  }
  {
    ShapeTemplate t{7, "cone_tree", {}};
    t.parts.push_back(part(P::kCylinder, 0, {0, 0.12, 0}, {0.08, 0.2, 0}, {0.12, 0.3, 0}));
    t.parts.push_back(part(P::kCone, 1, {0, 0.42, 0}, {0.5, 0.35, 0}, {0.65, 0.45, 0}));
    t.parts.push_back(part(P::kCone, 2, {0, 0.7, 0}, {0.35, 0.3, 0}, {0.45, 0.4, 0}));
    out.push_back(t);
  }
  return out;
}

}  // namespace

const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::kBox: return "box";
    case Primitive::kSphere: return "sphere";
    case Primitive::kCylinder: return "cylinder";
    case Primitive::kCone: return "cone";
  }
  return "?";
}

void validate_template(const ShapeTemplate& t) {
  require(!t.parts.empty(), ErrorCode::kInvalidArgument, "template " + t.name + " has no parts");
  for (const PartSpec& p : t.parts) {
    for (int a = 0; a < 3; ++a)
      require(p.size_min[a] <= p.size_max[a], ErrorCode::kInvalidArgument,
              "template " + t.name + ": size_min exceeds size_max");
    require(orthonormality_error(p.pose.rotation) < 1e-9, ErrorCode::kInvalidArgument,
            "template " + t.name + ": pose rotation not orthonormal");
  }
}

void validate_registry(const std::vector<ShapeTemplate>& registry) {
  std::set<int> ids;
  for (const ShapeTemplate& t : registry) {
    validate_template(t);
    require(ids.insert(t.category_id).second, ErrorCode::kInvalidArgument,
            "duplicate category id " + std::to_string(t.category_id));
  }
}

const std::vector<ShapeTemplate>& builtin_templates() {
  static const std::vector<ShapeTemplate> registry = make_builtin();
  return registry;
}

std::vector<std::vector<std::uint32_t>> build_face_adjacency(const std::vector<Face>& faces) {
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> edge_faces;
  edge_faces.reserve(faces.size() * 3);
  for (std::uint32_t f = 0; f < faces.size(); ++f) {
    for (int e = 0; e < 3; ++e) {
      std::uint64_t a = faces[f][e], b = faces[f][(e + 1) % 3];
      if (a > b) std::swap(a, b);
      edge_faces[(a << 32) | b].push_back(f);
    }
  }
  std::vector<std::vector<std::uint32_t>> adj(faces.size());
  for (auto& [key, fs] : edge_faces)
    for (std::uint32_t x : fs)
      for (std::uint32_t y : fs)
        if (x != y) adj[x].push_back(y);
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

double face_area(const ObjectInstance& inst, std::size_t f) {
  auto v = [&](std::uint32_t i) { return Vec3{inst.vertices(i, 0), inst.vertices(i, 1), inst.vertices(i, 2)}; };
  const Face& fc = inst.faces[f];
  return 0.5 * norm(cross(v(fc[1]) - v(fc[0]), v(fc[2]) - v(fc[0])));
}

Vec3 face_centroid(const ObjectInstance& inst, std::size_t f) {
  Vec3 c{0, 0, 0};
  for (std::uint32_t i : inst.faces[f]) c = c + Vec3{inst.vertices(i, 0), inst.vertices(i, 1), inst.vertices(i, 2)};
  return (1.0 / 3.0) * c;
}

void finalize(ObjectInstance& inst) { inst.face_adjacency = build_face_adjacency(inst.faces); }

void quantize_to_float(Matrix& m) {
  for (double& v : m.data) v = static_cast<double>(to_float(v));
}

ObjectInstance instantiate(const ShapeTemplate& tmpl, std::uint64_t seed, int object_id,
                           const InstanceOptions& opts) {
  validate_template(tmpl);
  std::mt19937_64 rng(seed);
  ObjectInstance inst;
  inst.object_id = object_id;
  inst.category_id = tmpl.category_id;

  std::vector<Vec3> verts;
  std::vector<Vec3> corner_n;  // 3 per face
  for (const PartSpec& p : tmpl.parts) {
    Vec3 size{};
    int attempt = 0;
    for (;; ++attempt) {
      require(attempt < opts.max_retries, ErrorCode::kDegenerate,
              "template " + tmpl.name + ": degenerate part size after " + std::to_string(opts.max_retries) +
                  " draws");
      for (int a = 0; a < 3; ++a) size[a] = p.size_min[a] + (p.size_max[a] - p.size_min[a]) * uniform01(rng);
      if (!sizes_degenerate(p.primitive, size)) break;
    }
    Soup soup;
    switch (p.primitive) {
      case Primitive::kBox: soup = box_soup(size); break;
      case Primitive::kSphere: soup = sphere_soup(size[0] / 2); break;
      case Primitive::kCylinder: soup = cylinder_soup(size[0] / 2, size[1]); break;
      case Primitive::kCone: soup = cone_soup(size[0] / 2, size[1]); break;
    }
    int sphere_index = -1;
    if (soup.sphere) {
      sphere_index = static_cast<int>(inst.spheres.size());
      inst.spheres.push_back(Sphere{p.pose.translation, soup.sphere_radius});
    }
    // Weld corners of this primitive only; parts stay separate components.
    std::map<std::tuple<long long, long long, long long>, std::uint32_t> weld;
    auto key = [](const Vec3& v) {
      return std::make_tuple(std::llround(v[0] * 1e7), std::llround(v[1] * 1e7), std::llround(v[2] * 1e7));
    };
    for (const auto& tri : soup.tris) {
      Face face{};
      for (int c = 0; c < 3; ++c) {
        auto [it, inserted] = weld.try_emplace(key(tri[c].pos), static_cast<std::uint32_t>(verts.size()));
        if (inserted) verts.push_back(p.pose.apply_point(tri[c].pos));
        face[c] = it->second;
        corner_n.push_back(normalized(p.pose.apply_vector(tri[c].normal)));
      }
      inst.faces.push_back(face);
      inst.face_part.push_back(p.part_label);
      inst.face_sphere.push_back(sphere_index);
    }
  }

  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const Vec3& v : verts)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  require(extent > 0, ErrorCode::kDegenerate, "template " + tmpl.name + ": zero extent");
  const double s = 1.0 / extent;
  inst.vertices = Matrix(verts.size(), 3);
  for (std::size_t i = 0; i < verts.size(); ++i)
    for (int a = 0; a < 3; ++a) inst.vertices(i, a) = std::clamp((verts[i][a] - lo[a]) * s, 0.0, 1.0);
  quantize_to_float(inst.vertices);
  for (Sphere& sp : inst.spheres) {
    sp.center = s * (sp.center - lo);
    sp.radius *= s;
  }
  inst.corner_normals = Matrix(inst.faces.size(), 9);
  for (std::size_t f = 0; f < inst.faces.size(); ++f)
    for (int c = 0; c < 3; ++c)
      for (int a = 0; a < 3; ++a) inst.corner_normals(f, c * 3 + a) = corner_n[f * 3 + c][a];
  quantize_to_float(inst.corner_normals);
  inst.bbox_edge = 1.0;
  finalize(inst);

  SurfaceSample dense = sample_surface(inst, opts.dense_points, seed ^ 0x9e3779b97f4a7c15ULL);
  inst.points = std::move(dense.points);
  inst.point_part = std::move(dense.part);
  return inst;
}

SurfaceSample sample_surface(const ObjectInstance& inst, std::size_t n_points, std::uint64_t seed) {
  require(n_points >= 1, ErrorCode::kInvalidArgument, "sample_surface: n_points must be >= 1");
  require(!inst.faces.empty(), ErrorCode::kInvalidArgument, "sample_surface: instance has no faces");
  std::vector<double> cdf(inst.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < inst.faces.size(); ++f) {
    total += face_area(inst, f);
    cdf[f] = total;
  }
  require(total > 0, ErrorCode::kDegenerate, "sample_surface: zero-area mesh");

  std::mt19937_64 rng(seed);
  SurfaceSample out;
  out.points = Matrix(n_points, 6);
  out.part.resize(n_points);
  out.face.resize(n_points);
  auto vtx = [&](std::uint32_t i) { return Vec3{inst.vertices(i, 0), inst.vertices(i, 1), inst.vertices(i, 2)}; };
  for (std::size_t i = 0; i < n_points; ++i) {
    const double u = uniform01(rng) * total;
    std::size_t f = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    f = std::min(f, inst.faces.size() - 1);
    const double r1 = std::sqrt(uniform01(rng));
    const double r2 = uniform01(rng);
    const double b0 = 1 - r1, b1 = r1 * (1 - r2), b2 = r1 * r2;
    const Face& fc = inst.faces[f];
    Vec3 p = b0 * vtx(fc[0]) + b1 * vtx(fc[1]) + b2 * vtx(fc[2]);
    Vec3 n;
    if (inst.face_sphere[f] >= 0) {
      const Sphere& sp = inst.spheres[static_cast<std::size_t>(inst.face_sphere[f])];
      n = normalized(p - sp.center);
      p = sp.center + sp.radius * n;
    } else {
      auto cn = [&](int c) {
        return Vec3{inst.corner_normals(f, c * 3), inst.corner_normals(f, c * 3 + 1), inst.corner_normals(f, c * 3 + 2)};
      };
      n = normalized(b0 * cn(0) + b1 * cn(1) + b2 * cn(2));
    }
    for (int a = 0; a < 3; ++a) {
      out.points(i, a) = std::clamp(p[a], 0.0, 1.0);
      out.points(i, 3 + a) = n[a];
    }
    out.part[i] = inst.face_part[f];
    out.face[i] = static_cast<std::uint32_t>(f);
  }
  quantize_to_float(out.points);
  return out;
}

}  // namespace pixpoint::data
