#pragma once

// Procedural multi-part shapes: templates, instantiation, surface sampling.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pixpoint/geometry.hpp"
#include "pixpoint/matrix.hpp"

namespace pixpoint::data {

enum class Primitive : std::uint8_t { kBox, kSphere, kCylinder, kCone };

const char* primitive_name(Primitive p);

/// One primitive of a template. Sizes are full extents per axis:
/// box (x, y, z); sphere diameter = x; cylinder/cone diameter = x and height = y
/// along the local y axis.
struct PartSpec {
  Primitive primitive = Primitive::kBox;
  int part_label = 0;
  RigidTransform pose;
  Vec3 size_min{1, 1, 1};
  Vec3 size_max{1, 1, 1};
};

struct ShapeTemplate {
  int category_id = 0;
  std::string name;
  std::vector<PartSpec> parts;
};

/// Throws when a template violates its invariants (no parts, min > max).
void validate_template(const ShapeTemplate& t);
/// Throws on duplicate category ids.
void validate_registry(const std::vector<ShapeTemplate>& registry);

/// Eight categories with shared part structure across instances.
const std::vector<ShapeTemplate>& builtin_templates();

struct Sphere {
  Vec3 center{0, 0, 0};
  double radius = 0.0;
};

using Face = std::array<std::uint32_t, 3>;

struct ObjectInstance {
  int object_id = 0;
  int category_id = 0;
  Matrix vertices;                 // V×3, unit-cube normalized
  std::vector<Face> faces;
  std::vector<int> face_part;
  Matrix corner_normals;           // F×9, one unit normal per face corner
  std::vector<int> face_sphere;    // index into spheres, −1 for flat geometry
  std::vector<Sphere> spheres;
  Matrix points;                   // N×6 dense surface sample (coords ⊕ normals)
  std::vector<int> point_part;
  std::vector<std::vector<std::uint32_t>> face_adjacency;
  double bbox_edge = 1.0;
};

/// Oriented surface samples with provenance.
struct SurfaceSample {
  Matrix points;  // N×6
  std::vector<int> part;
  std::vector<std::uint32_t> face;
};

struct InstanceOptions {
  std::size_t dense_points = 12288;
  int max_retries = 16;
};

/// Deterministic for fixed (template, seed). Coordinates normalized so the
/// bounding box fits [0,1]³ with its longest edge equal to 1.
ObjectInstance instantiate(const ShapeTemplate& tmpl, std::uint64_t seed, int object_id = 0,
                           const InstanceOptions& opts = {});

/// Area-proportional sampling over faces; deterministic per seed.
SurfaceSample sample_surface(const ObjectInstance& inst, std::size_t n_points, std::uint64_t seed);

/// Faces are adjacent iff they share an edge (vertex-index pair).
std::vector<std::vector<std::uint32_t>> build_face_adjacency(const std::vector<Face>& faces);

double face_area(const ObjectInstance& inst, std::size_t f);
Vec3 face_centroid(const ObjectInstance& inst, std::size_t f);

/// Rebuilds derived fields (adjacency) after manual construction or loading.
void finalize(ObjectInstance& inst);

/// Rounds every stored coordinate to 32-bit float precision so persistence is lossless.
void quantize_to_float(Matrix& m);

}  // namespace pixpoint::data
