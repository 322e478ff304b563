#pragma once

// Generated object corpus: instances, training point clouds and multi-view
// renders, plus its on-disk format.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pixpoint/dataset.hpp"
#include "pixpoint/render.hpp"

namespace pixpoint::data {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

struct ViewRender {
  CameraView camera;
  PositionMap map;
  std::vector<int> part;  // per-pixel part label, −1 background
};

struct ObjectRecord {
  ObjectInstance instance;
  SurfaceSample surface;  // training point cloud fed to the 3D tokenizer
  std::uint64_t seed = 0;
  bool held_out = false;
  std::vector<ViewRender> views;
};

struct CorpusConfig {
  std::vector<int> categories{0, 1, 2, 3, 4, 5, 6, 7};
  int train_per_category = 25;
  int test_per_category = 5;
  int random_views = 10;
  int resolution = 64;
  int high_resolution = 128;
  std::size_t surface_points = 2048;
  std::size_t dense_points = 12288;
  /// Splat radius in pixels at 64×64; scaled linearly with resolution.
  double splat_radius = 1.0;
  std::uint64_t seed = 7;
};

struct Corpus {
  CorpusConfig config;
  std::vector<ObjectRecord> objects;
};

/// Pure function of (registry, config); objects are generated independently.
Corpus generate_corpus(const CorpusConfig& cfg);

/// Builds one object record (instance, training cloud, base-tier renders).
ObjectRecord make_object(const ShapeTemplate& tmpl, const CorpusConfig& cfg, int object_id, bool held_out);

/// Renders every view of `obj` at `resolution` with the same view directions.
std::vector<ViewRender> render_tier(const ObjectRecord& obj, const CorpusConfig& cfg, int resolution);

double splat_radius_for(const CorpusConfig& cfg, int resolution);

struct ObjectEntry {
  int object_id = 0;
  int category_id = 0;
  bool held_out = false;
  std::string file;
  std::uint64_t checksum = 0;
  std::uint64_t bytes = 0;
};

struct Manifest {
  std::uint32_t format_version = kDatasetFormatVersion;
  CorpusConfig config;
  std::vector<ObjectEntry> objects;
};

/// Writes manifest.json plus one checksummed binary blob per object.
Manifest write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// Throws Error with kVersionMismatch, kTruncated, kChecksum or kIo.
Corpus read_corpus(const std::filesystem::path& dir);

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n);

}  // namespace pixpoint::data
