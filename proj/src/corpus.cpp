#include "pixpoint/corpus.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"
#include "pixpoint/binio.hpp"
#include "pixpoint/error.hpp"

namespace pixpoint::io {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + path.string());
}

}  // namespace pixpoint::io

namespace pixpoint::data {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'X', 'P', 'T', 'O', 'B', 'J', '\0'};

enum Tag : std::uint32_t {
  kMeta = 1,
  kVertices,
  kFaces,
  kFacePart,
  kCornerNormals,
  kFaceSphere,
  kSpheres,
  kDensePoints,
  kDensePart,
  kSurface,
  kSurfacePart,
  kSurfaceFace,
  kCameras,
  kMaps,
  kPartMaps,
};

std::uint64_t object_seed(std::uint64_t base, int object_id) {
  std::uint64_t x = base * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(object_id) + 1;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<float> to_f32(const Matrix& m) {
  std::vector<float> out(m.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(m.data[i]);
  return out;
}

void put_matrix_f32(io::ByteWriter& w, const Matrix& m) {
  w.put<std::uint64_t>(m.rows);
  w.put<std::uint64_t>(m.cols);
  const auto f = to_f32(m);
  w.put_array(f.data(), f.size());
}

Matrix get_matrix_f32(io::ByteReader& r) {
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  const auto f = r.get_array<float>();
  require(f.size() == rows * cols, ErrorCode::kTruncated, "matrix payload size mismatch");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < f.size(); ++i) m.data[i] = f[i];
  return m;
}

template <typename T>
void put_vec(io::ByteWriter& w, const std::vector<T>& v) {
  w.put_array(v.data(), v.size());
}

json config_to_json(const CorpusConfig& c) {
  return json{{"categories", c.categories},
              {"train_per_category", c.train_per_category},
              {"test_per_category", c.test_per_category},
              {"random_views", c.random_views},
              {"resolution", c.resolution},
              {"high_resolution", c.high_resolution},
              {"surface_points", c.surface_points},
              {"dense_points", c.dense_points},
              {"splat_radius", c.splat_radius},
              {"seed", c.seed}};
}

CorpusConfig config_from_json(const json& j) {
  CorpusConfig c;
  c.categories = j.at("categories").get<std::vector<int>>();
  c.train_per_category = j.at("train_per_category").get<int>();
  c.test_per_category = j.at("test_per_category").get<int>();
  c.random_views = j.at("random_views").get<int>();
  c.resolution = j.at("resolution").get<int>();
  c.high_resolution = j.at("high_resolution").get<int>();
  c.surface_points = j.at("surface_points").get<std::size_t>();
  c.dense_points = j.at("dense_points").get<std::size_t>();
  c.splat_radius = j.at("splat_radius").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::vector<unsigned char> encode_object(const ObjectRecord& obj) {
  io::ByteWriter w;
  for (char c : kMagic) w.put(c);
  w.put<std::uint32_t>(kDatasetFormatVersion);
  const ObjectInstance& inst = obj.instance;
  w.section(kMeta, [&](io::ByteWriter& s) {
    s.put<std::int32_t>(inst.object_id);
    s.put<std::int32_t>(inst.category_id);
    s.put<std::uint8_t>(obj.held_out ? 1 : 0);
    s.put<std::uint64_t>(obj.seed);
    s.put<double>(inst.bbox_edge);
  });
  w.section(kVertices, [&](io::ByteWriter& s) { put_matrix_f32(s, inst.vertices); });
  w.section(kFaces, [&](io::ByteWriter& s) {
    std::vector<std::uint32_t> flat;
    for (const Face& f : inst.faces) flat.insert(flat.end(), f.begin(), f.end());
    put_vec(s, flat);
  });
  w.section(kFacePart, [&](io::ByteWriter& s) { put_vec(s, inst.face_part); });
  w.section(kCornerNormals, [&](io::ByteWriter& s) { put_matrix_f32(s, inst.corner_normals); });
  w.section(kFaceSphere, [&](io::ByteWriter& s) { put_vec(s, inst.face_sphere); });
  w.section(kSpheres, [&](io::ByteWriter& s) {
    std::vector<double> flat;
    for (const Sphere& sp : inst.spheres) flat.insert(flat.end(), {sp.center[0], sp.center[1], sp.center[2], sp.radius});
    put_vec(s, flat);
  });
  w.section(kDensePoints, [&](io::ByteWriter& s) { put_matrix_f32(s, inst.points); });
  w.section(kDensePart, [&](io::ByteWriter& s) { put_vec(s, inst.point_part); });
  w.section(kSurface, [&](io::ByteWriter& s) { put_matrix_f32(s, obj.surface.points); });
  w.section(kSurfacePart, [&](io::ByteWriter& s) { put_vec(s, obj.surface.part); });
  w.section(kSurfaceFace, [&](io::ByteWriter& s) { put_vec(s, obj.surface.face); });
  w.section(kCameras, [&](io::ByteWriter& s) {
    s.put<std::uint64_t>(obj.views.size());
    for (const ViewRender& v : obj.views) {
      const CameraView& c = v.camera;
      s.put<std::int32_t>(c.view_index);
      for (const Vec3& row : c.pose.rotation)
        for (double x : row) s.put(x);
      for (double x : c.pose.translation) s.put(x);
      s.put(c.scale);
      s.put(c.cx);
      s.put(c.cy);
      s.put<std::int32_t>(c.height);
      s.put<std::int32_t>(c.width);
      s.put<std::uint8_t>(c.orthographic_axis ? 1 : 0);
    }
  });
  w.section(kMaps, [&](io::ByteWriter& s) {
    for (const ViewRender& v : obj.views) put_vec(s, v.map.data);
  });
  w.section(kPartMaps, [&](io::ByteWriter& s) {
    for (const ViewRender& v : obj.views) put_vec(s, v.part);
  });
  const std::uint64_t sum = fnv1a64(w.bytes().data(), w.bytes().size());
  w.put(sum);
  return std::move(w.bytes());
}

ObjectRecord decode_object(const std::vector<unsigned char>& bytes) {
  constexpr std::size_t kHeader = sizeof(kMagic) + sizeof(std::uint32_t);
  require(bytes.size() >= kHeader + sizeof(std::uint64_t), ErrorCode::kTruncated, "object blob too short");
  require(std::equal(kMagic, kMagic + sizeof(kMagic), bytes.begin()), ErrorCode::kVersionMismatch,
          "object blob has a foreign magic");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  require(version == kDatasetFormatVersion, ErrorCode::kVersionMismatch,
          "object blob format version " + std::to_string(version));
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  require(stored == fnv1a64(bytes.data(), body), ErrorCode::kChecksum, "object blob checksum mismatch");

  io::ByteReader r(bytes.data() + kHeader, body - kHeader);
  ObjectRecord obj;
  ObjectInstance& inst = obj.instance;
  {
    auto s = r.section(kMeta);
    inst.object_id = s.get<std::int32_t>();
    inst.category_id = s.get<std::int32_t>();
    obj.held_out = s.get<std::uint8_t>() != 0;
    obj.seed = s.get<std::uint64_t>();
    inst.bbox_edge = s.get<double>();
  }
  {
    auto s = r.section(kVertices);
    inst.vertices = get_matrix_f32(s);
  }
  {
    auto s = r.section(kFaces);
    const auto flat = s.get_array<std::uint32_t>();
    require(flat.size() % 3 == 0, ErrorCode::kTruncated, "face list not a multiple of 3");
    for (std::size_t i = 0; i < flat.size(); i += 3) {
      for (std::size_t k = 0; k < 3; ++k)
        require(flat[i + k] < inst.vertices.rows, ErrorCode::kDatasetMismatch, "face index out of range");
      inst.faces.push_back({flat[i], flat[i + 1], flat[i + 2]});
    }
  }
  {
    auto s = r.section(kFacePart);
    inst.face_part = s.get_array<int>();
  }
  {
    auto s = r.section(kCornerNormals);
    inst.corner_normals = get_matrix_f32(s);
  }
  {
    auto s = r.section(kFaceSphere);
    inst.face_sphere = s.get_array<int>();
  }
  {
    auto s = r.section(kSpheres);
    const auto flat = s.get_array<double>();
    for (std::size_t i = 0; i + 3 < flat.size(); i += 4)
      inst.spheres.push_back(Sphere{{flat[i], flat[i + 1], flat[i + 2]}, flat[i + 3]});
  }
  {
    auto s = r.section(kDensePoints);
    inst.points = get_matrix_f32(s);
  }
  {
    auto s = r.section(kDensePart);
    inst.point_part = s.get_array<int>();
  }
  {
    auto s = r.section(kSurface);
    obj.surface.points = get_matrix_f32(s);
  }
  {
    auto s = r.section(kSurfacePart);
    obj.surface.part = s.get_array<int>();
  }
  {
    auto s = r.section(kSurfaceFace);
    obj.surface.face = s.get_array<std::uint32_t>();
  }
  {
    auto s = r.section(kCameras);
    const auto n = s.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      CameraView c;
      c.view_index = s.get<std::int32_t>();
      for (Vec3& row : c.pose.rotation)
        for (double& x : row) x = s.get<double>();
      for (double& x : c.pose.translation) x = s.get<double>();
      c.scale = s.get<double>();
      c.cx = s.get<double>();
      c.cy = s.get<double>();
      c.height = s.get<std::int32_t>();
      c.width = s.get<std::int32_t>();
      c.orthographic_axis = s.get<std::uint8_t>() != 0;
      obj.views.push_back(ViewRender{c, PositionMap(c.height, c.width), {}});
    }
  }
  {
    auto s = r.section(kMaps);
    for (ViewRender& v : obj.views) {
      auto data = s.get_array<float>();
      require(data.size() == v.map.data.size(), ErrorCode::kTruncated, "position map size mismatch");
      v.map.data = std::move(data);
    }
  }
  {
    auto s = r.section(kPartMaps);
    for (ViewRender& v : obj.views) v.part = s.get_array<int>();
  }
  require(inst.face_part.size() == inst.faces.size() && inst.face_sphere.size() == inst.faces.size() &&
              inst.corner_normals.rows == inst.faces.size(),
          ErrorCode::kDatasetMismatch, "per-face arrays disagree in length");
  finalize(inst);
  return obj;
}

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

double splat_radius_for(const CorpusConfig& cfg, int resolution) {
  return cfg.splat_radius * static_cast<double>(resolution) / 64.0;
}

std::vector<ViewRender> render_tier(const ObjectRecord& obj, const CorpusConfig& cfg, int resolution) {
  const auto cams = make_view_cameras(obj.instance, resolution, cfg.random_views, obj.seed ^ 0x5bd1e995ULL);
  std::vector<ViewRender> views;
  views.reserve(cams.size());
  for (const CameraView& cam : cams) {
    RenderOutput r = render_view(obj.instance, cam, splat_radius_for(cfg, resolution));
    views.push_back(ViewRender{cam, std::move(r.map), std::move(r.part)});
  }
  return views;
}

ObjectRecord make_object(const ShapeTemplate& tmpl, const CorpusConfig& cfg, int object_id, bool held_out) {
  ObjectRecord obj;
  obj.seed = object_seed(cfg.seed, object_id);
  obj.held_out = held_out;
  InstanceOptions opts;
  opts.dense_points = cfg.dense_points;
  obj.instance = instantiate(tmpl, obj.seed, object_id, opts);
  obj.surface = sample_surface(obj.instance, cfg.surface_points, obj.seed ^ 0xa5a5a5a5ULL);
  obj.views = render_tier(obj, cfg, cfg.resolution);
  return obj;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  const auto& registry = builtin_templates();
  std::map<int, const ShapeTemplate*> by_id;
  for (const ShapeTemplate& t : registry) by_id[t.category_id] = &t;
  struct Job {
    const ShapeTemplate* tmpl;
    int id;
    bool held_out;
  };
  std::vector<Job> jobs;
  int next_id = 0;
  for (int cat : cfg.categories) {
    const auto it = by_id.find(cat);
    require(it != by_id.end(), ErrorCode::kConfig, "unknown category id " + std::to_string(cat));
    for (int i = 0; i < cfg.train_per_category + cfg.test_per_category; ++i)
      jobs.push_back({it->second, next_id++, i >= cfg.train_per_category});
  }
  Corpus corpus;
  corpus.config = cfg;
  corpus.objects.resize(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(jobs.size()); ++i) {
    const Job& j = jobs[static_cast<std::size_t>(i)];
    corpus.objects[static_cast<std::size_t>(i)] = make_object(*j.tmpl, cfg, j.id, j.held_out);
  }
  return corpus;
}

Manifest write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest manifest;
  manifest.config = corpus.config;
  json objects = json::array();
  for (const ObjectRecord& obj : corpus.objects) {
    const auto bytes = encode_object(obj);
    char name[32];
    std::snprintf(name, sizeof(name), "object_%05d.bin", obj.instance.object_id);
    io::write_file(dir / name, bytes);
    ObjectEntry e{obj.instance.object_id, obj.instance.category_id, obj.held_out, name,
                  fnv1a64(bytes.data(), bytes.size()), bytes.size()};
    manifest.objects.push_back(e);
    objects.push_back(json{{"id", e.object_id},
                           {"category", e.category_id},
                           {"held_out", e.held_out},
                           {"file", e.file},
                           {"checksum", e.checksum},
                           {"bytes", e.bytes}});
  }
  const json j{{"format_version", manifest.format_version},
               {"config", config_to_json(corpus.config)},
               {"object_count", corpus.objects.size()},
               {"objects", objects}};
  const std::string text = j.dump(2);
  io::write_file(dir / "manifest.json", std::vector<unsigned char>(text.begin(), text.end()));
  return manifest;
}

Corpus read_corpus(const std::filesystem::path& dir) {
  const auto raw = io::read_file(dir / "manifest.json");
  json j;
  try {
    j = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kTruncated, std::string("manifest unreadable: ") + e.what());
  }
  const auto version = j.at("format_version").get<std::uint32_t>();
  require(version == kDatasetFormatVersion, ErrorCode::kVersionMismatch,
          "dataset format version " + std::to_string(version) + " (expected " +
              std::to_string(kDatasetFormatVersion) + ")");
  Corpus corpus;
  corpus.config = config_from_json(j.at("config"));
  const auto& entries = j.at("objects");
  require(entries.size() == j.at("object_count").get<std::size_t>(), ErrorCode::kDatasetMismatch,
          "manifest object_count disagrees with object list");
  for (const json& e : entries) {
    const auto bytes = io::read_file(dir / e.at("file").get<std::string>());
    require(bytes.size() == e.at("bytes").get<std::uint64_t>(), ErrorCode::kTruncated,
            "object file " + e.at("file").get<std::string>() + " has unexpected length");
    require(fnv1a64(bytes.data(), bytes.size()) == e.at("checksum").get<std::uint64_t>(), ErrorCode::kChecksum,
            "object file " + e.at("file").get<std::string>() + " fails its manifest checksum");
    ObjectRecord obj = decode_object(bytes);
    require(obj.instance.object_id == e.at("id").get<int>(), ErrorCode::kDatasetMismatch,
            "object id disagrees with manifest");
    corpus.objects.push_back(std::move(obj));
  }
  return corpus;
}

}  // namespace pixpoint::data
