#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pixpoint/corpus.hpp"
#include "pixpoint/dataset.hpp"
#include "pixpoint/error.hpp"
#include "pixpoint/render.hpp"
#include "support.hpp"

using namespace pixpoint;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pixpoint_test_" + name);
  fs::remove_all(p);
  return p;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("builtin templates are valid and distinct") {
  const auto& reg = data::builtin_templates();
  CHECK(reg.size() == 8);
  data::validate_registry(reg);
  for (const auto& t : reg) data::validate_template(t);
  auto dup = reg;
  dup[1].category_id = dup[0].category_id;
  CHECK_THROWS_AS(data::validate_registry(dup), Error);
  data::ShapeTemplate bad = reg[0];
  bad.parts[0].size_min = {2, 2, 2};
  CHECK_THROWS_AS(data::validate_template(bad), Error);
}

TEST_CASE("instances are deterministic, normalized and watertight per primitive") {
  for (const auto& t : data::builtin_templates()) {
    const auto a = data::instantiate(t, 99, 3, {2048, 16});
    const auto b = data::instantiate(t, 99, 3, {2048, 16});
    CHECK(a.vertices == b.vertices);
    CHECK(a.faces == b.faces);
    CHECK(a.points == b.points);
    double lo[3] = {1e9, 1e9, 1e9}, hi[3] = {-1e9, -1e9, -1e9};
    for (std::size_t v = 0; v < a.vertices.rows; ++v)
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], a.vertices(v, c));
        hi[c] = std::max(hi[c], a.vertices(v, c));
      }
    double longest = 0.0;
    for (int c = 0; c < 3; ++c) {
      CHECK(lo[c] >= -1e-9);
      CHECK(hi[c] <= 1 + 1e-9);
      longest = std::max(longest, hi[c] - lo[c]);
    }
    CHECK(longest == doctest::Approx(1.0));
    CHECK(a.face_part.size() == a.faces.size());
    // Closed primitives: every face has exactly three edge neighbors.
    for (const auto& adj : a.face_adjacency) CHECK(adj.size() == 3);
    std::set<int> labels(a.face_part.begin(), a.face_part.end());
    CHECK(labels.size() == t.parts.size());
  }
}

TEST_CASE("face adjacency is symmetric and shares an edge") {
  const auto inst = data::instantiate(data::builtin_templates()[2], 5);
  const auto& adj = inst.face_adjacency;
  for (std::size_t f = 0; f < adj.size(); ++f)
    for (std::uint32_t g : adj[f]) {
      const auto& nb = adj[g];
      CHECK(std::find(nb.begin(), nb.end(), f) != nb.end());
      int shared = 0;
      for (auto x : inst.faces[f])
        for (auto y : inst.faces[g]) shared += x == y;
      CHECK(shared == 2);
    }
}

TEST_CASE("surface samples lie on their faces and carry the face part") {
  const auto inst = data::instantiate(data::builtin_templates()[0], 8);
  const auto s = data::sample_surface(inst, 500, 4);
  REQUIRE(s.points.rows == 500);
  for (std::size_t i = 0; i < 500; ++i) {
    const auto f = s.face[i];
    CHECK(s.part[i] == inst.face_part[f]);
    const auto& F = inst.faces[f];
    const Vec3 a{inst.vertices(F[0], 0), inst.vertices(F[0], 1), inst.vertices(F[0], 2)};
    const Vec3 b{inst.vertices(F[1], 0), inst.vertices(F[1], 1), inst.vertices(F[1], 2)};
    const Vec3 c{inst.vertices(F[2], 0), inst.vertices(F[2], 1), inst.vertices(F[2], 2)};
    const Vec3 p{s.points(i, 0), s.points(i, 1), s.points(i, 2)};
    const Vec3 n = cross(b - a, c - a);
    CHECK(std::abs(dot(p - a, n)) / norm(n) < 1e-6);
    const double nn = std::hypot(s.points(i, 3), s.points(i, 4), s.points(i, 5));
    CHECK(nn == doctest::Approx(1.0));
  }
  CHECK(data::sample_surface(inst, 500, 4).points == s.points);
}

TEST_CASE("rendered pixels lie on the object and follow the camera convention") {
  const auto inst = data::instantiate(data::builtin_templates()[1], 3);
  const auto cams = data::make_view_cameras(inst, 32, 2, 9);
  CHECK(cams.size() == 8);
  for (const auto& cam : cams) {
    data::validate_camera(cam);
    const auto out = data::render_view(inst, cam, 1.0);
    std::size_t covered = 0;
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        if (!out.map.covered(r, c)) {
          CHECK(out.part[static_cast<std::size_t>(r * 32 + c)] == -1);
          continue;
        }
        ++covered;
        const Vec3 w = out.map.xyz(r, c);
        const Vec3 pc = cam.to_camera(w);
        const double u = cam.cx + cam.scale * pc[0], v = cam.cy - cam.scale * pc[1];
        // The pixel is within the splat radius of the projected winning point.
        CHECK(std::abs(u - (c + 0.5)) <= 1.5);
        CHECK(std::abs(v - (r + 0.5)) <= 1.5);
        CHECK(out.part[static_cast<std::size_t>(r * 32 + c)] >= 0);
      }
    CHECK(covered > 50);
  }
}

TEST_CASE("invalid cameras are rejected") {
  data::CameraView cam;
  cam.pose.rotation[0][0] = 2.0;
  CHECK_THROWS_AS(data::validate_camera(cam), Error);
}

TEST_CASE("corpus generation is a pure function of its config") {
  auto cfg = testing::tiny_config().corpus;
  const auto a = data::generate_corpus(cfg), b = data::generate_corpus(cfg);
  REQUIRE(a.objects.size() == 8);
  std::size_t held = 0;
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].instance.points == b.objects[i].instance.points);
    CHECK(a.objects[i].views.size() == 6 + 4);
    CHECK(a.objects[i].views[3].map == b.objects[i].views[3].map);
    held += a.objects[i].held_out;
  }
  CHECK(held == 2);
}

TEST_CASE("corpus persistence round-trips and detects damage") {
  const auto corpus = data::generate_corpus(testing::tiny_config().corpus);
  const fs::path dir = scratch("corpus");
  const auto manifest = data::write_corpus(corpus, dir);
  const auto back = data::read_corpus(dir);
  REQUIRE(back.objects.size() == corpus.objects.size());
  for (std::size_t i = 0; i < corpus.objects.size(); ++i) {
    const auto& x = corpus.objects[i];
    const auto& y = back.objects[i];
    CHECK(x.instance.vertices == y.instance.vertices);
    CHECK(x.instance.faces == y.instance.faces);
    CHECK(x.instance.face_part == y.instance.face_part);
    CHECK(x.instance.points == y.instance.points);
    CHECK(x.instance.face_adjacency == y.instance.face_adjacency);
    CHECK(x.surface.points == y.surface.points);
    CHECK(x.held_out == y.held_out);
    for (std::size_t v = 0; v < x.views.size(); ++v) {
      CHECK(x.views[v].map == y.views[v].map);
      CHECK(x.views[v].part == y.views[v].part);
    }
  }

  const fs::path obj = dir / manifest.objects[0].file;
  const auto size = fs::file_size(obj);
  {
    std::fstream f(obj, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    char c = 0;
    f.read(&c, 1);
    f.seekp(static_cast<std::streamoff>(size / 2));
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
  }
  CHECK(code_of([&] { data::read_corpus(dir); }) == ErrorCode::kChecksum);
  fs::resize_file(obj, size - 7);
  CHECK(code_of([&] { data::read_corpus(dir); }) == ErrorCode::kTruncated);

  data::write_corpus(corpus, dir);
  std::string text;
  {
    std::ifstream in(dir / "manifest.json");
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto pos = text.find("\"format_version\"");
  REQUIRE(pos != std::string::npos);
  const auto colon = text.find(':', pos);
  const auto end = text.find_first_of(",}", colon);
  text.replace(colon + 1, end - colon - 1, "99");
  {
    std::ofstream out(dir / "manifest.json");
    out << text;
  }
  CHECK(code_of([&] { data::read_corpus(dir); }) == ErrorCode::kVersionMismatch);
  fs::remove_all(dir);
}
