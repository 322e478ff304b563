#include <cmath>

#include "doctest.h"
#include "pixpoint/corpus.hpp"
#include "pixpoint/error.hpp"
#include "pixpoint/kernels.hpp"
#include "pixpoint/tokenize2d.hpp"
#include "pixpoint/tokenize3d.hpp"
#include "support.hpp"

using namespace pixpoint;

namespace {

struct Fixture {
  data::ObjectInstance inst = data::instantiate(data::builtin_templates()[4], 21, 0, {4096, 16});
  std::vector<data::CameraView> cams = data::make_view_cameras(inst, 64, 2, 3);
  std::vector<data::RenderOutput> renders;
  tok2d::Backbone2d backbone;
  Fixture() {
    for (const auto& c : cams) renders.push_back(data::render_view(inst, c, 1.0));
  }
};

}  // namespace

TEST_CASE("patch validity follows center coverage and the coverage fraction") {
  Fixture f;
  for (std::size_t s = 0; s < f.cams.size(); ++s) {
    const auto& map = f.renders[s].map;
    const auto grid = tok2d::extract_patch_features(map, f.cams[s], f.backbone);
    CHECK(grid.grid_h == 8);
    CHECK(grid.grid_w == 8);
    CHECK(grid.features.rows == 64);
    for (std::size_t u = 0; u < 8; ++u)
      for (std::size_t v = 0; v < 8; ++v) {
        int covered = 0;
        for (int r = 0; r < 8; ++r)
          for (int c = 0; c < 8; ++c) covered += map.covered(static_cast<int>(u * 8) + r, static_cast<int>(v * 8) + c);
        const bool expect = map.covered(static_cast<int>(u * 8 + 4), static_cast<int>(v * 8 + 4)) && covered >= 32;
        CHECK(static_cast<bool>(grid.valid[u * 8 + v]) == expect);
        if (!expect)
          for (double x : grid.features.row(u * 8 + v)) CHECK(x == 0.0);
      }
  }
}

TEST_CASE("backbone features are deterministic in the seed") {
  Fixture f;
  tok2d::BackboneConfig other;
  other.seed = 12;
  const auto a = tok2d::extract_patch_features(f.renders[0].map, f.cams[0], f.backbone);
  const auto b = tok2d::extract_patch_features(f.renders[0].map, f.cams[0], tok2d::Backbone2d{});
  const auto c = tok2d::extract_patch_features(f.renders[0].map, f.cams[0], tok2d::Backbone2d{other});
  CHECK(a.features == b.features);
  CHECK_FALSE(a.features == c.features);
}

TEST_CASE("query sets hold cell-center geometry and respect the cap") {
  Fixture f;
  std::vector<tok2d::PatchGrid> grids;
  for (std::size_t s = 0; s < 4; ++s) grids.push_back(tok2d::extract_patch_features(f.renders[s].map, f.cams[s], f.backbone));
  std::vector<const tok2d::PatchGrid*> gp;
  std::vector<const data::PositionMap*> mp;
  std::size_t pool = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    gp.push_back(&grids[s]);
    mp.push_back(&f.renders[s].map);
    pool += grids[s].valid_count();
  }
  const auto all = tok2d::sample_queries(gp, mp, 100000);
  CHECK(all.size() == pool);
  const auto capped = tok2d::sample_queries(gp, mp, 40);
  CHECK(capped.size() == std::min<std::size_t>(40, pool));
  for (std::size_t m = 0; m < capped.size(); ++m) {
    const auto& g = grids[capped.view[m]];
    CHECK(g.valid[capped.cell[m]]);
    const int r = static_cast<int>(capped.cell[m] / g.grid_w * 8 + 4), c = static_cast<int>(capped.cell[m] % g.grid_w * 8 + 4);
    const Vec3 w = f.renders[capped.view[m]].map.xyz(r, c);
    for (int a = 0; a < 3; ++a) CHECK(capped.q(m, a) == w[a]);
    for (std::size_t j = 0; j < capped.x.cols; ++j) CHECK(capped.x(m, j) == g.features(capped.cell[m], j));
  }
}

TEST_CASE("teacher tokens depend on category and stay close across views") {
  Fixture f;
  tok2d::TeacherNet net;
  const auto a = tok2d::teacher_token(net, f.inst, f.cams[0]);
  const auto b = tok2d::teacher_token(net, f.inst, f.cams[5]);
  const auto other = data::instantiate(data::builtin_templates()[0], 21, 0, {4096, 16});
  const auto c = tok2d::teacher_token(net, other, f.cams[0]);
  double ab = 0.0, ac = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - b[i]) * (a[i] - b[i]);
    ac += (a[i] - c[i]) * (a[i] - c[i]);
  }
  CHECK(a.size() == net.config().dim);
  CHECK(ab < ac);
  const Matrix tokens(2, 2, std::vector<double>{1, 2, 3, 6});
  CHECK(tok2d::mean_teacher(tokens) == std::vector<double>{2, 4});
}

TEST_CASE("token fields: FPS centers, sorted neighborhoods, relative coordinates") {
  Fixture f;
  const auto s = data::sample_surface(f.inst, 600, 2);
  const auto field = tok3d::build_token_field(s.points, 40, 12);
  CHECK(field.tokens() == 40);
  Matrix xyz(s.points.rows, 3);
  for (std::size_t i = 0; i < xyz.rows; ++i)
    for (std::size_t a = 0; a < 3; ++a) xyz(i, a) = s.points(i, a);
  CHECK(field.center_index[0] == kernels::nearest_to_centroid(xyz));
  CHECK(field.center_index == kernels::farthest_point_sampling(xyz, 40, field.center_index[0]));
  CHECK(field.center_code.rows == 40);
  CHECK(field.center_code.cols == tok3d::kCenterCodeDim);
  for (std::size_t n = 0; n < 40; ++n) {
    double prev = -1.0;
    for (std::size_t j = 0; j < 12; ++j) {
      const auto row = field.neighborhoods.row(n * 12 + j);
      const double d = std::sqrt(row[0] * row[0] + row[1] * row[1] + row[2] * row[2]);
      CHECK(d >= prev);
      prev = d;
    }
    CHECK(field.neighborhoods(n * 12, 0) == 0.0);  // the center is its own nearest point
  }
  CHECK_THROWS_AS(tok3d::build_token_field(s.points, 40, 601), Error);
}

TEST_CASE("set encoder output is invariant to neighborhood order") {
  Fixture f;
  const auto s = data::sample_surface(f.inst, 300, 2);
  auto field = tok3d::build_token_field(s.points, 16, 8);
  nn::Rng rng(4);
  tok3d::SetEncoder enc("vae", {8, 16, 6}, rng);
  ag::Graph g1;
  const Matrix a = enc.forward(g1, field).value();
  for (std::size_t n = 0; n < 16; ++n)
    for (std::size_t c = 0; c < 6; ++c) std::swap(field.neighborhoods(n * 8 + 1, c), field.neighborhoods(n * 8 + 7, c));
  ag::Graph g2;
  const Matrix b = enc.forward(g2, field).value();
  REQUIRE(a.rows == 16);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
}
