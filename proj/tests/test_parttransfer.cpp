#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pixpoint/corpus.hpp"
#include "pixpoint/error.hpp"
#include "pixpoint/parttransfer.hpp"
#include "support.hpp"

using namespace pixpoint;

TEST_CASE("DBSCAN on a hand-built layout") {
  // Two tight groups, one point bridging nothing, one isolated point.
  const Matrix p(8, 3, std::vector<double>{0, 0, 0, 0.05, 0, 0, 0, 0.05, 0,    //
                                           1, 1, 1, 1.05, 1, 1, 1, 1.05, 1, 1, 1, 1.05,  //
                                           5, 5, 5});
  const auto labels = part::dbscan(p, 0.08, 3);
  CHECK(labels == std::vector<int>{0, 0, 0, 1, 1, 1, 1, -1});
  CHECK(part::dominant_cluster(labels) == 1);
  CHECK(part::dominant_cluster({-1, -1}) == -1);
  CHECK(part::dominant_cluster({0, 1, 1, 0}) == 0);
  // Distance exactly eps counts as a neighbor; the point itself counts toward min_pts.
  const Matrix pair(2, 3, std::vector<double>{0, 0, 0, 0.5, 0, 0});
  CHECK(part::dbscan(pair, 0.5, 2) == std::vector<int>{0, 0});
  CHECK(part::dbscan(pair, 0.49, 2) == std::vector<int>{-1, -1});
}

TEST_CASE("DBSCAN border points join the first cluster that reaches them") {
  const Matrix p(7, 3, std::vector<double>{0, 0, 0, 0.1, 0, 0, 0.2, 0, 0, 0.3, 0, 0,  //
                                           0.4, 0, 0, 0.5, 0, 0, 0.6, 0, 0});
  CHECK(part::dbscan(p, 0.1 + 1e-9, 3) == std::vector<int>{0, 0, 0, 0, 0, 0, 0});
  CHECK(part::dbscan(p, 0.1 + 1e-9, 4) == std::vector<int>{-1, -1, -1, -1, -1, -1, -1});
}

TEST_CASE("flood fill keeps the largest allowed component reachable from the seeds") {
  // Path graph 0-1-2-3-4-5 with face 3 disallowed.
  std::vector<std::vector<std::uint32_t>> adj{{1}, {0, 2}, {1, 3}, {2, 4}, {3, 5}, {4}};
  std::vector<char> allowed{1, 1, 1, 0, 1, 1};
  auto r = part::flood_fill({0, 5}, adj, allowed);
  CHECK(r.faces == std::vector<std::uint32_t>{0, 1, 2});
  allowed = {1, 1, 0, 0, 1, 1};
  r = part::flood_fill({0, 5}, adj, allowed);
  CHECK(r.faces == std::vector<std::uint32_t>{0, 1});  // equal sizes: lowest face index wins
  r = part::flood_fill({}, adj, allowed);
  CHECK(r.faces.empty());
  CHECK(part::single_component({0, 1, 2}, adj));
  CHECK_FALSE(part::single_component({0, 2}, adj));
}

TEST_CASE("face IoU") {
  CHECK(part::face_iou({1, 2, 3}, {2, 3, 4, 5}) == doctest::Approx(2.0 / 5));
  CHECK(part::face_iou({}, {}) == 0.0);
  CHECK(part::face_iou({7}, {7}) == 1.0);
}

TEST_CASE("point-to-triangle distance in every Voronoi region") {
  data::ObjectInstance inst;
  inst.vertices = Matrix(3, 3, std::vector<double>{0, 0, 0, 1, 0, 0, 0, 1, 0});
  inst.faces = {{0, 1, 2}};
  CHECK(part::face_distance(inst, 0, {0.2, 0.2, 0.5}) == doctest::Approx(0.5));   // interior
  CHECK(part::face_distance(inst, 0, {-1, -1, 0}) == doctest::Approx(std::sqrt(2.0)));  // vertex 0
  CHECK(part::face_distance(inst, 0, {0.5, -2, 0}) == doctest::Approx(2.0));     // edge 01
  CHECK(part::face_distance(inst, 0, {1, 1, 0}) == doctest::Approx(std::sqrt(0.5)));  // edge 12
  CHECK(part::face_distance(inst, 0, {3, 0, 0}) == doctest::Approx(2.0));        // vertex 1
  // Brute force over a dense barycentric grid.
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Vec3 p{std::uniform_real_distribution<double>(-1, 2)(rng), std::uniform_real_distribution<double>(-1, 2)(rng),
                 std::uniform_real_distribution<double>(-1, 1)(rng)};
    double best = 1e9;
    const int n = 400;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; i + j <= n; ++j) {
        const double x = static_cast<double>(i) / n, y = static_cast<double>(j) / n;
        best = std::min(best, std::hypot(p[0] - x, p[1] - y, p[2]));
      }
    CHECK(part::face_distance(inst, 0, p) == doctest::Approx(best).epsilon(1e-2));
  }
}

TEST_CASE("matching keeps one patch per token and filters by similarity") {
  const Matrix tokens(2, 2, std::vector<double>{1, 0, 0, 1});
  const Matrix patches(4, 2, std::vector<double>{0.9, 0.1, 0.95, 0.0, 0.1, 0.3, 0.95, 0.0});
  const auto m = part::match_and_filter(patches, tokens, 0.5);
  CHECK(m.raw == 4);
  CHECK(m.deduplicated == 2);
  REQUIRE(m.matches.size() == 1);
  CHECK(m.matches[0].token == 0);
  CHECK(m.matches[0].patch == 1);  // highest similarity, lowest patch on ties
  CHECK_FALSE(m.no_confident_region());
  CHECK(part::match_and_filter(patches, tokens, 0.99).no_confident_region());
}

TEST_CASE("mask activation by covered fraction") {
  part::PartMask2D mask;
  mask.height = mask.width = 16;
  mask.mask.assign(256, 0);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 3; ++c) mask.mask[static_cast<std::size_t>(r * 16 + c)] = 1;  // 24 of 64 pixels in cell 0
  CHECK(part::activate_patches(mask, 8, 0.3) == std::vector<std::size_t>{0});
  CHECK(part::activate_patches(mask, 8, 0.4).empty());
  CHECK(mask.area() == 24);
}

TEST_CASE("rendered part masks and PBM masks") {
  const auto corpus = data::generate_corpus(testing::tiny_config().corpus);
  const auto& rec = corpus.objects[0];
  const auto& view = rec.views[0];
  int row = -1, col = -1;
  for (int r = 0; r < 32 && row < 0; ++r)
    for (int c = 0; c < 32; ++c)
      if (view.map.covered(r, c)) {
        row = r;
        col = c;
        break;
      }
  REQUIRE(row >= 0);
  const auto mask = part::select_mask(view, 0, row, col);
  const int label = view.part[static_cast<std::size_t>(row * 32 + col)];
  CHECK(mask.part_label == label);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) CHECK(mask.at(r, c) == (view.part[static_cast<std::size_t>(r * 32 + c)] == label));
  CHECK_THROWS_AS(part::select_mask(view, 0, 0, 0), Error);

  const auto path = std::filesystem::temp_directory_path() / "pixpoint_test_mask.pbm";
  {
    std::ofstream out(path);
    out << "P1\n# comment\n32 32\n";
    for (int r = 0; r < 32; ++r) {
      for (int c = 0; c < 32; ++c) out << (mask.at(r, c) ? "1 " : "0 ");
      out << '\n';
    }
  }
  const auto loaded = part::load_mask(path, view, 0, row, col);
  CHECK(loaded.mask == mask.mask);
  CHECK(loaded.part_label == -1);
  std::filesystem::remove(path);
}

TEST_CASE("part faces and config validation") {
  const auto inst = data::instantiate(data::builtin_templates()[0], 4);
  std::size_t total = 0;
  for (int label = 0; label < 8; ++label) total += part::part_faces(inst, label).size();
  CHECK(total == inst.faces.size());
  part::TransferConfig cfg;
  cfg.eps = 0;
  CHECK_THROWS_AS(part::validate(cfg), Error);
}
