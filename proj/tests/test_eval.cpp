#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "pixpoint/error.hpp"
#include "pixpoint/eval.hpp"
#include "support.hpp"

using namespace pixpoint;

TEST_CASE("LocAcc on a hand-computed example") {
  const Matrix gt(1, 3, std::vector<double>{0, 0, 0});
  const Matrix centers(3, 3, std::vector<double>{1, 0, 0, 0.5, 0, 0, 0, 0.1, 0});
  const double edge = 1.0 / std::sqrt(3.0);  // d_norm = 1
  const auto r = eval::loc_acc_from_rankings(gt, {{0, 1, 2}}, centers, {1, 2, 3, 10}, edge);
  CHECK(r.scores[0] == doctest::Approx(0.0));
  CHECK(r.scores[1] == doctest::Approx(50.0));
  CHECK(r.scores[2] == doctest::Approx(90.0));
  CHECK(r.scores[3] == doctest::Approx(90.0));
  const Matrix far(1, 3, std::vector<double>{5, 0, 0});
  CHECK(eval::loc_acc_from_rankings(gt, {{0}}, far, {1}, edge).scores[0] == 0.0);
}

TEST_CASE("LocAcc by similarity is monotone in k and perfect for identical descriptors") {
  std::mt19937_64 rng(1);
  const Matrix centers = testing::random_matrix(30, 3, rng, 0, 1);
  Matrix desc = testing::random_matrix(30, 8, rng);
  for (std::size_t r = 0; r < 30; ++r) {
    double n = 0.0;
    for (double v : desc.row(r)) n += v * v;
    for (double& v : desc.row(r)) v /= std::sqrt(n);
  }
  const auto exact = eval::loc_acc(centers, desc, desc, centers, {1, 5}, 1.0);
  CHECK(exact.scores[0] == doctest::Approx(100.0));
  const Matrix gt = testing::random_matrix(40, 3, rng, 0, 1);
  const Matrix q = testing::random_matrix(40, 8, rng);
  const auto r = eval::loc_acc(gt, q, desc, centers, {1, 2, 3, 5, 10}, 1.0);
  for (std::size_t i = 1; i < r.scores.size(); ++i) CHECK(r.scores[i] >= r.scores[i - 1]);
  for (const auto& per : r.dstar)
    for (std::size_t i = 1; i < per.size(); ++i) CHECK(per[i] <= per[i - 1]);
}

TEST_CASE("ranking ties go to the lowest index") {
  const Matrix gallery(3, 2, std::vector<double>{0, 1, 1, 0, 0, 1});
  const std::vector<double> q{0, 1};
  CHECK(eval::rank_by_similarity(q, gallery) == std::vector<std::size_t>{0, 2, 1});
}

TEST_CASE("retrieval metrics on a hand-computed example") {
  const Matrix gallery(3, 2, std::vector<double>{1, 0, 0, 1, -1, 0});
  const Matrix queries(2, 2, std::vector<double>{1, 0.1, 0, 1});
  // Query 0 ranks (0, 1, 2); label 2 is at rank 3. Query 1 ranks (1, 0, 2); label 1 at rank 1.
  const auto r = eval::retrieval_eval(queries, {2, 1}, gallery, {0, 1, 2}, {1, 2, 3});
  CHECK(r.first_correct_rank == std::vector<std::size_t>{3, 1});
  CHECK(r.recall[0] == doctest::Approx(50.0));
  CHECK(r.recall[1] == doctest::Approx(50.0));
  CHECK(r.recall[2] == doctest::Approx(100.0));
  CHECK(r.mrr == doctest::Approx(100.0 * (1.0 / 3 + 1.0) / 2));
}

TEST_CASE("analytic chance levels agree with random rankings") {
  const std::vector<int> gallery{0, 0, 1, 1, 1, 2, 3, 3};
  const std::vector<int> queries{0, 1, 2, 3};
  const auto ch = eval::chance_levels(queries, gallery);
  std::mt19937_64 rng(5);
  std::vector<std::size_t> order(gallery.size());
  double r1 = 0.0, mrr = 0.0;
  const int trials = 200000;
  for (int t = 0; t < trials; ++t) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int label = queries[static_cast<std::size_t>(t) % queries.size()];
    for (std::size_t i = 0; i < order.size(); ++i)
      if (gallery[order[i]] == label) {
        r1 += i == 0;
        mrr += 1.0 / static_cast<double>(i + 1);
        break;
      }
  }
  CHECK(ch.recall1 == doctest::Approx(100.0 * r1 / trials).epsilon(0.02));
  CHECK(ch.mrr == doctest::Approx(100.0 * mrr / trials).epsilon(0.01));
  CHECK(ch.recall1 == doctest::Approx(100.0 * (2.0 / 8 + 3.0 / 8 + 1.0 / 8 + 2.0 / 8) / 4));
}

TEST_CASE("view protocols") {
  CHECK(eval::protocol_views(eval::Protocol::kS4Ortho, 16, 1) == std::vector<std::size_t>{0, 1, 2, 3});
  const auto s4 = eval::protocol_views(eval::Protocol::kS4Random, 16, 9);
  CHECK(s4.size() == 4);
  CHECK(std::set<std::size_t>(s4.begin(), s4.end()).size() == 4);
  CHECK(s4 == eval::protocol_views(eval::Protocol::kS4Random, 16, 9));
  CHECK(eval::protocol_views(eval::Protocol::kS1Random, 16, 9).size() == 1);
  CHECK(eval::parse_protocol("s4-ortho") == eval::Protocol::kS4Ortho);
  CHECK(std::string(eval::protocol_name(eval::Protocol::kS1Random)) == "s1-random");
  CHECK_THROWS_AS(eval::parse_protocol("s2"), Error);
}
