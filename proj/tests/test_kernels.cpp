#include <algorithm>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "pixpoint/kernels.hpp"
#include "support.hpp"

using namespace pixpoint;
using kernels::Exec;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix transposed(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

double d2(const Matrix& p, std::size_t i, const Matrix& q, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < p.cols; ++c) s += (p(i, c) - q(j, c)) * (p(i, c) - q(j, c));
  return s;
}

}  // namespace

TEST_CASE("gemm matches the triple loop in every transpose combination") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 17, k = 1 + rng() % 13, m = 1 + rng() % 11;
    const Matrix a = testing::random_matrix(n, k, rng), b = testing::random_matrix(k, m, rng);
    const Matrix ref = naive_matmul(a, b);
    for (Exec e : {Exec::kSerial, Exec::kParallel}) {
      const Matrix c1 = kernels::matmul(a, b, e);
      const Matrix c2 = kernels::matmul_nt(a, transposed(b), e);
      const Matrix c3 = kernels::matmul_tn(transposed(a), b, e);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(c1.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
        CHECK(c2.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
        CHECK(c3.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("gemm accumulate adds to the output") {
  std::mt19937_64 rng(2);
  const Matrix a = testing::random_matrix(4, 3, rng), b = testing::random_matrix(3, 5, rng);
  Matrix c(4, 5, 1.0);
  kernels::gemm(a, false, b, false, c, true);
  const Matrix ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c.data[i] == doctest::Approx(ref.data[i] + 1.0));
}

TEST_CASE("serial and parallel kernels are bit-identical") {
  std::mt19937_64 rng(3);
  const Matrix a = testing::random_matrix(97, 33, rng), b = testing::random_matrix(33, 41, rng);
  CHECK(kernels::matmul(a, b, Exec::kSerial) == kernels::matmul(a, b, Exec::kParallel));
  const Matrix p = testing::random_matrix(400, 3, rng), q = testing::random_matrix(50, 3, rng);
  CHECK(kernels::squared_distances(p, q, Exec::kSerial) == kernels::squared_distances(p, q, Exec::kParallel));
  CHECK(kernels::farthest_point_sampling(p, 64, 5, Exec::kSerial) ==
        kernels::farthest_point_sampling(p, 64, 5, Exec::kParallel));
  CHECK(kernels::knn(p, q, 9, Exec::kSerial) == kernels::knn(p, q, 9, Exec::kParallel));
}

TEST_CASE("squared distances match the definition") {
  std::mt19937_64 rng(4);
  const Matrix p = testing::random_matrix(30, 4, rng), q = testing::random_matrix(20, 4, rng);
  const Matrix d = kernels::squared_distances(p, q);
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t j = 0; j < q.rows; ++j) CHECK(d(i, j) == doctest::Approx(d2(p, i, q, j)).epsilon(1e-12));
}

TEST_CASE("farthest point sampling follows the greedy max-min rule") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 20 + rng() % 200;
    const Matrix p = testing::random_matrix(n, 3, rng);
    const std::size_t first = rng() % n, count = 1 + rng() % n;
    const auto picks = kernels::farthest_point_sampling(p, count, first);
    REQUIRE(picks.size() == count);
    CHECK(picks[0] == first);
    for (std::size_t s = 1; s < count; ++s) {
      double best = -1.0;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (std::find(picks.begin(), picks.begin() + static_cast<long>(s), i) != picks.begin() + static_cast<long>(s))
          continue;
        double mind = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < s; ++t) mind = std::min(mind, d2(p, i, p, picks[t]));
        if (mind > best) {
          best = mind;
          arg = i;
        }
      }
      CHECK(picks[s] == arg);
    }
  }
}

TEST_CASE("farthest point sampling on duplicate points takes the lowest index") {
  Matrix p(4, 3, 0.0);
  p(3, 0) = 1.0;
  const auto picks = kernels::farthest_point_sampling(p, 3, 0);
  CHECK(picks == std::vector<std::size_t>{0, 3, 1});
}

TEST_CASE("knn sorts by distance then index") {
  std::mt19937_64 rng(6);
  const Matrix p = testing::random_matrix(120, 3, rng), q = testing::random_matrix(15, 3, rng);
  const auto nn = kernels::knn(p, q, 7);
  for (std::size_t j = 0; j < q.rows; ++j) {
    std::vector<std::size_t> idx(p.rows);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d2(p, a, q, j) < d2(p, b, q, j); });
    idx.resize(7);
    CHECK(nn[j] == idx);
  }
}

TEST_CASE("nearest to centroid breaks ties by index") {
  Matrix p(3, 3, 0.0);
  p(0, 0) = -1.0;
  p(1, 0) = 1.0;
  p(2, 0) = 0.0;
  CHECK(kernels::nearest_to_centroid(p) == 2);
  Matrix sym(2, 3, 0.0);
  sym(0, 1) = 1.0;
  sym(1, 1) = -1.0;
  CHECK(kernels::nearest_to_centroid(sym) == 0);
}
