// Serial reference vs OpenMP variant for each dense kernel.

#include <benchmark/benchmark.h>

#include <random>

#include "pixpoint/kernels.hpp"

using namespace pixpoint;
using kernels::Exec;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Matrix m(r, c);
  for (double& v : m.data) v = u(rng);
  return m;
}

Exec exec_of(const benchmark::State& state) { return state.range(1) ? Exec::kParallel : Exec::kSerial; }

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::matmul(a, b, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_SquaredDistances(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, 3, 1), b = random_matrix(n / 4, 3, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::squared_distances(a, b, exec_of(state)));
}

void BM_FarthestPointSampling(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix p = random_matrix(n, 3, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::farthest_point_sampling(p, 128, 0, exec_of(state)));
}

void BM_Knn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix p = random_matrix(n, 3, 4), q = random_matrix(128, 3, 5);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::knn(p, q, 16, exec_of(state)));
}

}  // namespace

BENCHMARK(BM_Gemm)->ArgsProduct({{64, 128, 256}, {0, 1}})->ArgNames({"n", "parallel"});
BENCHMARK(BM_SquaredDistances)->ArgsProduct({{1024, 4096}, {0, 1}})->ArgNames({"n", "parallel"});
BENCHMARK(BM_FarthestPointSampling)->ArgsProduct({{2048, 12288}, {0, 1}})->ArgNames({"n", "parallel"});
BENCHMARK(BM_Knn)->ArgsProduct({{2048, 12288}, {0, 1}})->ArgNames({"n", "parallel"});

BENCHMARK_MAIN();
