#pragma once

// Dense numeric kernels used by the autograd engine, tokenizers and evaluators.
//
// Every kernel has a serial reference and an OpenMP variant. The parallel
// variants partition work by output row and never reduce across threads, so
// both produce bit-identical results.

#include <cstddef>
#include <span>
#include <vector>

#include "pixpoint/matrix.hpp"

namespace pixpoint::kernels {

enum class Exec { kSerial, kParallel };

/// Default execution policy used by library code. Tests flip it to compare paths.
Exec default_exec();
void set_default_exec(Exec exec);

/// C (+)= op(A) · op(B) where op transposes when the flag is set.
void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& c, bool accumulate,
          Exec exec = default_exec());

Matrix matmul(const Matrix& a, const Matrix& b, Exec exec = default_exec());
/// A · Bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b, Exec exec = default_exec());
/// Aᵀ · B
Matrix matmul_tn(const Matrix& a, const Matrix& b, Exec exec = default_exec());

/// Pairwise squared Euclidean distances between rows of a (n×d) and b (m×d).
Matrix squared_distances(const Matrix& a, const Matrix& b, Exec exec = default_exec());

/// Farthest-point sampling over rows of `points` (n×3).
///
/// The first pick is `first`; each later pick maximizes the minimum squared
/// distance to the already-selected set, ties broken by lowest index.
std::vector<std::size_t> farthest_point_sampling(const Matrix& points, std::size_t count,
                                                 std::size_t first, Exec exec = default_exec());

/// Index of the row nearest to the column-wise centroid (lowest index on ties).
std::size_t nearest_to_centroid(const Matrix& points);

/// k nearest rows of `points` for every row of `queries`, sorted by
/// (distance, index). Result is queries.rows × k.
std::vector<std::vector<std::size_t>> knn(const Matrix& points, const Matrix& queries,
                                          std::size_t k, Exec exec = default_exec());

}  // namespace pixpoint::kernels
