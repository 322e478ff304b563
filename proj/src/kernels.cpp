#include "pixpoint/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <numeric>

#include "pixpoint/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pixpoint::kernels {

namespace {

std::atomic<Exec> g_default_exec{Exec::kParallel};

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

// out[i,:] (+)= sum_k lhs(i,k) * rhs[k,:], lhs element access through `at`.
template <typename At>
inline void axpy_row(std::size_t i, std::size_t inner, At at, const Matrix& rhs, double* out) {
  const std::size_t n = rhs.cols;
  for (std::size_t k = 0; k < inner; ++k) {
    const double s = at(i, k);
    if (s == 0.0) continue;
    const double* b = rhs.data.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += s * b[j];
  }
}

template <typename Body>
void for_rows(std::size_t n, Exec exec, Body body) {
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) body(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) body(i);
  }
}

}  // namespace

Exec default_exec() { return g_default_exec.load(); }
void set_default_exec(Exec exec) { g_default_exec.store(exec); }

void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& c, bool accumulate,
          Exec exec) {
  const std::size_t m = trans_a ? a.cols : a.rows;
  const std::size_t inner = trans_a ? a.rows : a.cols;
  const std::size_t inner_b = trans_b ? b.cols : b.rows;
  const std::size_t n = trans_b ? b.rows : b.cols;
  require(inner == inner_b, ErrorCode::kShapeMismatch, "gemm: inner dimensions differ");
  if (!accumulate || c.rows != m || c.cols != n) {
    require(!accumulate || (c.rows == m && c.cols == n), ErrorCode::kShapeMismatch,
            "gemm: accumulate target has wrong shape");
    c = Matrix(m, n);
  }
  // Rhs is always consumed row-wise as inner×n.
  Matrix bt;
  const Matrix* rhs = &b;
  if (trans_b) {
    bt = transpose(b);
    rhs = &bt;
  }
  if (trans_a) {
    const std::size_t lda = a.cols;
    const double* ad = a.data.data();
    for_rows(m, exec, [&](std::size_t i) {
      axpy_row(i, inner, [&](std::size_t r, std::size_t k) { return ad[k * lda + r]; }, *rhs,
               c.data.data() + i * n);
    });
  } else {
    const std::size_t lda = a.cols;
    const double* ad = a.data.data();
    for_rows(m, exec, [&](std::size_t i) {
      axpy_row(i, inner, [&](std::size_t r, std::size_t k) { return ad[r * lda + k]; }, *rhs,
               c.data.data() + i * n);
    });
  }
}

Matrix matmul(const Matrix& a, const Matrix& b, Exec exec) {
  Matrix c;
  gemm(a, false, b, false, c, false, exec);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b, Exec exec) {
  Matrix c;
  gemm(a, false, b, true, c, false, exec);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b, Exec exec) {
  Matrix c;
  gemm(a, true, b, false, c, false, exec);
  return c;
}

Matrix squared_distances(const Matrix& a, const Matrix& b, Exec exec) {
  require(a.cols == b.cols, ErrorCode::kShapeMismatch, "squared_distances: dimension mismatch");
  Matrix out(a.rows, b.rows);
  const std::size_t d = a.cols;
  for_rows(a.rows, exec, [&](std::size_t i) {
    const double* x = a.data.data() + i * d;
    double* o = out.data.data() + i * b.rows;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* y = b.data.data() + j * d;
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = x[t] - y[t];
        s += diff * diff;
      }
      o[j] = s;
    }
  });
  return out;
}

std::size_t nearest_to_centroid(const Matrix& points) {
  require(points.rows > 0, ErrorCode::kInvalidArgument, "nearest_to_centroid: empty point set");
  std::vector<double> centroid(points.cols, 0.0);
  for (std::size_t r = 0; r < points.rows; ++r)
    for (std::size_t c = 0; c < points.cols; ++c) centroid[c] += points(r, c);
  for (double& v : centroid) v /= static_cast<double>(points.rows);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < points.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < points.cols; ++c) {
      const double diff = points(r, c) - centroid[c];
      s += diff * diff;
    }
    if (s < best_d) {
      best_d = s;
      best = r;
    }
  }
  return best;
}

std::vector<std::size_t> farthest_point_sampling(const Matrix& points, std::size_t count,
                                                 std::size_t first, Exec exec) {
  const std::size_t n = points.rows;
  require(count <= n, ErrorCode::kInvalidArgument, "farthest_point_sampling: count exceeds points");
  std::vector<std::size_t> picked;
  if (count == 0) return picked;
  require(first < n, ErrorCode::kInvalidArgument, "farthest_point_sampling: bad first index");
  picked.reserve(count);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);
  std::size_t last = first;
  const std::size_t d = points.cols;

  int threads = 1;
#ifdef _OPENMP
  if (exec == Exec::kParallel) threads = omp_get_max_threads();
#endif
  std::vector<std::pair<double, std::size_t>> partial(static_cast<std::size_t>(threads));

  while (true) {
    picked.push_back(last);
    taken[last] = 1;
    if (picked.size() == count) break;
    const double* lp = points.data.data() + last * d;

    auto scan = [&](std::size_t lo, std::size_t hi) {
      std::pair<double, std::size_t> best{-1.0, n};
      for (std::size_t i = lo; i < hi; ++i) {
        const double* p = points.data.data() + i * d;
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = p[t] - lp[t];
          s += diff * diff;
        }
        if (s < min_d[i]) min_d[i] = s;
        if (!taken[i] && min_d[i] > best.first) best = {min_d[i], i};
      }
      return best;
    };

    std::pair<double, std::size_t> best{-1.0, n};
    if (threads > 1) {
#pragma omp parallel num_threads(threads)
      {
#ifdef _OPENMP
        const auto tid = static_cast<std::size_t>(omp_get_thread_num());
#else
        const std::size_t tid = 0;
#endif
        const std::size_t chunk = (n + threads - 1) / threads;
        const std::size_t lo = std::min(n, tid * chunk);
        const std::size_t hi = std::min(n, lo + chunk);
        partial[tid] = scan(lo, hi);
      }
      // Chunks are in index order, so strict > keeps the lowest index on ties.
      for (const auto& p : partial)
        if (p.second < n && p.first > best.first) best = p;
    } else {
      best = scan(0, n);
    }
    last = best.second;
  }
  return picked;
}

std::vector<std::vector<std::size_t>> knn(const Matrix& points, const Matrix& queries,
                                          std::size_t k, Exec exec) {
  require(k <= points.rows, ErrorCode::kInvalidArgument, "knn: k exceeds point count");
  std::vector<std::vector<std::size_t>> out(queries.rows);
  const Matrix dist = squared_distances(queries, points, exec);
  for_rows(queries.rows, exec, [&](std::size_t q) {
    std::vector<std::size_t> idx(points.rows);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto row = dist.row(q);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        return row[a] < row[b] || (row[a] == row[b] && a < b);
                      });
    idx.resize(k);
    out[q] = std::move(idx);
  });
  return out;
}

}  // namespace pixpoint::kernels
