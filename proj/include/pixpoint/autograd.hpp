#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Graph records every operation of one forward pass in creation order, which
// is already a topological order. backward() walks the tape in reverse,
// accumulates into Parameter::grad and then consumes the graph.

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pixpoint/matrix.hpp"

namespace pixpoint::ag {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  /// Decoupled weight decay applies to this parameter.
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool d = true)
      : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols), decay(d) {}
  void zero_grad() { grad = Matrix(value.rows, value.cols); }
};

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double scalar() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  /// Leaf that receives a gradient readable through grad() after backward.
  Var input(Matrix value);
  Var param(Parameter& p);

  /// Appends an op node. `fn` runs during backward when any parent needs a gradient.
  Var record(Matrix value, const std::vector<std::size_t>& parents, BackwardFn fn,
             const char* op_name);

  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(Var v) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Upstream gradient of a node during backward (allocated lazily).
  const Matrix& upstream(std::size_t id);
  /// Gradient slot of a parent; created zero-filled on first access.
  Matrix& grad_slot(std::size_t id);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t normalization_floor_hits() const { return floor_hits_; }
  void note_floor_hit() { ++floor_hits_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void ensure_live() const;

  std::deque<Node> nodes_;  // stable references while the tape grows
  bool consumed_ = false;
  std::size_t floor_hits_ = 0;
};

// ---- element-wise and linear algebra -------------------------------------

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a + row, row is 1×cols broadcast over rows.
Var add_row(Var a, Var row);
/// a ⊙ row, row is 1×cols broadcast over rows.
Var mul_row(Var a, Var row);
/// a · s where s is a 1×1 variable.
Var mul_scalar(Var a, Var s);
/// a / s where s is a 1×1 variable.
Var div_scalar(Var a, Var s);
Var scale(Var a, double factor);
Var add_const(Var a, double c);
Var silu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);

// ---- normalization ---------------------------------------------------------

/// Row-wise (x - mean) / sqrt(var + eps), no affine part.
Var layer_norm(Var a, double eps = 1e-5);
/// Row-wise x / max(|x|, eps). Hitting the floor is counted on the graph.
Var l2_normalize_rows(Var a, double eps = 1e-12);

// ---- shape -----------------------------------------------------------------

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// 1×c → n×c
Var broadcast_rows(Var a, std::size_t n);
/// Stops gradient flow: returns a constant holding the same value.
Var detach(Var a);

// ---- reductions ------------------------------------------------------------

Var sum(Var a);
/// Column means over all rows → 1×cols.
Var mean_rows(Var a);
/// Consecutive groups of `group` rows reduced by mean / max → (rows/group)×cols.
Var segment_mean(Var a, std::size_t group);
Var segment_max(Var a, std::size_t group);
/// Σ_i weights[i] · a(i, 0) for an n×1 column.
Var weighted_sum(Var a, const std::vector<double>& weights);

// ---- softmax family ---------------------------------------------------------

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Row-wise log Σ_{j: mask(i,j)} exp(a(i,j)); every row needs at least one set entry.
Var masked_logsumexp_rows(Var a, const std::vector<char>& mask);
/// Mean over rows of KL(target_row ‖ softmax(logits_row)); `target` rows are distributions.
Var kl_div_rows(const Matrix& target, Var logits);
/// Entries (row, col) gathered into an n×1 column.
Var pick(Var a, const std::vector<std::pair<std::size_t, std::size_t>>& entries);

}  // namespace pixpoint::ag
