#include "pixpoint/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pixpoint/error.hpp"
#include "pixpoint/kernels.hpp"

namespace pixpoint::ag {

namespace {

void check_finite(const Matrix& m, const char* op) {
  for (double v : m.data)
    if (!std::isfinite(v)) fail(ErrorCode::kNumerical, std::string("non-finite value produced by ") + op);
}

void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

Graph& graph_of(Var a, Var b) {
  require(&a.graph() == &b.graph(), ErrorCode::kInvalidArgument, "operands from different graphs");
  return a.graph();
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

}  // namespace

// ---- Var / Graph -----------------------------------------------------------

const Matrix& Var::value() const { return graph_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows == 1 && v.cols == 1, ErrorCode::kShapeMismatch, "scalar() on non-scalar");
  return v.data[0];
}

void Graph::ensure_live() const {
  if (consumed_) fail(ErrorCode::kGraphConsumed, "graph already consumed by backward()");
}

Var Graph::constant(Matrix value) {
  ensure_live();
  check_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Graph::input(Matrix value) {
  ensure_live();
  check_finite(value, "input");
  nodes_.push_back(Node{std::move(value), {}, true, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  ensure_live();
  check_finite(p.value, "parameter");
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  return {this, nodes_.size() - 1};
}

Var Graph::record(Matrix value, const std::vector<std::size_t>& parents, BackwardFn fn,
                  const char* op_name) {
  ensure_live();
  check_finite(value, op_name);
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}, nullptr});
  return {this, nodes_.size() - 1};
}

const Matrix& Graph::upstream(std::size_t id) { return grad_slot(id); }

Matrix& Graph::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.rows != n.value.rows || n.grad.cols != n.value.cols) n.grad = Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

const Matrix& Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  require(n.grad.same_shape(n.value), ErrorCode::kInvalidArgument, "no gradient recorded for node");
  return n.grad;
}

void Graph::backward(Var loss) {
  ensure_live();
  require(&loss.graph() == this, ErrorCode::kInvalidArgument, "loss belongs to another graph");
  const Matrix& lv = nodes_[loss.id()].value;
  require(lv.rows == 1 && lv.cols == 1, ErrorCode::kShapeMismatch, "backward() needs a scalar loss");
  grad_slot(loss.id()).data[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.grad.same_shape(n.value)) continue;
    if (n.param != nullptr) {
      if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
      add_into(n.param->grad, n.grad);
    } else if (n.backward) {
      // The closure may append nothing, but copying keeps it valid regardless.
      BackwardFn fn = n.backward;
      fn(*this, i);
    }
  }
  consumed_ = true;
}

// ---- element-wise and linear algebra -------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require(a.cols() == b.rows(), ErrorCode::kShapeMismatch, "matmul: inner dimension mismatch");
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(kernels::matmul(a.value(), b.value()), {ia, ib},
                  [ia, ib](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    if (g.needs_grad(ia)) kernels::gemm(up, false, g.value(ib), true, g.grad_slot(ia), true);
                    if (g.needs_grad(ib)) kernels::gemm(g.value(ia), true, up, false, g.grad_slot(ib), true);
                  },
                  "matmul");
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require(a.cols() == b.cols(), ErrorCode::kShapeMismatch, "matmul_nt: inner dimension mismatch");
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(kernels::matmul_nt(a.value(), b.value()), {ia, ib},
                  [ia, ib](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    if (g.needs_grad(ia)) kernels::gemm(up, false, g.value(ib), false, g.grad_slot(ia), true);
                    if (g.needs_grad(ib)) kernels::gemm(up, true, g.value(ia), false, g.grad_slot(ib), true);
                  },
                  "matmul_nt");
}

Var transpose(Var a) {
  const Matrix& v = a.value();
  Matrix out(v.cols, v.rows);
  for (std::size_t r = 0; r < v.rows; ++r)
    for (std::size_t c = 0; c < v.cols; ++c) out(c, r) = v(r, c);
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t r = 0; r < ga.rows; ++r)
                              for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += up(c, r);
                          },
                          "transpose");
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require(a.value().same_shape(b.value()), ErrorCode::kShapeMismatch, "add: shape mismatch");
  Matrix out = a.value();
  add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    if (g.needs_grad(ia)) add_into(g.grad_slot(ia), up);
                    if (g.needs_grad(ib)) add_into(g.grad_slot(ib), up);
                  },
                  "add");
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require(a.value().same_shape(b.value()), ErrorCode::kShapeMismatch, "sub: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    if (g.needs_grad(ia)) add_into(g.grad_slot(ia), up);
                    if (g.needs_grad(ib)) {
                      Matrix& gb = g.grad_slot(ib);
                      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= up.data[i];
                    }
                  },
                  "sub");
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require(a.value().same_shape(b.value()), ErrorCode::kShapeMismatch, "mul: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    if (g.needs_grad(ia)) {
                      Matrix& ga = g.grad_slot(ia);
                      const Matrix& vb = g.value(ib);
                      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += up.data[i] * vb.data[i];
                    }
                    if (g.needs_grad(ib)) {
                      Matrix& gb = g.grad_slot(ib);
                      const Matrix& va = g.value(ia);
                      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += up.data[i] * va.data[i];
                    }
                  },
                  "mul");
}

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorCode::kShapeMismatch, "add_row: bad row shape");
  Matrix out = a.value();
  const Matrix& rv = row.value();
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += rv.data[c];
  const std::size_t ia = a.id(), ib = row.id();
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    if (g.needs_grad(ia)) add_into(g.grad_slot(ia), up);
                    if (g.needs_grad(ib)) {
                      Matrix& gb = g.grad_slot(ib);
                      for (std::size_t r = 0; r < up.rows; ++r)
                        for (std::size_t c = 0; c < up.cols; ++c) gb.data[c] += up(r, c);
                    }
                  },
                  "add_row");
}

Var mul_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorCode::kShapeMismatch, "mul_row: bad row shape");
  Matrix out = a.value();
  const Matrix& rv = row.value();
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) *= rv.data[c];
  const std::size_t ia = a.id(), ib = row.id();
  return g.record(std::move(out), {ia, ib},
                  [ia, ib](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    const Matrix& va = g.value(ia);
                    const Matrix& vr = g.value(ib);
                    if (g.needs_grad(ia)) {
                      Matrix& ga = g.grad_slot(ia);
                      for (std::size_t r = 0; r < up.rows; ++r)
                        for (std::size_t c = 0; c < up.cols; ++c) ga(r, c) += up(r, c) * vr.data[c];
                    }
                    if (g.needs_grad(ib)) {
                      Matrix& gb = g.grad_slot(ib);
                      for (std::size_t r = 0; r < up.rows; ++r)
                        for (std::size_t c = 0; c < up.cols; ++c) gb.data[c] += up(r, c) * va(r, c);
                    }
                  },
                  "mul_row");
}

Var mul_scalar(Var a, Var s) {
  Graph& g = graph_of(a, s);
  const double sv = s.scalar();
  Matrix out = map(a.value(), [sv](double x) { return x * sv; });
  const std::size_t ia = a.id(), is = s.id();
  return g.record(std::move(out), {ia, is},
                  [ia, is](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    const double sv = g.value(is).data[0];
                    const Matrix& va = g.value(ia);
                    if (g.needs_grad(ia)) {
                      Matrix& ga = g.grad_slot(ia);
                      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += up.data[i] * sv;
                    }
                    if (g.needs_grad(is)) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < up.data.size(); ++i) acc += up.data[i] * va.data[i];
                      g.grad_slot(is).data[0] += acc;
                    }
                  },
                  "mul_scalar");
}

Var div_scalar(Var a, Var s) {
  Graph& g = graph_of(a, s);
  const double sv = s.scalar();
  require(sv != 0.0, ErrorCode::kNumerical, "div_scalar: division by zero");
  Matrix out = map(a.value(), [sv](double x) { return x / sv; });
  const std::size_t ia = a.id(), is = s.id();
  return g.record(std::move(out), {ia, is},
                  [ia, is](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    const double sv = g.value(is).data[0];
                    const Matrix& va = g.value(ia);
                    if (g.needs_grad(ia)) {
                      Matrix& ga = g.grad_slot(ia);
                      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += up.data[i] / sv;
                    }
                    if (g.needs_grad(is)) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < up.data.size(); ++i) acc += up.data[i] * va.data[i];
                      g.grad_slot(is).data[0] -= acc / (sv * sv);
                    }
                  },
                  "div_scalar");
}

Var scale(Var a, double factor) {
  Matrix out = map(a.value(), [factor](double x) { return x * factor; });
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, factor](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += up.data[i] * factor;
                          },
                          "scale");
}

Var add_const(Var a, double c) {
  Matrix out = map(a.value(), [c](double x) { return x + c; });
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia](Graph& g, std::size_t self) { add_into(g.grad_slot(ia), g.upstream(self)); },
                          "add_const");
}

namespace {

// Unary op whose derivative is expressed through (input, output).
template <typename F, typename D>
Var unary(Var a, F f, D d, const char* name) {
  Matrix out = map(a.value(), f);
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, d](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            const Matrix& x = g.value(ia);
                            const Matrix& y = g.value(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t i = 0; i < ga.data.size(); ++i)
                              ga.data[i] += up.data[i] * d(x.data[i], y.data[i]);
                          },
                          name);
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var silu(Var a) {
  return unary(
      a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x, double) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      },
      "silu");
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; }, "log");
}

// ---- normalization ---------------------------------------------------------

Var layer_norm(Var a, double eps) {
  const Matrix& x = a.value();
  Matrix out(x.rows, x.cols);
  std::vector<double> inv_std(x.rows);
  const double n = static_cast<double>(x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < x.cols; ++c) out(r, c) = (x(r, c) - mean) * inv_std[r];
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            const Matrix& y = g.value(self);
                            Matrix& ga = g.grad_slot(ia);
                            const double n = static_cast<double>(y.cols);
                            for (std::size_t r = 0; r < y.rows; ++r) {
                              double mean_up = 0.0, mean_up_y = 0.0;
                              for (std::size_t c = 0; c < y.cols; ++c) {
                                mean_up += up(r, c);
                                mean_up_y += up(r, c) * y(r, c);
                              }
                              mean_up /= n;
                              mean_up_y /= n;
                              for (std::size_t c = 0; c < y.cols; ++c)
                                ga(r, c) += inv_std[r] * (up(r, c) - mean_up - y(r, c) * mean_up_y);
                            }
                          },
                          "layer_norm");
}

Var l2_normalize_rows(Var a, double eps) {
  const Matrix& x = a.value();
  Matrix out(x.rows, x.cols);
  std::vector<double> norms(x.rows);
  std::vector<char> floored(x.rows, 0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    double nrm = std::sqrt(s);
    if (nrm < eps) {
      nrm = eps;
      floored[r] = 1;
      a.graph().note_floor_hit();
    }
    norms[r] = nrm;
    for (std::size_t c = 0; c < x.cols; ++c) out(r, c) = x(r, c) / nrm;
  }
  const std::size_t ia = a.id();
  return a.graph().record(
      std::move(out), {ia},
      [ia, norms = std::move(norms), floored = std::move(floored)](Graph& g, std::size_t self) {
        const Matrix& up = g.upstream(self);
        const Matrix& y = g.value(self);
        Matrix& ga = g.grad_slot(ia);
        for (std::size_t r = 0; r < y.rows; ++r) {
          if (floored[r]) {
            for (std::size_t c = 0; c < y.cols; ++c) ga(r, c) += up(r, c) / norms[r];
            continue;
          }
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols; ++c) dot += up(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols; ++c) ga(r, c) += (up(r, c) - y(r, c) * dot) / norms[r];
        }
      },
      "l2_normalize_rows");
}

// ---- shape -----------------------------------------------------------------

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat_cols: no parts");
  Graph& g = parts.front().graph();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    require(&p.graph() == &g && p.rows() == rows, ErrorCode::kShapeMismatch, "concat_cols: row mismatch");
    ids.push_back(p.id());
    offsets.push_back(cols);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offsets[k]));
  }
  return g.record(std::move(out), ids,
                  [ids, offsets](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!g.needs_grad(ids[k])) continue;
                      Matrix& gp = g.grad_slot(ids[k]);
                      for (std::size_t r = 0; r < gp.rows; ++r)
                        for (std::size_t c = 0; c < gp.cols; ++c) gp(r, c) += up(r, offsets[k] + c);
                    }
                  },
                  "concat_cols");
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat_rows: no parts");
  Graph& g = parts.front().graph();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    require(&p.graph() == &g && p.cols() == cols, ErrorCode::kShapeMismatch, "concat_rows: col mismatch");
    ids.push_back(p.id());
    offsets.push_back(rows);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& v = parts[k].value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offsets[k] * cols));
  }
  return g.record(std::move(out), ids,
                  [ids, offsets](Graph& g, std::size_t self) {
                    const Matrix& up = g.upstream(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!g.needs_grad(ids[k])) continue;
                      Matrix& gp = g.grad_slot(ids[k]);
                      const double* src = up.data.data() + offsets[k] * up.cols;
                      for (std::size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += src[i];
                    }
                  },
                  "concat_rows");
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  const Matrix& v = a.value();
  Matrix out(rows.size(), v.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < v.rows, ErrorCode::kInvalidArgument, "gather_rows: index out of range");
    std::copy(v.row(rows[i]).begin(), v.row(rows[i]).end(), out.row(i).begin());
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, rows](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t i = 0; i < rows.size(); ++i)
                              for (std::size_t c = 0; c < up.cols; ++c) ga(rows[i], c) += up(i, c);
                          },
                          "gather_rows");
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Matrix& v = a.value();
  require(begin <= end && end <= v.cols, ErrorCode::kInvalidArgument, "slice_cols: bad range");
  Matrix out(v.rows, end - begin);
  for (std::size_t r = 0; r < v.rows; ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = v(r, c);
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, begin](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t r = 0; r < up.rows; ++r)
                              for (std::size_t c = 0; c < up.cols; ++c) ga(r, begin + c) += up(r, c);
                          },
                          "slice_cols");
}

Var broadcast_rows(Var a, std::size_t n) {
  require(a.rows() == 1, ErrorCode::kShapeMismatch, "broadcast_rows: expects a row vector");
  const Matrix& v = a.value();
  Matrix out(n, v.cols);
  for (std::size_t r = 0; r < n; ++r) std::copy(v.data.begin(), v.data.end(), out.row(r).begin());
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t r = 0; r < up.rows; ++r)
                              for (std::size_t c = 0; c < up.cols; ++c) ga.data[c] += up(r, c);
                          },
                          "broadcast_rows");
}

Var detach(Var a) { return a.graph().constant(a.value()); }

// ---- reductions ------------------------------------------------------------

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const std::size_t ia = a.id();
  return a.graph().record(Matrix(1, 1, s), {ia},
                          [ia](Graph& g, std::size_t self) {
                            const double up = g.upstream(self).data[0];
                            for (double& v : g.grad_slot(ia).data) v += up;
                          },
                          "sum");
}

Var mean_rows(Var a) { return segment_mean(a, a.rows()); }

Var segment_mean(Var a, std::size_t group) {
  const Matrix& v = a.value();
  require(group > 0 && v.rows % group == 0, ErrorCode::kShapeMismatch, "segment_mean: rows not divisible");
  const std::size_t segs = v.rows / group;
  Matrix out(segs, v.cols);
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t s = 0; s < segs; ++s)
    for (std::size_t r = s * group; r < (s + 1) * group; ++r)
      for (std::size_t c = 0; c < v.cols; ++c) out(s, c) += v(r, c) * inv;
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, group, inv](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t r = 0; r < ga.rows; ++r)
                              for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += up(r / group, c) * inv;
                          },
                          "segment_mean");
}

Var segment_max(Var a, std::size_t group) {
  const Matrix& v = a.value();
  require(group > 0 && v.rows % group == 0, ErrorCode::kShapeMismatch, "segment_max: rows not divisible");
  const std::size_t segs = v.rows / group;
  Matrix out(segs, v.cols);
  std::vector<std::size_t> arg(segs * v.cols);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t c = 0; c < v.cols; ++c) {
      std::size_t best = s * group;
      for (std::size_t r = s * group + 1; r < (s + 1) * group; ++r)
        if (v(r, c) > v(best, c)) best = r;
      out(s, c) = v(best, c);
      arg[s * v.cols + c] = best;
    }
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, arg = std::move(arg)](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t s = 0; s < up.rows; ++s)
                              for (std::size_t c = 0; c < up.cols; ++c) ga(arg[s * up.cols + c], c) += up(s, c);
                          },
                          "segment_max");
}

Var weighted_sum(Var a, const std::vector<double>& weights) {
  const Matrix& v = a.value();
  require(v.cols == 1 && v.rows == weights.size(), ErrorCode::kShapeMismatch, "weighted_sum: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * v.data[i];
  const std::size_t ia = a.id();
  return a.graph().record(Matrix(1, 1, s), {ia},
                          [ia, weights](Graph& g, std::size_t self) {
                            const double up = g.upstream(self).data[0];
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t i = 0; i < weights.size(); ++i) ga.data[i] += up * weights[i];
                          },
                          "weighted_sum");
}

// ---- softmax family ---------------------------------------------------------

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double mx = *std::max_element(x.row(r).begin(), x.row(r).end());
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) s += (out(r, c) = std::exp(x(r, c) - mx));
    for (std::size_t c = 0; c < x.cols; ++c) out(r, c) /= s;
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            const Matrix& y = g.value(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t r = 0; r < y.rows; ++r) {
                              double dot = 0.0;
                              for (std::size_t c = 0; c < y.cols; ++c) dot += up(r, c) * y(r, c);
                              for (std::size_t c = 0; c < y.cols; ++c) ga(r, c) += y(r, c) * (up(r, c) - dot);
                            }
                          },
                          "softmax_rows");
}

Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double mx = *std::max_element(x.row(r).begin(), x.row(r).end());
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) s += std::exp(x(r, c) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < x.cols; ++c) out(r, c) = x(r, c) - lse;
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            const Matrix& y = g.value(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t r = 0; r < y.rows; ++r) {
                              double s = 0.0;
                              for (std::size_t c = 0; c < y.cols; ++c) s += up(r, c);
                              for (std::size_t c = 0; c < y.cols; ++c) ga(r, c) += up(r, c) - std::exp(y(r, c)) * s;
                            }
                          },
                          "log_softmax_rows");
}

Var kl_div_rows(const Matrix& target, Var logits) {
  const Matrix& x = logits.value();
  require(target.same_shape(x), ErrorCode::kShapeMismatch, "kl_div_rows: target shape mismatch");
  Matrix q(x.rows, x.cols);
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double mx = *std::max_element(x.row(r).begin(), x.row(r).end());
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) s += std::exp(x(r, c) - mx);
    const double lse = mx + std::log(s);
    double kl = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double log_q = x(r, c) - lse;
      q(r, c) = std::exp(log_q);
      const double p = target(r, c);
      if (p > 0) kl += p * (std::log(p) - log_q);
    }
    // Rounding can leave a tiny negative value for matching rows.
    total += std::max(kl, 0.0);
  }
  const double inv_rows = 1.0 / static_cast<double>(x.rows);
  const std::size_t ia = logits.id();
  return logits.graph().record(Matrix(1, 1, total * inv_rows), {ia},
                               [ia, target, q = std::move(q), inv_rows](Graph& g, std::size_t self) {
                                 const double up = g.upstream(self)(0, 0) * inv_rows;
                                 Matrix& ga = g.grad_slot(ia);
                                 for (std::size_t r = 0; r < q.rows; ++r) {
                                   double mass = 0.0;
                                   for (std::size_t c = 0; c < q.cols; ++c) mass += target(r, c);
                                   for (std::size_t c = 0; c < q.cols; ++c)
                                     ga(r, c) += up * (mass * q(r, c) - target(r, c));
                                 }
                               },
                               "kl_div_rows");
}

Var masked_logsumexp_rows(Var a, const std::vector<char>& mask) {
  const Matrix& x = a.value();
  require(mask.size() == x.size(), ErrorCode::kShapeMismatch, "masked_logsumexp_rows: mask size mismatch");
  Matrix out(x.rows, 1);
  Matrix probs(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols; ++c)
      if (mask[r * x.cols + c]) mx = std::max(mx, x(r, c));
    require(std::isfinite(mx), ErrorCode::kInvalidArgument, "masked_logsumexp_rows: empty mask row");
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c)
      if (mask[r * x.cols + c]) s += (probs(r, c) = std::exp(x(r, c) - mx));
    for (std::size_t c = 0; c < x.cols; ++c) probs(r, c) /= s;
    out.data[r] = mx + std::log(s);
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, probs = std::move(probs)](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t r = 0; r < probs.rows; ++r)
                              for (std::size_t c = 0; c < probs.cols; ++c) ga(r, c) += up.data[r] * probs(r, c);
                          },
                          "masked_logsumexp_rows");
}

Var pick(Var a, const std::vector<std::pair<std::size_t, std::size_t>>& entries) {
  const Matrix& x = a.value();
  Matrix out(entries.size(), 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require(entries[i].first < x.rows && entries[i].second < x.cols, ErrorCode::kInvalidArgument,
            "pick: index out of range");
    out.data[i] = x(entries[i].first, entries[i].second);
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, entries](Graph& g, std::size_t self) {
                            const Matrix& up = g.upstream(self);
                            Matrix& ga = g.grad_slot(ia);
                            for (std::size_t i = 0; i < entries.size(); ++i)
                              ga(entries[i].first, entries[i].second) += up.data[i];
                          },
                          "pick");
}

}  // namespace pixpoint::ag
