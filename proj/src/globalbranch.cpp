#include "pixpoint/globalbranch.hpp"

#include <algorithm>
#include <cmath>

#include "pixpoint/error.hpp"

namespace pixpoint::global {

PooledView pool_view(ag::Graph& g, const ag::Var* tokens, std::size_t dim) {
  if (tokens == nullptr || tokens->rows() == 0) return {g.constant(Matrix(1, dim)), false};
  require(tokens->cols() == dim, ErrorCode::kShapeMismatch, "pool_view: token width mismatch");
  return {ag::mean_rows(*tokens), true};
}

Fusion::Fusion(std::string name, std::size_t shared_dim, std::size_t context_dim, std::size_t teacher_dim,
               nn::Rng& rng)
    : u_(name + ".context", context_dim, shared_dim, false, rng),
      wd_(name + ".teacher", teacher_dim, shared_dim, false, rng),
      gate_(name + ".gate", 2 * shared_dim, shared_dim, true, rng) {}

ag::Var Fusion::forward(ag::Graph& g, ag::Var pooled, ag::Var context, ag::Var teacher, bool use_teacher) {
  ag::Var r = ag::add(pooled, ag::scale(u_.forward(g, context), kLambdaContext));
  if (!use_teacher) return r;
  ag::Var wd = wd_.forward(g, teacher);
  ag::Var gamma = ag::sigmoid(gate_.forward(g, ag::concat_cols({pooled, wd})));
  last_gate_ = gamma.value();
  return ag::add(r, ag::scale(ag::mul(gamma, wd), kLambdaTeacher));
}

void Fusion::collect(std::vector<ag::Parameter*>& out) {
  u_.collect(out);
  wd_.collect(out);
  gate_.collect(out);
}

Global2d::Global2d(std::string name, std::size_t shared_dim, std::size_t hidden, std::size_t out_dim, nn::Rng& rng)
    : refine_(name + ".refine", shared_dim, shared_dim, hidden, 1, rng),
      project_(name + ".project", shared_dim, out_dim, true, rng) {}

ag::Var Global2d::refine(ag::Graph& g, ag::Var views) { return refine_.forward(g, views); }

ag::Var Global2d::describe(ag::Graph& g, ag::Var refined, const std::vector<std::size_t>& rows) {
  require(!rows.empty(), ErrorCode::kInvalidArgument, "global 2D descriptor: no valid views");
  return ag::l2_normalize_rows(project_.forward(g, ag::mean_rows(ag::gather_rows(refined, rows))));
}

ag::Var Global2d::forward(ag::Graph& g, ag::Var views, const std::vector<char>& valid) {
  require(valid.size() == views.rows(), ErrorCode::kShapeMismatch, "global 2D descriptor: validity size mismatch");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) rows.push_back(i);
  return describe(g, refine(g, views), rows);
}

void Global2d::collect(std::vector<ag::Parameter*>& out) {
  refine_.collect(out);
  project_.collect(out);
}

Global3d::Global3d(std::string name, std::size_t shared_dim, std::size_t heads, std::size_t ffn_hidden,
                   std::size_t out_dim, nn::Rng& rng)
    : attention_(name + ".attention", shared_dim, heads, ffn_hidden, rng),
      project_(name + ".project", shared_dim, out_dim, true, rng) {}

ag::Var Global3d::forward(ag::Graph& g, ag::Var tokens) {
  require(tokens.rows() >= 1, ErrorCode::kInvalidArgument, "global 3D descriptor: no tokens");
  return ag::l2_normalize_rows(project_.forward(g, ag::mean_rows(attention_.forward(g, tokens))));
}

void Global3d::collect(std::vector<ag::Parameter*>& out) {
  attention_.collect(out);
  project_.collect(out);
}

ag::Var global_loss(ag::Var g2d, ag::Var g3d, ag::Var tau) {
  require(g2d.rows() == g3d.rows() && g2d.cols() == g3d.cols() && g2d.rows() >= 1, ErrorCode::kShapeMismatch,
          "global_loss: descriptor batches disagree");
  const std::size_t b = g2d.rows();
  ag::Var logits = ag::div_scalar(ag::matmul_nt(g2d, g3d), tau);
  std::vector<std::pair<std::size_t, std::size_t>> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = {i, i};
  ag::Var rows = ag::sum(ag::pick(ag::log_softmax_rows(logits), diag));
  ag::Var cols = ag::sum(ag::pick(ag::log_softmax_rows(ag::transpose(logits)), diag));
  return ag::scale(ag::add(rows, cols), -1.0 / (2.0 * static_cast<double>(b)));
}

ag::Var subset_loss(ag::Var subset, ag::Var full) {
  require(subset.rows() == 1 && full.rows() == 1 && subset.cols() == full.cols(), ErrorCode::kShapeMismatch,
          "subset_loss: expected two 1×D descriptors");
  return ag::add_const(ag::scale(ag::sum(ag::mul(subset, ag::detach(full))), -1.0), 1.0);
}

ag::Var distill_loss(const Matrix& teacher, ag::Var g2d, ag::Var g3d, double tau_d) {
  require(tau_d > 0, ErrorCode::kConfig, "distill_loss: temperature must be positive");
  const std::size_t b = g2d.rows();
  require(teacher.rows == b && g3d.rows() == b && b >= 1, ErrorCode::kShapeMismatch,
          "distill_loss: batch sizes disagree");
  Matrix p(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < teacher.cols; ++c) s += teacher(i, c) * teacher(j, c);
      p(i, j) = s / tau_d;
      mx = std::max(mx, p(i, j));
    }
    double z = 0.0;
    for (std::size_t j = 0; j < b; ++j) z += std::exp(p(i, j) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < b; ++j) p(i, j) = std::exp(p(i, j) - lz);
  }
  return ag::kl_div_rows(p, ag::scale(ag::matmul_nt(g2d, g3d), 1.0 / tau_d));
}

void clamp_temperature(ag::Parameter& tau) {
  for (double& v : tau.value.data) v = std::clamp(v, kTauMin, kTauMax);
}

}  // namespace pixpoint::global
