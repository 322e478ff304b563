#include "pixpoint/nn.hpp"

#include <cmath>

#include "pixpoint/error.hpp"

namespace pixpoint::nn {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.data) v = dist(rng);
  return m;
}

std::vector<Parameter*> Module::parameters() {
  std::vector<Parameter*> out;
  collect(out);
  return out;
}

Linear::Linear(std::string name, std::size_t in, std::size_t out, bool bias, Rng& rng)
    : weight_(name + ".w", gaussian(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias_(name + ".b", Matrix(1, out), false),
      has_bias_(bias) {}

Var Linear::forward(Graph& g, Var x) {
  require(x.cols() == in_dim(), ErrorCode::kShapeMismatch,
          weight_.name + ": expected input width " + std::to_string(in_dim()) + ", got " +
              std::to_string(x.cols()));
  Var y = ag::matmul(x, g.param(weight_));
  if (has_bias_) y = ag::add_row(y, g.param(bias_));
  return y;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

ResidualMlp::ResidualMlp(std::string name, std::size_t in, std::size_t width, std::size_t hidden,
                         std::size_t blocks, Rng& rng)
    : width_(width), project_(in != width) {
  if (project_) input_ = Linear(name + ".in", in, width, true, rng);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::string prefix = name + ".block" + std::to_string(b);
    Block blk{Linear(prefix + ".up", width, hidden, true, rng), Linear(prefix + ".down", hidden, width, true, rng)};
    blocks_.push_back(std::move(blk));
  }
}

Var ResidualMlp::forward(Graph& g, Var x) {
  Var h = project_ ? input_.forward(g, x) : x;
  for (Block& b : blocks_) {
    Var inner = b.down.forward(g, ag::silu(b.up.forward(g, ag::layer_norm(h))));
    h = ag::add(h, inner);
  }
  return h;
}

void ResidualMlp::collect(std::vector<Parameter*>& out) {
  if (project_) input_.collect(out);
  for (Block& b : blocks_) {
    b.up.collect(out);
    b.down.collect(out);
  }
}

AttentionBlock::AttentionBlock(std::string name, std::size_t dim, std::size_t heads, std::size_t ffn_hidden,
                               Rng& rng)
    : dim_(dim), heads_(heads) {
  require(heads > 0 && dim % heads == 0, ErrorCode::kInvalidArgument,
          "attention: dimension " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  q_ = Linear(name + ".q", dim, dim, true, rng);
  k_ = Linear(name + ".k", dim, dim, true, rng);
  v_ = Linear(name + ".v", dim, dim, true, rng);
  o_ = Linear(name + ".o", dim, dim, true, rng);
  ff_up_ = Linear(name + ".ff_up", dim, ffn_hidden, true, rng);
  ff_down_ = Linear(name + ".ff_down", ffn_hidden, dim, true, rng);
}

Var AttentionBlock::forward(Graph& g, Var tokens) {
  require(tokens.cols() == dim_, ErrorCode::kShapeMismatch, "attention: token width mismatch");
  const std::size_t head_dim = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var normed = ag::layer_norm(tokens);
  Var q = q_.forward(g, normed);
  Var k = k_.forward(g, normed);
  Var v = v_.forward(g, normed);
  std::vector<Var> heads;
  last_attention_.clear();
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    Var scores = ag::scale(ag::matmul_nt(ag::slice_cols(q, lo, hi), ag::slice_cols(k, lo, hi)), inv_sqrt);
    Var attn = ag::softmax_rows(scores);
    last_attention_.push_back(attn.value());
    heads.push_back(ag::matmul(attn, ag::slice_cols(v, lo, hi)));
  }
  Var mixed = heads.size() == 1 ? heads.front() : ag::concat_cols(heads);
  Var x1 = ag::add(tokens, o_.forward(g, mixed));
  Var ff = ff_down_.forward(g, ag::silu(ff_up_.forward(g, ag::layer_norm(x1))));
  return ag::add(x1, ff);
}

void AttentionBlock::collect(std::vector<Parameter*>& out) {
  for (Linear* l : {&q_, &k_, &v_, &o_, &ff_up_, &ff_down_}) l->collect(out);
}

}  // namespace pixpoint::nn
