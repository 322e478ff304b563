#pragma once

// Trainable building blocks on top of the autograd tape.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "pixpoint/autograd.hpp"

namespace pixpoint::nn {

using ag::Graph;
using ag::Parameter;
using ag::Var;
using Rng = std::mt19937_64;

/// Gaussian matrix with the given standard deviation.
Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(std::vector<Parameter*>& out) = 0;
  std::vector<Parameter*> parameters();
};

class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, bool bias, Rng& rng);

  Var forward(Graph& g, Var x);
  void collect(std::vector<Parameter*>& out) override;

  std::size_t in_dim() const { return weight_.value.rows; }
  std::size_t out_dim() const { return weight_.value.cols; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
  bool has_bias_ = false;
};

/// Input projection followed by pre-norm residual blocks
/// y = x + W2·silu(W1·LN(x) + b1) + b2.
class ResidualMlp : public Module {
 public:
  ResidualMlp() = default;
  ResidualMlp(std::string name, std::size_t in, std::size_t width, std::size_t hidden, std::size_t blocks,
              Rng& rng);

  Var forward(Graph& g, Var x);
  void collect(std::vector<Parameter*>& out) override;
  std::size_t out_dim() const { return width_; }

 private:
  struct Block {
    Linear up;
    Linear down;
  };
  std::size_t width_ = 0;
  bool project_ = false;
  Linear input_;
  std::vector<Block> blocks_;
};

/// Pre-norm transformer block: multi-head self-attention and a feed-forward
/// network, each wrapped in a residual connection.
class AttentionBlock : public Module {
 public:
  AttentionBlock() = default;
  AttentionBlock(std::string name, std::size_t dim, std::size_t heads, std::size_t ffn_hidden, Rng& rng);

  Var forward(Graph& g, Var tokens);
  /// Attention weights of the last forward pass, one N×N matrix per head.
  const std::vector<Matrix>& last_attention() const { return last_attention_; }
  void collect(std::vector<Parameter*>& out) override;

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 0;
  Linear q_, k_, v_, o_, ff_up_, ff_down_;
  std::vector<Matrix> last_attention_;
};

}  // namespace pixpoint::nn
