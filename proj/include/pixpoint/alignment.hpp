#pragma once

// Local branch: geometric positive assignment and the bidirectional weighted
// InfoNCE with spatial negative exclusion and hard negatives.

#include <cstddef>
#include <vector>

#include "pixpoint/nn.hpp"

namespace pixpoint::align {

struct LocalLossConfig {
  double sigma = 0.05;
  double tau = 0.07;
  double delta = 0.02;
  std::size_t hard_k = 0;  // 0 disables the hard-negative term
  double hard_weight = 0.0;
};

void validate(const LocalLossConfig& cfg);

struct Assignment {
  std::size_t queries = 0;
  std::size_t tokens = 0;
  std::vector<std::size_t> positive;  // n*(m)
  std::vector<double> weight;         // w_m
  std::vector<double> distance;       // ‖q_m − p_n*‖
  /// M×N row-major; 1 where token n may appear in query m's softmax (its
  /// positive, or a token at distance ≥ δ).
  std::vector<char> allowed;

  bool is_allowed(std::size_t m, std::size_t n) const { return allowed[m * tokens + n] != 0; }
};

/// Nearest center per query (lowest index on ties), Gaussian weight and exclusion mask.
Assignment assign(const Matrix& queries, const Matrix& centers, const LocalLossConfig& cfg);

/// ℓ2-normalized linear head.
ag::Var project_local(ag::Graph& g, nn::Linear& head, ag::Var h);

/// Indices of the `k` largest entries of `scores` among `candidates`,
/// ordered by (score descending, index ascending).
std::vector<std::size_t> top_k(const std::vector<double>& scores, const std::vector<std::size_t>& candidates,
                               std::size_t k);

struct LocalLoss {
  ag::Var total;
  bool skipped = false;
  double forward = 0.0;       // 2D→3D soft term
  double reverse = 0.0;       // 3D→2D multi-positive term
  double hard_forward = 0.0;
  double hard_reverse = 0.0;
};

/// ½[(L_2D→3D + h·H_2D→3D) + (L_3D→2D + h·H_3D→2D)], each direction a weighted
/// mean. Empty query sets return skipped with a zero constant.
LocalLoss local_loss(ag::Graph& g, ag::Var desc2d, ag::Var desc3d, const Assignment& a, const LocalLossConfig& cfg);

}  // namespace pixpoint::align
