#pragma once

// Global branch: view pooling, gated teacher fusion, 2D and 3D instance
// descriptors, and the global, subset-consistency and relational losses.

#include <cstddef>
#include <vector>

#include "pixpoint/nn.hpp"

namespace pixpoint::global {

inline constexpr double kLambdaContext = 0.5;
inline constexpr double kLambdaTeacher = 1.0;
inline constexpr double kTauMin = 0.005;
inline constexpr double kTauMax = 1.0;

struct PooledView {
  ag::Var token;  // 1×D
  bool valid = false;
};

/// Mean of the view's shared tokens; a zero row and valid = false when empty.
PooledView pool_view(ag::Graph& g, const ag::Var* tokens, std::size_t dim);

/// r_s = r̃_s + λ_c·U c_s + λ_d·γ_s ⊙ W_d d_s, γ_s = sigmoid(gate([r̃_s; W_d d_s])).
class Fusion : public nn::Module {
 public:
  Fusion() = default;
  Fusion(std::string name, std::size_t shared_dim, std::size_t context_dim, std::size_t teacher_dim, nn::Rng& rng);

  /// Rows are views. Without the teacher term the output is r̃ + λ_c·U c.
  ag::Var forward(ag::Graph& g, ag::Var pooled, ag::Var context, ag::Var teacher, bool use_teacher);
  /// Gate values of the last forward with the teacher term (views × D).
  const Matrix& last_gate() const { return last_gate_; }
  void collect(std::vector<ag::Parameter*>& out) override;

  nn::Linear& context_map() { return u_; }
  nn::Linear& teacher_map() { return wd_; }
  nn::Linear& gate() { return gate_; }

 private:
  nn::Linear u_, wd_, gate_;
  Matrix last_gate_;
};

/// Per-view residual refinement, pooling over valid views, projection, normalization.
class Global2d : public nn::Module {
 public:
  Global2d() = default;
  Global2d(std::string name, std::size_t shared_dim, std::size_t hidden, std::size_t out_dim, nn::Rng& rng);

  ag::Var refine(ag::Graph& g, ag::Var views);
  /// Mean over the given refined rows → projection → ℓ2 normalization (1×Dg).
  ag::Var describe(ag::Graph& g, ag::Var refined, const std::vector<std::size_t>& rows);
  /// Full pipeline; throws when no view is valid.
  ag::Var forward(ag::Graph& g, ag::Var views, const std::vector<char>& valid);
  void collect(std::vector<ag::Parameter*>& out) override;

 private:
  nn::ResidualMlp refine_;
  nn::Linear project_;
};

/// Self-attention + FFN over shared 3D tokens, mean pooling, projection, normalization.
class Global3d : public nn::Module {
 public:
  Global3d() = default;
  Global3d(std::string name, std::size_t shared_dim, std::size_t heads, std::size_t ffn_hidden, std::size_t out_dim,
           nn::Rng& rng);

  ag::Var forward(ag::Graph& g, ag::Var tokens);
  void collect(std::vector<ag::Parameter*>& out) override;
  nn::AttentionBlock& attention() { return attention_; }

 private:
  nn::AttentionBlock attention_;
  nn::Linear project_;
};

/// Symmetric InfoNCE over B matched rows with temperature `tau` (1×1).
ag::Var global_loss(ag::Var g2d, ag::Var g3d, ag::Var tau);

/// 1 − cos(subset, full) with the full descriptor held constant.
ag::Var subset_loss(ag::Var subset, ag::Var full);

/// KL(softmax(TTᵀ/τ_d) ‖ softmax(G2D·G3Dᵀ/τ_d)), averaged over rows; T is constant.
ag::Var distill_loss(const Matrix& teacher, ag::Var g2d, ag::Var g3d, double tau_d);

/// Clamps a temperature parameter into [kTauMin, kTauMax].
void clamp_temperature(ag::Parameter& tau);

}  // namespace pixpoint::global
