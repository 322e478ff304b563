#pragma once

// The full dual-branch model: trainable modules, parameter groups and the
// per-instance forward pieces shared by training, evaluation and transfer.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pixpoint/globalbranch.hpp"
#include "pixpoint/nn.hpp"
#include "pixpoint/optim.hpp"
#include "pixpoint/tokenize2d.hpp"
#include "pixpoint/tokenize3d.hpp"

namespace pixpoint {

struct ModelConfig {
  std::size_t f2d = 96;
  std::size_t dc = 16;
  std::size_t dt = 32;
  std::size_t dsh = 64;
  std::size_t dloc = 48;
  std::size_t dg = 64;
  std::size_t dvae = 64;
  std::size_t n3d = 128;
  std::size_t k_neighbors = 16;
  std::size_t m_max = 128;
  std::size_t mlp_hidden = 128;
  std::size_t mlp_blocks = 2;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 128;
  std::size_t point_width = 64;
  std::size_t patch = 8;
  double backbone_frequency = 6.0;
  double tau_g_init = 0.07;
  std::uint64_t seed = 1;
  std::uint64_t backbone_seed = 11;
  std::uint64_t teacher_seed = 23;
};

void validate(const ModelConfig& cfg);

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }

  /// Shared 2D tokens for feature rows x (n×F2d) with matching context rows (n×Dc).
  ag::Var shared2d(ag::Graph& g, const Matrix& x, const Matrix& context);
  /// Set-encoder latents → shared 3D tokens.
  ag::Var latents(ag::Graph& g, const tok3d::TokenField& field);
  ag::Var shared3d(ag::Graph& g, ag::Var latents);
  ag::Var local2d(ag::Graph& g, ag::Var shared);
  ag::Var local3d(ag::Graph& g, ag::Var shared);

  global::Fusion& fusion() { return fusion_; }
  global::Global2d& global2d() { return global2d_; }
  global::Global3d& global3d() { return global3d_; }
  ag::Parameter& tau_g() { return tau_g_; }

  /// Parameters of the four optimizer groups: shared, local, global, vae3d.
  std::vector<ag::Parameter*> group(const std::string& name);
  std::vector<ag::Parameter*> parameters();
  ag::Parameter* find(const std::string& name);

  /// Re-draws the global-branch parameters from the config seed.
  void reset_global();

 private:
  ModelConfig cfg_;
  tok3d::SetEncoder vae_;
  nn::ResidualMlp f2d_, f3d_;
  nn::Linear head2d_, head3d_;
  global::Fusion fusion_;
  global::Global2d global2d_;
  global::Global3d global3d_;
  ag::Parameter tau_g_;
};

}  // namespace pixpoint
