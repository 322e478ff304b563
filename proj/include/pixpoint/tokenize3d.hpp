#pragma once

// 3D side: token centers by FPS, kNN neighborhoods and the trainable set encoder.

#include <cstddef>
#include <vector>

#include "pixpoint/nn.hpp"

namespace pixpoint::tok3d {

struct TokenField {
  Matrix centers;                        // N3d × 3
  std::vector<std::size_t> center_index;  // row of each center in the source cloud
  /// (N3d·k) × 6: point − center ⊕ normal, token-major, neighbors sorted by distance.
  Matrix neighborhoods;
  std::size_t k = 0;
  /// N3d × positional_dim fixed encoding of the centers.
  Matrix center_code;

  std::size_t tokens() const { return centers.rows; }
};

/// FPS over the coordinate columns of `points` (N×3 or N×6), first pick
/// nearest the centroid. Returns indices in selection order.
std::vector<std::size_t> select_centers(const Matrix& points, std::size_t n3d);

inline constexpr std::size_t kCenterFrequencies = 5;
inline constexpr std::size_t kCenterCodeDim = 3 + 6 * kCenterFrequencies;

/// Centered coordinates followed by sin/cos at octave frequencies.
Matrix encode_centers(const Matrix& centers);

TokenField build_token_field(const Matrix& points, std::size_t n3d, std::size_t k);

struct SetEncoderConfig {
  std::size_t point_width = 64;
  std::size_t hidden = 128;
  std::size_t out_dim = 64;  // Dvae
};

/// Per-point perceptron → max-pool ⊕ mean-pool ⊕ center code → perceptron.
class SetEncoder : public nn::Module {
 public:
  SetEncoder() = default;
  SetEncoder(std::string name, const SetEncoderConfig& cfg, nn::Rng& rng);

  /// Returns N3d × Dvae latents.
  ag::Var forward(ag::Graph& g, const TokenField& field);
  void collect(std::vector<ag::Parameter*>& out) override;
  std::size_t out_dim() const { return cfg_.out_dim; }

 private:
  SetEncoderConfig cfg_;
  nn::Linear point1_, point2_, token1_, token2_;
};

}  // namespace pixpoint::tok3d
