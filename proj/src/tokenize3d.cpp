#include "pixpoint/tokenize3d.hpp"

#include <cmath>
#include <numbers>

#include "pixpoint/error.hpp"
#include "pixpoint/kernels.hpp"

namespace pixpoint::tok3d {

namespace {

Matrix coordinates(const Matrix& points) {
  require(points.cols >= 3, ErrorCode::kShapeMismatch, "token field: points need xyz columns");
  Matrix xyz(points.rows, 3);
  for (std::size_t i = 0; i < points.rows; ++i)
    for (int a = 0; a < 3; ++a) xyz(i, a) = points(i, a);
  return xyz;
}

}  // namespace

std::vector<std::size_t> select_centers(const Matrix& points, std::size_t n3d) {
  require(n3d >= 1 && points.rows >= n3d, ErrorCode::kInvalidArgument,
          "select_centers: need at least " + std::to_string(n3d) + " points, got " + std::to_string(points.rows));
  const Matrix xyz = coordinates(points);
  return kernels::farthest_point_sampling(xyz, n3d, kernels::nearest_to_centroid(xyz));
}

Matrix encode_centers(const Matrix& centers) {
  Matrix code(centers.rows, kCenterCodeDim);
  for (std::size_t i = 0; i < centers.rows; ++i) {
    std::size_t c = 0;
    for (int a = 0; a < 3; ++a) code(i, c++) = centers(i, a) - 0.5;
    for (std::size_t f = 0; f < kCenterFrequencies; ++f) {
      const double w = std::numbers::pi * static_cast<double>(1u << f);
      for (int a = 0; a < 3; ++a) {
        code(i, c++) = std::sin(w * centers(i, a));
        code(i, c++) = std::cos(w * centers(i, a));
      }
    }
  }
  return code;
}

TokenField build_token_field(const Matrix& points, std::size_t n3d, std::size_t k) {
  require(points.cols == 6, ErrorCode::kShapeMismatch, "build_token_field: expected N×6 oriented points");
  require(k >= 1 && k <= points.rows, ErrorCode::kInvalidArgument, "build_token_field: bad neighborhood size");
  TokenField field;
  field.k = k;
  field.center_index = select_centers(points, n3d);
  const Matrix xyz = coordinates(points);
  field.centers = Matrix(n3d, 3);
  for (std::size_t n = 0; n < n3d; ++n)
    for (int a = 0; a < 3; ++a) field.centers(n, a) = xyz(field.center_index[n], a);
  const auto nbrs = kernels::knn(xyz, field.centers, k);
  field.neighborhoods = Matrix(n3d * k, 6);
  for (std::size_t n = 0; n < n3d; ++n)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t p = nbrs[n][j];
      double* row = field.neighborhoods.row(n * k + j).data();
      for (int a = 0; a < 3; ++a) {
        row[a] = points(p, a) - field.centers(n, a);
        row[3 + a] = points(p, 3 + a);
      }
    }
  field.center_code = encode_centers(field.centers);
  return field;
}

SetEncoder::SetEncoder(std::string name, const SetEncoderConfig& cfg, nn::Rng& rng)
    : cfg_(cfg),
      point1_(name + ".point1", 6, cfg.point_width, true, rng),
      point2_(name + ".point2", cfg.point_width, cfg.point_width, true, rng),
      token1_(name + ".token1", 2 * cfg.point_width + kCenterCodeDim, cfg.hidden, true, rng),
      token2_(name + ".token2", cfg.hidden, cfg.out_dim, true, rng) {}

ag::Var SetEncoder::forward(ag::Graph& g, const TokenField& field) {
  require(field.k > 0 && field.neighborhoods.rows == field.tokens() * field.k, ErrorCode::kShapeMismatch,
          "set encoder: neighborhoods not populated");
  ag::Var pts = g.constant(field.neighborhoods);
  ag::Var h = point2_.forward(g, ag::silu(point1_.forward(g, pts)));
  ag::Var pooled = ag::concat_cols(
      {ag::segment_max(h, field.k), ag::segment_mean(h, field.k), g.constant(field.center_code)});
  return token2_.forward(g, ag::silu(token1_.forward(g, pooled)));
}

void SetEncoder::collect(std::vector<ag::Parameter*>& out) {
  point1_.collect(out);
  point2_.collect(out);
  token1_.collect(out);
  token2_.collect(out);
}

}  // namespace pixpoint::tok3d
