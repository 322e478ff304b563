#pragma once

// Localization accuracy, retrieval metrics, query directions and the
// held-out evaluation protocols.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pixpoint/model.hpp"
#include "pixpoint/pipeline.hpp"

namespace pixpoint::eval {

inline const std::vector<std::size_t> kDefaultKs{1, 2, 3, 5, 10};

/// Gallery rows ordered by descending dot product with `query`, ties to the lowest index.
std::vector<std::size_t> rank_by_similarity(std::span<const double> query, const Matrix& gallery);

struct LocAccResult {
  std::vector<std::size_t> ks;
  std::vector<double> scores;             // mean per k, percent
  std::vector<std::vector<double>> dstar;  // per query, per k
};

/// Scores ranked token lists against ground-truth coordinates.
LocAccResult loc_acc_from_rankings(const Matrix& gt, const std::vector<std::vector<std::size_t>>& rankings,
                                   const Matrix& centers, const std::vector<std::size_t>& ks, double bbox_edge);

/// Top-k by cosine similarity of unit descriptors, then loc_acc_from_rankings.
LocAccResult loc_acc(const Matrix& gt, const Matrix& desc2d, const Matrix& desc3d, const Matrix& centers,
                     const std::vector<std::size_t>& ks, double bbox_edge);

struct RetrievalResult {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // percent
  double mrr = 0.0;            // percent
  std::vector<std::size_t> first_correct_rank;  // 1-based, 0 when absent
};

RetrievalResult retrieval_eval(const Matrix& queries, const std::vector<int>& query_labels, const Matrix& gallery,
                               const std::vector<int>& gallery_labels, const std::vector<std::size_t>& ks);

/// Expected R@1 and MRR (percent) of a uniformly random gallery ranking.
struct Chance {
  double recall1 = 0.0;
  double mrr = 0.0;
};
Chance chance_levels(const std::vector<int>& query_labels, const std::vector<int>& gallery_labels);

enum class Protocol { kS1Random, kS4Random, kS4Ortho };

Protocol parse_protocol(const std::string& name);
const char* protocol_name(Protocol p);

/// View indices used for one object under a protocol; ortho uses the first
/// four axis views (front, right, back, left).
std::vector<std::size_t> protocol_views(Protocol p, std::size_t available, std::uint64_t seed);

/// Local descriptors of an object: every token and every valid cell of the given views.
struct ObjectDescriptors {
  Matrix tokens;                    // N × Dloc
  std::vector<std::size_t> views;
  std::vector<Matrix> cells;        // per view: valid cells × Dloc
  std::vector<std::vector<std::size_t>> cell_index;  // per view: cell id of each row

  /// Row of `cell` in view position `pos`, or npos.
  std::size_t row_of(std::size_t pos, std::size_t cell) const;
};

ObjectDescriptors describe_object(Model& model, const PreparedObject& obj, const std::vector<std::size_t>& views);

struct LocalEvalOptions {
  Protocol protocol = Protocol::kS4Random;
  std::size_t pixels_per_view = 20;
  std::vector<std::size_t> ks = kDefaultKs;
  std::uint64_t seed = 17;
};

struct LocalReport {
  LocAccResult model;
  LocAccResult baseline;  // random token ranking
  LocAccResult ceiling;   // tokens ranked by distance to the ground truth
  std::size_t queries = 0;
};

LocalReport evaluate_local(Model& model, const PreparedSet& data, const LocalEvalOptions& opts);

struct RetrievalReport {
  RetrievalResult result;
  Chance chance;
};

RetrievalReport evaluate_retrieval(Model& model, const PreparedSet& data, Protocol protocol, bool use_teacher,
                                   const std::vector<std::size_t>& ks, std::uint64_t seed);

struct Ranked {
  std::vector<std::size_t> index;
  std::vector<double> similarity;
};

/// Tokens ranked for a foreground pixel of `view`; background pixels throw.
Ranked query_2d_to_3d(Model& model, const PreparedObject& obj, std::size_t view, int row, int col);

struct PixelHit {
  std::size_t view = 0;
  std::size_t cell = 0;
  int row = 0;  // cell-center pixel
  int col = 0;
  double similarity = 0.0;
};

/// Valid cells of `views` ranked by similarity to a token.
std::vector<PixelHit> query_3d_to_2d(Model& model, const PreparedObject& obj, std::size_t token,
                                     const std::vector<std::size_t>& views);

/// Tokens of `other` ranked by similarity to token `token` of `obj`.
Ranked query_3d_to_3d(Model& model, const PreparedObject& obj, std::size_t token, const PreparedObject& other);

}  // namespace pixpoint::eval
