#include "pixpoint/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pixpoint/error.hpp"

namespace pixpoint::align {

void validate(const LocalLossConfig& cfg) {
  require(cfg.sigma > 0 && cfg.tau > 0 && cfg.delta >= 0 && cfg.hard_weight >= 0, ErrorCode::kConfig,
          "local loss: sigma and tau must be positive, delta and hard_weight non-negative");
}

Assignment assign(const Matrix& queries, const Matrix& centers, const LocalLossConfig& cfg) {
  validate(cfg);
  require(centers.rows >= 1, ErrorCode::kInvalidArgument, "assign: no tokens");
  require(queries.cols == 3 && centers.cols == 3, ErrorCode::kShapeMismatch, "assign: expected xyz rows");
  Assignment a;
  a.queries = queries.rows;
  a.tokens = centers.rows;
  a.positive.resize(a.queries);
  a.weight.resize(a.queries);
  a.distance.resize(a.queries);
  a.allowed.assign(a.queries * a.tokens, 0);
  const double two_sigma2 = 2.0 * cfg.sigma * cfg.sigma;
  std::vector<double> dist(a.tokens);
  for (std::size_t m = 0; m < a.queries; ++m) {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < a.tokens; ++n) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double diff = queries(m, c) - centers(n, c);
        d2 += diff * diff;
      }
      dist[n] = std::sqrt(d2);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = n;
      }
    }
    a.positive[m] = best;
    a.distance[m] = dist[best];
    a.weight[m] = std::exp(-best_d2 / two_sigma2);
    for (std::size_t n = 0; n < a.tokens; ++n) a.allowed[m * a.tokens + n] = (n == best || dist[n] >= cfg.delta);
  }
  return a;
}

ag::Var project_local(ag::Graph& g, nn::Linear& head, ag::Var h) {
  return ag::l2_normalize_rows(head.forward(g, h));
}

std::vector<std::size_t> top_k(const std::vector<double>& scores, const std::vector<std::size_t>& candidates,
                               std::size_t k) {
  std::vector<std::size_t> out = candidates;
  const auto better = [&](std::size_t x, std::size_t y) {
    return scores[x] > scores[y] || (scores[x] == scores[y] && x < y);
  };
  const std::size_t keep = std::min(k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(), better);
  out.resize(keep);
  return out;
}

namespace {

// Weighted mean of `per_row` (n×1) with weights normalized to sum one.
ag::Var weighted_mean(ag::Var per_row, std::vector<double> w) {
  double total = 0.0;
  for (double v : w) total += v;
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0);
    total = static_cast<double>(w.size());
  }
  for (double& v : w) v /= total;
  return ag::weighted_sum(per_row, w);
}

}  // namespace

LocalLoss local_loss(ag::Graph& g, ag::Var desc2d, ag::Var desc3d, const Assignment& a, const LocalLossConfig& cfg) {
  validate(cfg);
  LocalLoss out;
  if (a.queries == 0) {
    out.skipped = true;
    out.total = g.constant(Matrix(1, 1));
    return out;
  }
  require(desc2d.rows() == a.queries && desc3d.rows() == a.tokens && desc2d.cols() == desc3d.cols(),
          ErrorCode::kShapeMismatch, "local_loss: descriptor shapes disagree with the assignment");
  const std::size_t M = a.queries, N = a.tokens;
  ag::Var sim = ag::scale(ag::matmul_nt(desc2d, desc3d), 1.0 / cfg.tau);  // M×N
  const Matrix& s = sim.value();

  // 2D→3D: per query over its positive and the allowed negatives.
  std::vector<std::pair<std::size_t, std::size_t>> pos_entries(M);
  for (std::size_t m = 0; m < M; ++m) pos_entries[m] = {m, a.positive[m]};
  ag::Var pos = ag::pick(sim, pos_entries);
  ag::Var fwd_rows = ag::sub(ag::masked_logsumexp_rows(sim, a.allowed), pos);
  ag::Var fwd = weighted_mean(fwd_rows, a.weight);

  // 3D→2D: tokens with at least one assigned query, multi-positive numerator.
  std::vector<std::vector<std::size_t>> members(N);
  for (std::size_t m = 0; m < M; ++m) members[a.positive[m]].push_back(m);
  std::vector<std::size_t> active;
  std::vector<double> token_w;
  for (std::size_t n = 0; n < N; ++n) {
    if (members[n].empty()) continue;
    active.push_back(n);
    double w = 0.0;
    for (std::size_t m : members[n]) w += a.weight[m];
    token_w.push_back(w / static_cast<double>(members[n].size()));
  }
  ag::Var sim_t = ag::gather_rows(ag::transpose(sim), active);  // |active|×M
  std::vector<char> pos_mask(active.size() * M, 0), all_mask(active.size() * M, 0);
  for (std::size_t i = 0; i < active.size(); ++i) {
    const std::size_t n = active[i];
    for (std::size_t m = 0; m < M; ++m) all_mask[i * M + m] = a.is_allowed(m, n) || a.positive[m] == n;
    for (std::size_t m : members[n]) pos_mask[i * M + m] = 1;
  }
  ag::Var rev_rows = ag::sub(ag::masked_logsumexp_rows(sim_t, all_mask), ag::masked_logsumexp_rows(sim_t, pos_mask));
  ag::Var rev = weighted_mean(rev_rows, token_w);

  ag::Var fwd_total = fwd, rev_total = rev;
  out.forward = fwd.scalar();
  out.reverse = rev.scalar();
  if (cfg.hard_k > 0 && cfg.hard_weight > 0) {
    std::vector<char> hard_fwd(M * N, 0);
    std::vector<double> scores(N);
    std::vector<std::size_t> cand;
    for (std::size_t m = 0; m < M; ++m) {
      cand.clear();
      for (std::size_t n = 0; n < N; ++n) {
        scores[n] = s(m, n);
        if (n != a.positive[m] && a.is_allowed(m, n)) cand.push_back(n);
      }
      hard_fwd[m * N + a.positive[m]] = 1;
      for (std::size_t n : top_k(scores, cand, cfg.hard_k)) hard_fwd[m * N + n] = 1;
    }
    ag::Var hf = weighted_mean(ag::sub(ag::masked_logsumexp_rows(sim, hard_fwd), pos), a.weight);

    std::vector<char> hard_rev = pos_mask;
    std::vector<double> qscores(M);
    for (std::size_t i = 0; i < active.size(); ++i) {
      const std::size_t n = active[i];
      cand.clear();
      for (std::size_t m = 0; m < M; ++m) {
        qscores[m] = s(m, n);
        if (a.positive[m] != n && a.is_allowed(m, n)) cand.push_back(m);
      }
      for (std::size_t m : top_k(qscores, cand, cfg.hard_k)) hard_rev[i * M + m] = 1;
    }
    ag::Var hr = weighted_mean(
        ag::sub(ag::masked_logsumexp_rows(sim_t, hard_rev), ag::masked_logsumexp_rows(sim_t, pos_mask)), token_w);
    out.hard_forward = hf.scalar();
    out.hard_reverse = hr.scalar();
    fwd_total = ag::add(fwd, ag::scale(hf, cfg.hard_weight));
    rev_total = ag::add(rev, ag::scale(hr, cfg.hard_weight));
  }
  out.total = ag::scale(ag::add(fwd_total, rev_total), 0.5);
  return out;
}

}  // namespace pixpoint::align
