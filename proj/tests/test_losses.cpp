#include <cmath>
#include <numeric>

#include "doctest.h"
#include "pixpoint/alignment.hpp"
#include "pixpoint/error.hpp"
#include "pixpoint/globalbranch.hpp"
#include "support.hpp"

using namespace pixpoint;

namespace {

Matrix unit_rows(Matrix m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double n = 0.0;
    for (double v : m.row(r)) n += v * v;
    for (double& v : m.row(r)) v /= std::sqrt(n);
  }
  return m;
}

double dot(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols; ++c) s += a(i, c) * b(j, c);
  return s;
}

double lse(const std::vector<double>& v) {
  double mx = -INFINITY, s = 0.0;
  for (double x : v) mx = std::max(mx, x);
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

TEST_CASE("assign picks the nearest center with a Gaussian weight and an exclusion mask") {
  std::mt19937_64 rng(1);
  align::LocalLossConfig cfg;
  cfg.sigma = 0.2;
  cfg.delta = 0.3;
  const Matrix q = testing::random_matrix(25, 3, rng), c = testing::random_matrix(12, 3, rng);
  const auto a = align::assign(q, c, cfg);
  for (std::size_t m = 0; m < q.rows; ++m) {
    std::vector<double> d(c.rows);
    for (std::size_t n = 0; n < c.rows; ++n) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += (q(m, k) - c(n, k)) * (q(m, k) - c(n, k));
      d[n] = std::sqrt(s);
    }
    const auto best = static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
    CHECK(a.positive[m] == best);
    CHECK(a.weight[m] == doctest::Approx(std::exp(-d[best] * d[best] / (2 * 0.04))));
    for (std::size_t n = 0; n < c.rows; ++n) CHECK(a.is_allowed(m, n) == (n == best || d[n] >= cfg.delta));
  }
}

TEST_CASE("top_k orders by score then index") {
  const std::vector<double> s{0.5, 0.9, 0.5, 0.1, 0.9};
  CHECK(align::top_k(s, {0, 1, 2, 3, 4}, 3) == std::vector<std::size_t>{1, 4, 0});
  CHECK(align::top_k(s, {3, 2}, 5) == std::vector<std::size_t>{2, 3});
}

TEST_CASE("local loss terms match a brute-force evaluation") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    align::LocalLossConfig cfg;
    cfg.sigma = 0.3;
    cfg.delta = 0.2;
    cfg.tau = 0.1 + 0.05 * trial;
    cfg.hard_k = 2;
    cfg.hard_weight = 0.5;
    const std::size_t M = 6 + trial, N = 5;
    const Matrix q = testing::random_matrix(M, 3, rng), c = testing::random_matrix(N, 3, rng);
    const Matrix d2 = unit_rows(testing::random_matrix(M, 4, rng)), d3 = unit_rows(testing::random_matrix(N, 4, rng));
    const auto a = align::assign(q, c, cfg);
    ag::Graph g;
    const auto loss = align::local_loss(g, g.input(d2), g.input(d3), a, cfg);

    double fwd = 0.0, wsum = 0.0, hf = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      std::vector<double> allowed, hard{dot(d2, m, d3, a.positive[m]) / cfg.tau};
      std::vector<std::pair<double, std::size_t>> neg;
      for (std::size_t n = 0; n < N; ++n) {
        if (!a.is_allowed(m, n)) continue;
        allowed.push_back(dot(d2, m, d3, n) / cfg.tau);
        if (n != a.positive[m]) neg.push_back({-dot(d2, m, d3, n), n});
      }
      std::sort(neg.begin(), neg.end());
      for (std::size_t i = 0; i < std::min<std::size_t>(2, neg.size()); ++i) hard.push_back(-neg[i].first / cfg.tau);
      const double p = dot(d2, m, d3, a.positive[m]) / cfg.tau;
      fwd += a.weight[m] * (lse(allowed) - p);
      hf += a.weight[m] * (lse(hard) - p);
      wsum += a.weight[m];
    }
    fwd /= wsum;
    hf /= wsum;

    double rev = 0.0, tw = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      std::vector<double> pos, all;
      double w = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        const double s = dot(d2, m, d3, n) / cfg.tau;
        if (a.positive[m] == n) {
          pos.push_back(s);
          w += a.weight[m];
        }
        if (a.positive[m] == n || a.is_allowed(m, n)) all.push_back(s);
      }
      if (pos.empty()) continue;
      w /= static_cast<double>(pos.size());
      rev += w * (lse(all) - lse(pos));
      tw += w;
    }
    rev /= tw;
    CHECK(loss.forward == doctest::Approx(fwd).epsilon(1e-12));
    CHECK(loss.reverse == doctest::Approx(rev).epsilon(1e-12));
    CHECK(loss.hard_forward == doctest::Approx(hf).epsilon(1e-12));
    CHECK(loss.total.scalar() ==
          doctest::Approx(0.5 * (fwd + rev + 0.5 * (loss.hard_forward + loss.hard_reverse))).epsilon(1e-12));
  }
}

TEST_CASE("local loss on an empty query set is skipped") {
  ag::Graph g;
  align::LocalLossConfig cfg;
  const auto a = align::assign(Matrix(0, 3), Matrix(2, 3), cfg);
  const auto loss = align::local_loss(g, g.input(Matrix(0, 4)), g.input(Matrix(2, 4)), a, cfg);
  CHECK(loss.skipped);
  CHECK(loss.total.scalar() == 0.0);
}

TEST_CASE("local loss config validation") {
  align::LocalLossConfig cfg;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(align::validate(cfg), Error);
}

TEST_CASE("global loss matches symmetric cross-entropy") {
  std::mt19937_64 rng(3);
  const std::size_t B = 5;
  const Matrix a = unit_rows(testing::random_matrix(B, 6, rng)), b = unit_rows(testing::random_matrix(B, 6, rng));
  const double tau = 0.2;
  ag::Graph g;
  const double v = global::global_loss(g.input(a), g.input(b), g.constant(Matrix(1, 1, tau))).scalar();
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<double> r, c;
    for (std::size_t j = 0; j < B; ++j) {
      r.push_back(dot(a, i, b, j) / tau);
      c.push_back(dot(a, j, b, i) / tau);
    }
    rows += lse(r) - dot(a, i, b, i) / tau;
    cols += lse(c) - dot(a, i, b, i) / tau;
  }
  CHECK(v == doctest::Approx(0.5 * (rows + cols) / B).epsilon(1e-12));
}

TEST_CASE("subset loss is one minus cosine and zero on identical descriptors") {
  ag::Graph g;
  const Matrix a(1, 2, std::vector<double>{1, 0}), b(1, 2, std::vector<double>{std::sqrt(0.5), std::sqrt(0.5)});
  CHECK(global::subset_loss(g.input(a), g.input(b)).scalar() == doctest::Approx(1 - std::sqrt(0.5)));
  ag::Graph h;
  CHECK(global::subset_loss(h.input(a), h.input(a)).scalar() == doctest::Approx(0.0));
}

TEST_CASE("distillation KL matches a brute-force KL") {
  std::mt19937_64 rng(4);
  const std::size_t B = 4;
  const Matrix t = unit_rows(testing::random_matrix(B, 5, rng));
  const Matrix a = unit_rows(testing::random_matrix(B, 3, rng)), b = unit_rows(testing::random_matrix(B, 3, rng));
  const double tau = 0.3;
  ag::Graph g;
  const double v = global::distill_loss(t, g.input(a), g.input(b), tau).scalar();
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<double> lt, ls;
    for (std::size_t j = 0; j < B; ++j) {
      lt.push_back(dot(t, i, t, j) / tau);
      ls.push_back(dot(a, i, b, j) / tau);
    }
    const double zt = lse(lt), zs = lse(ls);
    for (std::size_t j = 0; j < B; ++j) total += std::exp(lt[j] - zt) * ((lt[j] - zt) - (ls[j] - zs));
  }
  CHECK(v == doctest::Approx(total / B).epsilon(1e-12));
}

TEST_CASE("temperature clamp keeps the range") {
  ag::Parameter tau("tau", Matrix(1, 1, 1e-4), false);
  global::clamp_temperature(tau);
  CHECK(tau.value(0, 0) == global::kTauMin);
  tau.value(0, 0) = 3.0;
  global::clamp_temperature(tau);
  CHECK(tau.value(0, 0) == global::kTauMax);
}

TEST_CASE("view pooling marks empty views invalid") {
  ag::Graph g;
  const auto empty = global::pool_view(g, nullptr, 4);
  CHECK_FALSE(empty.valid);
  CHECK(empty.token.value() == Matrix(1, 4));
  ag::Var t = g.input(Matrix(2, 4, std::vector<double>{1, 2, 3, 4, 3, 2, 1, 0}));
  const auto p = global::pool_view(g, &t, 4);
  CHECK(p.valid);
  CHECK(p.token.value() == Matrix(1, 4, std::vector<double>{2, 2, 2, 2}));
}
