#include <cmath>

#include "doctest.h"
#include "pixpoint/autograd.hpp"
#include "pixpoint/error.hpp"
#include "pixpoint/gradcheck.hpp"
#include "pixpoint/nn.hpp"
#include "pixpoint/optim.hpp"
#include "support.hpp"

using namespace pixpoint;
namespace ag = pixpoint::ag;

namespace {

double check_unary(ag::Var (*op)(ag::Var), std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const Matrix w = testing::random_matrix(4, 5, rng);
  return check_gradients(
             [&](ag::Graph& g, const std::vector<ag::Var>& in) {
               return ag::sum(ag::mul(op(in[0]), g.constant(w)));
             },
             {testing::random_matrix(4, 5, rng, lo, hi)}, {})
      .max_rel_error;
}

}  // namespace

TEST_CASE("element-wise ops pass finite differences") {
  std::mt19937_64 rng(1);
  CHECK(check_unary(ag::silu, rng) < 1e-6);
  CHECK(check_unary(ag::sigmoid, rng) < 1e-6);
  CHECK(check_unary(ag::tanh, rng) < 1e-6);
  CHECK(check_unary(ag::exp, rng) < 1e-6);
  CHECK(check_unary(ag::log, rng, 0.5, 2.0) < 1e-6);
  CHECK(check_unary(ag::softmax_rows, rng) < 1e-6);
  CHECK(check_unary(ag::log_softmax_rows, rng) < 1e-6);
  CHECK(check_unary([](ag::Var a) { return ag::layer_norm(a); }, rng) < 1e-5);
  CHECK(check_unary([](ag::Var a) { return ag::l2_normalize_rows(a); }, rng) < 1e-6);
}

TEST_CASE("binary and reduction ops pass finite differences") {
  std::mt19937_64 rng(2);
  const auto build = [](ag::Graph& g, const std::vector<ag::Var>& in) {
    ag::Var prod = ag::matmul(in[0], in[1]);                      // 4x3
    ag::Var nt = ag::matmul_nt(prod, in[2]);                      // 4x2
    ag::Var row = ag::mean_rows(in[0]);                           // 1x5
    ag::Var r = ag::add_row(ag::mul_row(in[0], row), row);        // 4x5
    ag::Var seg = ag::segment_max(ag::concat_rows({r, r}), 2);    // 4x5
    ag::Var segm = ag::segment_mean(in[0], 2);                    // 2x5
    ag::Var sc = ag::div_scalar(ag::mul_scalar(nt, ag::slice_cols(ag::gather_rows(in[0], {1}), 0, 1)),
                                ag::add_const(ag::exp(ag::slice_cols(ag::gather_rows(in[0], {2}), 3, 4)), 1.0));
    ag::Var cat = ag::concat_cols({sc, ag::scale(ag::sub(prod, ag::broadcast_rows(ag::mean_rows(prod), 4)), 0.5)});
    ag::Var mask_lse = ag::masked_logsumexp_rows(cat, std::vector<char>(20, 1));
    ag::Var kl = ag::kl_div_rows(Matrix(4, 5, 0.2), cat);
    ag::Var picked = ag::pick(seg, {{0, 0}, {3, 4}});
    return ag::add(ag::add(ag::sum(mask_lse), kl),
                   ag::add(ag::sum(ag::mul(picked, picked)),
                           ag::add(ag::sum(ag::tanh(segm)), ag::weighted_sum(ag::slice_cols(prod, 0, 1), {1, -2, 3, 0.5}))));
    (void)g;
  };
  const auto res = check_gradients(build,
                                   {testing::random_matrix(4, 5, rng), testing::random_matrix(5, 3, rng),
                                    testing::random_matrix(2, 3, rng)},
                                   {});
  CHECK(res.max_rel_error < 1e-5);
  CHECK(res.entries == 20 + 15 + 6);
}

TEST_CASE("parameters receive gradients through Graph::param") {
  std::mt19937_64 rng(3);
  nn::Linear lin("lin", 5, 3, true, rng);
  auto params = lin.parameters();
  const auto res = check_gradients(
      [&](ag::Graph& g, const std::vector<ag::Var>& in) { return ag::sum(ag::silu(lin.forward(g, in[0]))); },
      {testing::random_matrix(6, 5, rng)}, params);
  CHECK(res.max_rel_error < 1e-6);
  CHECK(res.entries == 30 + 15 + 3);
}

TEST_CASE("softmax rows sum to one and detach blocks gradients") {
  std::mt19937_64 rng(4);
  ag::Graph g;
  ag::Var x = g.input(testing::random_matrix(3, 6, rng, -30, 30));
  const Matrix s = ag::softmax_rows(x).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (double v : s.row(r)) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
  ag::Var loss = ag::sum(ag::add(ag::detach(x), ag::scale(x, 2.0)));
  g.backward(loss);
  for (double v : g.grad(x).data) CHECK(v == 2.0);
}

TEST_CASE("a consumed graph refuses new operations") {
  ag::Graph g;
  ag::Var x = g.input(Matrix(1, 1, 2.0));
  ag::Var y = ag::sum(ag::mul(x, x));
  g.backward(y);
  CHECK(g.consumed());
  CHECK(g.grad(x).data[0] == doctest::Approx(4.0));
  try {
    ag::mul(x, x);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kGraphConsumed);
  }
}

TEST_CASE("shape mismatches raise typed errors") {
  ag::Graph g;
  ag::Var a = g.input(Matrix(2, 3)), b = g.input(Matrix(2, 3));
  try {
    ag::matmul(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("normalizing a zero row hits the floor and is counted") {
  ag::Graph g;
  Matrix m(2, 3, 0.0);
  m(1, 0) = 3.0;
  const Matrix out = ag::l2_normalize_rows(g.constant(m)).value();
  CHECK(g.normalization_floor_hits() == 1);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("AdamW under a constant gradient matches the closed form") {
  // m̂ = g and v̂ = g² at every step, so each update is lr·g/(|g|+eps) after decay.
  optim::AdamWConfig cfg;
  optim::AdamW opt(cfg);
  ag::Parameter decayed("w", Matrix(1, 2, std::vector<double>{0.5, -1.5}));
  ag::Parameter plain("b", Matrix(1, 1, 0.25), false);
  const double lr = 0.01, ga = 0.3, gb = -2.0;
  double w0 = 0.5, w1 = -1.5, b = 0.25;
  for (int t = 0; t < 25; ++t) {
    decayed.grad = Matrix(1, 2, std::vector<double>{ga, gb});
    plain.grad = Matrix(1, 1, gb);
    opt.step({{"g1", {&decayed}, 1.0}, {"g2", {&plain}, 0.5}}, lr);
    w0 = w0 * (1 - lr * cfg.weight_decay) - lr * ga / (std::abs(ga) + cfg.eps);
    w1 = w1 * (1 - lr * cfg.weight_decay) - lr * gb / (std::abs(gb) + cfg.eps);
    b = b - 0.5 * lr * gb / (std::abs(gb) + cfg.eps);
  }
  CHECK(decayed.value(0, 0) == doctest::Approx(w0).epsilon(1e-12));
  CHECK(decayed.value(0, 1) == doctest::Approx(w1).epsilon(1e-12));
  CHECK(plain.value(0, 0) == doctest::Approx(b).epsilon(1e-12));
  CHECK(opt.state().at("w").steps == 25);
}

TEST_CASE("AdamW first step on a varying gradient matches a hand computation") {
  optim::AdamW opt;
  ag::Parameter p("p", Matrix(1, 1, 1.0));
  p.grad = Matrix(1, 1, 0.2);
  opt.step({{"g", {&p}, 1.0}}, 0.1);
  p.grad = Matrix(1, 1, -0.4);
  opt.step({{"g", {&p}, 1.0}}, 0.1);
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? 0.2 : -0.4;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w = w * (1 - 0.1 * 0.01) - 0.1 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(p.value(0, 0) == doctest::Approx(w).epsilon(1e-14));
}

TEST_CASE("global norm clipping rescales only above the limit") {
  ag::Parameter a("a", Matrix(1, 2)), b("b", Matrix(1, 1));
  a.grad = Matrix(1, 2, std::vector<double>{3.0, 0.0});
  b.grad = Matrix(1, 1, 4.0);
  CHECK(optim::clip_global_norm({&a, &b}, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
  CHECK(optim::clip_global_norm({&a, &b}, 2.0) == doctest::Approx(1.0));
  CHECK(a.grad(0, 0) == doctest::Approx(0.6));
}
