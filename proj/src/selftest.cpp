#include "pixpoint/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "pixpoint/alignment.hpp"
#include "pixpoint/eval.hpp"
#include "pixpoint/globalbranch.hpp"
#include "pixpoint/gradcheck.hpp"
#include "pixpoint/kernels.hpp"
#include "pixpoint/nn.hpp"
#include "pixpoint/parttransfer.hpp"
#include "pixpoint/tokenize3d.hpp"

namespace pixpoint::selftest {

namespace {

using Rng = std::mt19937_64;

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data) v = u(rng);
  return m;
}

Matrix unit_rows(Matrix m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (double v : m.row(i)) s += v * v;
    s = std::sqrt(s);
    for (double& v : m.row(i)) v /= s;
  }
  return m;
}

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Generic scalar readout with fixed random weights so no gradient vanishes by symmetry.
ag::Var readout(ag::Graph& g, ag::Var y, const Matrix& w) { return ag::sum(ag::mul(y, g.constant(w))); }

struct GradCase {
  const char* name;
  // Returns the worst relative error of one random instance.
  std::function<double(Rng&)> run;
};

double check_module(nn::Module& module, const LossBuilder& build, std::vector<Matrix> inputs) {
  return check_gradients(build, std::move(inputs), module.parameters()).max_rel_error;
}

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> cases;
  cases.push_back({"shared_encoder", [](Rng& rng) {
                     nn::ResidualMlp mlp("mlp", 5, 6, 7, 2, rng);
                     const Matrix w = random_matrix(4, 6, rng);
                     return check_module(
                         mlp, [&](ag::Graph& g, const std::vector<ag::Var>& in) { return readout(g, mlp.forward(g, in[0]), w); },
                         {random_matrix(4, 5, rng)});
                   }});
  cases.push_back({"local_head", [](Rng& rng) {
                     nn::Linear head("head", 6, 5, true, rng);
                     const Matrix w = random_matrix(4, 5, rng);
                     return check_module(
                         head,
                         [&](ag::Graph& g, const std::vector<ag::Var>& in) {
                           return readout(g, align::project_local(g, head, in[0]), w);
                         },
                         {random_matrix(4, 6, rng)});
                   }});
  cases.push_back({"local_loss_hard", [](Rng& rng) {
                     align::LocalLossConfig cfg;
                     cfg.sigma = 0.3;
                     cfg.tau = 0.5;
                     cfg.delta = 0.25;
                     cfg.hard_k = 3;
                     cfg.hard_weight = 0.4;
                     const Matrix q = random_matrix(7, 3, rng, 0.0, 1.0), c = random_matrix(6, 3, rng, 0.0, 1.0);
                     const align::Assignment a = align::assign(q, c, cfg);
                     return check_gradients(
                                [&](ag::Graph& g, const std::vector<ag::Var>& in) {
                                  return align::local_loss(g, ag::l2_normalize_rows(in[0]), ag::l2_normalize_rows(in[1]),
                                                           a, cfg)
                                      .total;
                                },
                                {random_matrix(7, 4, rng), random_matrix(6, 4, rng)}, {})
                         .max_rel_error;
                   }});
  cases.push_back({"fusion", [](Rng& rng) {
                     global::Fusion fusion("fusion", 5, 3, 4, rng);
                     const Matrix w = random_matrix(3, 5, rng);
                     return check_module(
                         fusion,
                         [&](ag::Graph& g, const std::vector<ag::Var>& in) {
                           return readout(g, fusion.forward(g, in[0], in[1], in[2], true), w);
                         },
                         {random_matrix(3, 5, rng), random_matrix(3, 3, rng), random_matrix(3, 4, rng)});
                   }});
  cases.push_back({"attention_block", [](Rng& rng) {
                     nn::AttentionBlock block("attn", 6, 2, 8, rng);
                     const Matrix w = random_matrix(5, 6, rng);
                     return check_module(
                         block, [&](ag::Graph& g, const std::vector<ag::Var>& in) { return readout(g, block.forward(g, in[0]), w); },
                         {random_matrix(5, 6, rng)});
                   }});
  cases.push_back({"global_loss_tau", [](Rng& rng) {
                     ag::Parameter tau("tau", Matrix(1, 1, std::uniform_real_distribution<double>(0.2, 1.0)(rng)), false);
                     return check_gradients(
                                [&](ag::Graph& g, const std::vector<ag::Var>& in) {
                                  return global::global_loss(ag::l2_normalize_rows(in[0]), ag::l2_normalize_rows(in[1]),
                                                             g.param(tau));
                                },
                                {random_matrix(4, 5, rng), random_matrix(4, 5, rng)}, {&tau})
                         .max_rel_error;
                   }});
  cases.push_back({"subset_loss", [](Rng& rng) {
                     const Matrix full = unit_rows(random_matrix(1, 5, rng));
                     return check_gradients(
                                [&](ag::Graph& g, const std::vector<ag::Var>& in) {
                                  return global::subset_loss(ag::l2_normalize_rows(in[0]), g.constant(full));
                                },
                                {random_matrix(1, 5, rng)}, {})
                         .max_rel_error;
                   }});
  cases.push_back({"distill_loss", [](Rng& rng) {
                     const Matrix teacher = unit_rows(random_matrix(4, 3, rng));
                     return check_gradients(
                                [&](ag::Graph&, const std::vector<ag::Var>& in) {
                                  return global::distill_loss(teacher, ag::l2_normalize_rows(in[0]),
                                                              ag::l2_normalize_rows(in[1]), 0.5);
                                },
                                {random_matrix(4, 5, rng), random_matrix(4, 5, rng)}, {})
                         .max_rel_error;
                   }});
  cases.push_back({"set_encoder", [](Rng& rng) {
                     tok3d::SetEncoderConfig cfg{5, 6, 4};
                     tok3d::SetEncoder enc("vae", cfg, rng);
                     Matrix pts = random_matrix(24, 6, rng, 0.0, 1.0);
                     const tok3d::TokenField field = tok3d::build_token_field(pts, 4, 3);
                     const Matrix w = random_matrix(4, 4, rng);
                     return check_module(
                         enc, [&](ag::Graph& g, const std::vector<ag::Var>&) { return readout(g, enc.forward(g, field), w); }, {});
                   }});
  return cases;
}

// Brute-force references, written independently of the library code paths.

std::vector<std::size_t> oracle_fps(const Matrix& p, std::size_t count, std::size_t first) {
  std::vector<std::size_t> sel{first};
  while (sel.size() < count) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < p.rows; ++i) {
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t s : sel) {
        double d = 0.0;
        for (std::size_t c = 0; c < 3; ++c) d += (p(i, c) - p(s, c)) * (p(i, c) - p(s, c));
        dmin = std::min(dmin, d);
      }
      if (dmin > best_d) {
        best_d = dmin;
        best = i;
      }
    }
    sel.push_back(best);
  }
  return sel;
}

std::vector<std::size_t> oracle_knn_row(const Matrix& p, std::span<const double> q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < p.rows; ++i) {
    double d = 0.0;
    for (std::size_t c = 0; c < p.cols; ++c) d += (p(i, c) - q[c]) * (p(i, c) - q[c]);
    all.emplace_back(d, i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Clusters = connected components of core points; labels ordered by the
// lowest core index; a border point joins the lowest-labeled adjacent cluster.
std::vector<int> oracle_dbscan(const Matrix& p, double eps, std::size_t min_pts) {
  const std::size_t n = p.rows;
  const auto near = [&](std::size_t i, std::size_t j) {
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c) d += (p(i, c) - p(j, c)) * (p(i, c) - p(j, c));
    return d <= eps * eps;
  };
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cnt = 0;
    for (std::size_t j = 0; j < n; ++j) cnt += near(i, j);
    core[i] = cnt >= min_pts;
  }
  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (core[i] && core[j] && near(i, j)) uf.unite(i, j);
  std::map<std::size_t, int> label_of_root;
  std::vector<int> labels(n, -1);
  for (std::size_t i = 0; i < n; ++i)
    if (core[i]) {
      const std::size_t r = uf.find(i);
      if (!label_of_root.count(r)) {
        const int next = static_cast<int>(label_of_root.size());
        label_of_root[r] = next;
      }
      labels[i] = label_of_root[r];
    }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    int best = -1;
    for (std::size_t j = 0; j < n; ++j)
      if (core[j] && near(i, j) && (best < 0 || labels[j] < best)) best = labels[j];
    labels[i] = best;
  }
  return labels;
}

std::vector<std::uint32_t> oracle_flood(const std::vector<std::uint32_t>& seeds,
                                        const std::vector<std::vector<std::uint32_t>>& adj,
                                        const std::vector<char>& allowed) {
  UnionFind uf(adj.size());
  for (std::size_t f = 0; f < adj.size(); ++f)
    for (std::uint32_t g : adj[f])
      if (allowed[f] && allowed[g]) uf.unite(f, g);
  std::set<std::size_t> roots;
  for (std::uint32_t s : seeds) roots.insert(uf.find(s));
  std::vector<std::uint32_t> best;
  for (std::size_t r : roots) {
    std::vector<std::uint32_t> comp;
    for (std::size_t f = 0; f < adj.size(); ++f)
      if (allowed[f] && uf.find(f) == r) comp.push_back(static_cast<std::uint32_t>(f));
    if (comp.size() > best.size() || (comp.size() == best.size() && !comp.empty() && comp.front() < best.front()))
      best = comp;
  }
  return best;
}

// Rank of gallery item j: items with strictly higher similarity or equal similarity and lower index come first.
std::vector<std::size_t> oracle_ranking(const std::vector<double>& sim) {
  std::vector<std::size_t> pos(sim.size());
  for (std::size_t j = 0; j < sim.size(); ++j) {
    std::size_t before = 0;
    for (std::size_t i = 0; i < sim.size(); ++i) before += sim[i] > sim[j] || (sim[i] == sim[j] && i < j);
    pos[j] = before;
  }
  std::vector<std::size_t> order(sim.size());
  for (std::size_t j = 0; j < sim.size(); ++j) order[pos[j]] = j;
  return order;
}

std::vector<double> similarities(const Matrix& q, std::size_t row, const Matrix& gallery) {
  std::vector<double> s(gallery.rows, 0.0);
  for (std::size_t j = 0; j < gallery.rows; ++j)
    for (std::size_t c = 0; c < gallery.cols; ++c) s[j] += q(row, c) * gallery(j, c);
  return s;
}

// Quantized descriptors so ties in similarity actually occur.
Matrix coarse(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  std::uniform_int_distribution<int> u(-2, 2);
  for (double& v : m.data) v = u(rng) * 0.5;
  return m;
}

}  // namespace

std::vector<Check> gradient_checks(std::size_t instances, std::uint64_t seed, double tolerance) {
  std::vector<Check> out;
  for (const GradCase& gc : grad_cases()) {
    Rng rng(seed ^ std::hash<std::string>{}(gc.name));
    double worst = 0.0;
    for (std::size_t i = 0; i < instances; ++i) worst = std::max(worst, gc.run(rng));
    out.push_back({std::string("grad/") + gc.name, worst <= tolerance,
                   fmt("max rel err %.3e", worst) + " over " + std::to_string(instances) + " instances"});
  }
  return out;
}

std::vector<Check> closed_form_checks(std::size_t kl_trials, std::uint64_t seed) {
  std::vector<Check> out;
  const double expected = std::log1p(std::exp(-1.0));
  {
    ag::Graph g;
    Rng rng(seed);
    const Matrix a = unit_rows(random_matrix(1, 6, rng)), b = unit_rows(random_matrix(1, 6, rng));
    const double v = global::global_loss(g.input(a), g.input(b), g.constant(Matrix(1, 1, 0.07))).scalar();
    out.push_back({"closed/global_single_pair", v == 0.0, fmt("loss %.3e", v)});
  }
  {
    ag::Graph g;
    Rng rng(seed + 1);
    align::LocalLossConfig cfg;
    cfg.delta = 10.0;
    const Matrix q = random_matrix(5, 3, rng, 0, 1), c = random_matrix(4, 3, rng, 0, 1);
    const auto a = align::assign(q, c, cfg);
    const double v =
        align::local_loss(g, g.input(unit_rows(random_matrix(5, 4, rng))), g.input(unit_rows(random_matrix(4, 4, rng))), a, cfg)
            .total.scalar();
    out.push_back({"closed/local_no_negatives", v == 0.0, fmt("loss %.3e", v)});
  }
  {
    ag::Graph g;
    align::LocalLossConfig cfg;
    cfg.tau = 1.0;
    cfg.delta = 0.01;
    const Matrix q(2, 3, {0, 0, 0, 1, 0, 0});
    const Matrix e(2, 2, {1, 0, 0, 1});
    const auto a = align::assign(q, q, cfg);
    const double v = align::local_loss(g, g.input(e), g.input(e), a, cfg).total.scalar();
    out.push_back({"closed/local_orthogonal_pair", std::abs(v - expected) <= 1e-9, fmt("loss %.12f", v)});
  }
  {
    ag::Graph g;
    const Matrix e(2, 2, {1, 0, 0, 1});
    const double v = global::global_loss(g.input(e), g.input(e), g.constant(Matrix(1, 1, 1.0))).scalar();
    out.push_back({"closed/global_orthogonal_pair", std::abs(v - expected) <= 1e-9, fmt("loss %.12f", v)});
  }
  {
    Rng rng(seed + 2);
    double worst_matched = 0.0, most_negative = 0.0;
    for (std::size_t t = 0; t < kl_trials; ++t) {
      const std::size_t b = 2 + t % 6, d = 3 + t % 4;
      const Matrix teacher = unit_rows(random_matrix(b, d, rng));
      {
        ag::Graph g;
        const double v = global::distill_loss(teacher, g.input(teacher), g.input(teacher), 0.07).scalar();
        worst_matched = std::max(worst_matched, std::abs(v));
      }
      ag::Graph g;
      const double v = global::distill_loss(teacher, g.input(unit_rows(random_matrix(b, d, rng))),
                                            g.input(unit_rows(random_matrix(b, d, rng))), 0.05 + 0.1 * (t % 3))
                           .scalar();
      most_negative = std::min(most_negative, v);
    }
    out.push_back({"closed/distill_matched_zero", worst_matched <= 1e-12, fmt("max |KL| %.3e", worst_matched)});
    out.push_back({"closed/distill_nonnegative", most_negative >= 0.0,
                   fmt("min KL %.3e", most_negative) + " over " + std::to_string(kl_trials) + " trials"});
  }
  return out;
}

std::vector<Check> oracle_checks(std::size_t instances, std::size_t max_size, std::uint64_t seed) {
  std::vector<Check> out;
  Rng rng(seed);
  const auto size = [&](std::size_t lo) { return std::uniform_int_distribution<std::size_t>(lo, max_size)(rng); };
  std::size_t fps_bad = 0, knn_bad = 0, loc_bad = 0, ret_bad = 0, db_bad = 0, flood_bad = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    {  // FPS, serial and parallel
      const std::size_t n = size(2);
      Matrix p = random_matrix(n, 3, rng);
      if (t % 4 == 0)  // duplicated points exercise the tie rule
        for (std::size_t i = n / 2; i < n; ++i)
          for (std::size_t c = 0; c < 3; ++c) p(i, c) = p(i - n / 2, c);
      const std::size_t count = std::uniform_int_distribution<std::size_t>(1, n)(rng);
      const std::size_t first = kernels::nearest_to_centroid(p);
      const auto ref = oracle_fps(p, count, first);
      fps_bad += kernels::farthest_point_sampling(p, count, first, kernels::Exec::kSerial) != ref ||
                 kernels::farthest_point_sampling(p, count, first, kernels::Exec::kParallel) != ref;
    }
    {  // kNN
      const std::size_t n = size(1), m = std::min<std::size_t>(size(1), 40);
      const Matrix p = coarse(n, 3, rng), q = coarse(m, 3, rng);
      const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
      for (auto exec : {kernels::Exec::kSerial, kernels::Exec::kParallel}) {
        const auto got = kernels::knn(p, q, k, exec);
        for (std::size_t i = 0; i < m; ++i) knn_bad += got[i] != oracle_knn_row(p, q.row(i), k);
      }
    }
    {  // LocAcc
      const std::size_t n = size(2), m = std::min<std::size_t>(size(1), 30);
      const Matrix centers = random_matrix(n, 3, rng, 0, 1), gt = random_matrix(m, 3, rng, 0, 1);
      const Matrix d3 = coarse(n, 4, rng), d2 = coarse(m, 4, rng);
      const std::vector<std::size_t> ks{1, 2, 3, 5, 10};
      const double edge = 1.0;
      const auto got = eval::loc_acc(gt, d2, d3, centers, ks, edge);
      std::vector<double> ref(ks.size(), 0.0);
      for (std::size_t q = 0; q < m; ++q) {
        const auto order = oracle_ranking(similarities(d2, q, d3));
        for (std::size_t i = 0; i < ks.size(); ++i) {
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < std::min(ks[i], n); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < 3; ++c) s += (gt(q, c) - centers(order[j], c)) * (gt(q, c) - centers(order[j], c));
            best = std::min(best, std::sqrt(s));
          }
          loc_bad += got.dstar[q][i] != best;
          ref[i] += std::clamp((1.0 - best / (std::sqrt(3.0) * edge)) * 100.0, 0.0, 100.0);
        }
      }
      for (std::size_t i = 0; i < ks.size(); ++i) loc_bad += got.scores[i] != ref[i] / static_cast<double>(m);
    }
    {  // Recall@k and MRR
      const std::size_t g = size(2), m = std::min<std::size_t>(size(1), 30);
      const Matrix gallery = coarse(g, 3, rng), queries = coarse(m, 3, rng);
      std::uniform_int_distribution<int> lab(0, 4);
      std::vector<int> gl(g), ql(m);
      for (int& l : gl) l = lab(rng);
      for (int& l : ql) l = lab(rng);
      const std::vector<std::size_t> ks{1, 5, 10};
      const auto got = eval::retrieval_eval(queries, ql, gallery, gl, ks);
      std::vector<double> rec(ks.size(), 0.0);
      double mrr = 0.0;
      for (std::size_t q = 0; q < m; ++q) {
        const auto order = oracle_ranking(similarities(queries, q, gallery));
        std::size_t first = 0;
        for (std::size_t r = g; r-- > 0;)
          if (gl[order[r]] == ql[q]) first = r + 1;
        ret_bad += got.first_correct_rank[q] != first;
        if (first) mrr += 1.0 / static_cast<double>(first);
        for (std::size_t i = 0; i < ks.size(); ++i) rec[i] += first && first <= ks[i];
      }
      for (std::size_t i = 0; i < ks.size(); ++i) ret_bad += got.recall[i] != 100.0 * rec[i] / static_cast<double>(m);
      ret_bad += got.mrr != 100.0 * mrr / static_cast<double>(m);
    }
    {  // DBSCAN
      const std::size_t n = size(1);
      const Matrix p = random_matrix(n, 3, rng, 0, 1);
      const double eps = std::uniform_real_distribution<double>(0.02, 0.3)(rng);
      const std::size_t min_pts = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
      db_bad += part::dbscan(p, eps, min_pts) != oracle_dbscan(p, eps, min_pts);
    }
    {  // flood fill on a random sparse graph
      const std::size_t n = size(1);
      std::vector<std::vector<std::uint32_t>> adj(n);
      std::uniform_int_distribution<std::size_t> node(0, n - 1);
      for (std::size_t e = 0; e < n + n / 2; ++e) {
        const auto a = static_cast<std::uint32_t>(node(rng)), b = static_cast<std::uint32_t>(node(rng));
        if (a == b || std::find(adj[a].begin(), adj[a].end(), b) != adj[a].end()) continue;
        adj[a].push_back(b);
        adj[b].push_back(a);
      }
      std::vector<char> allowed(n);
      for (char& c : allowed) c = std::bernoulli_distribution(0.7)(rng);
      std::vector<std::uint32_t> seeds;
      for (std::size_t f = 0; f < n; ++f)
        if (allowed[f] && std::bernoulli_distribution(0.05)(rng)) seeds.push_back(static_cast<std::uint32_t>(f));
      flood_bad += part::flood_fill(seeds, adj, allowed).faces != oracle_flood(seeds, adj, allowed);
    }
  }
  const auto add = [&](const char* name, std::size_t bad) {
    out.push_back({std::string("oracle/") + name, bad == 0,
                   std::to_string(bad) + " mismatches over " + std::to_string(instances) + " instances"});
  };
  add("fps", fps_bad);
  add("knn", knn_bad);
  add("loc_acc", loc_bad);
  add("recall_mrr", ret_bad);
  add("dbscan", db_bad);
  add("flood_fill", flood_bad);
  return out;
}

bool all_pass(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

}  // namespace pixpoint::selftest
