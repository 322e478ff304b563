#include "pixpoint/model.hpp"

#include "pixpoint/alignment.hpp"
#include "pixpoint/error.hpp"

namespace pixpoint {

namespace {

// Independent init stream per module so re-drawing one part never shifts another.
nn::Rng module_rng(std::uint64_t seed, std::uint64_t tag) { return nn::Rng(seed * 0x9e3779b97f4a7c15ULL + tag); }

}  // namespace

void validate(const ModelConfig& c) {
  const bool positive = c.f2d && c.dc && c.dt && c.dsh && c.dloc && c.dg && c.dvae && c.n3d && c.k_neighbors &&
                        c.m_max && c.mlp_hidden && c.heads && c.ffn_hidden && c.point_width && c.patch;
  require(positive, ErrorCode::kConfig, "model: every dimension must be positive");
  require(c.dsh % c.heads == 0, ErrorCode::kConfig, "model: dsh must be divisible by heads");
  require(c.tau_g_init >= global::kTauMin && c.tau_g_init <= global::kTauMax, ErrorCode::kConfig,
          "model: tau_g_init outside its clamp range");
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  auto r_vae = module_rng(cfg.seed, 1);
  vae_ = tok3d::SetEncoder("vae3d", {cfg.point_width, cfg.mlp_hidden, cfg.dvae}, r_vae);
  auto r_shared = module_rng(cfg.seed, 2);
  f2d_ = nn::ResidualMlp("shared.f2d", cfg.f2d + cfg.dc, cfg.dsh, cfg.mlp_hidden, cfg.mlp_blocks, r_shared);
  f3d_ = nn::ResidualMlp("shared.f3d", cfg.dvae, cfg.dsh, cfg.mlp_hidden, cfg.mlp_blocks, r_shared);
  auto r_local = module_rng(cfg.seed, 3);
  head2d_ = nn::Linear("local.head2d", cfg.dsh, cfg.dloc, true, r_local);
  head3d_ = nn::Linear("local.head3d", cfg.dsh, cfg.dloc, true, r_local);
  reset_global();
}

void Model::reset_global() {
  auto r = module_rng(cfg_.seed, 4);
  fusion_ = global::Fusion("global.fusion", cfg_.dsh, cfg_.dc, cfg_.dt, r);
  global2d_ = global::Global2d("global.g2d", cfg_.dsh, cfg_.mlp_hidden, cfg_.dg, r);
  global3d_ = global::Global3d("global.g3d", cfg_.dsh, cfg_.heads, cfg_.ffn_hidden, cfg_.dg, r);
  tau_g_ = ag::Parameter("global.tau_g", Matrix(1, 1, cfg_.tau_g_init), false);
}

ag::Var Model::shared2d(ag::Graph& g, const Matrix& x, const Matrix& context) {
  require(x.rows == context.rows && x.cols == cfg_.f2d && context.cols == cfg_.dc, ErrorCode::kShapeMismatch,
          "shared2d: feature/context shape mismatch");
  return f2d_.forward(g, ag::concat_cols({g.constant(x), g.constant(context)}));
}

ag::Var Model::latents(ag::Graph& g, const tok3d::TokenField& field) { return vae_.forward(g, field); }

ag::Var Model::shared3d(ag::Graph& g, ag::Var latents) { return f3d_.forward(g, latents); }

ag::Var Model::local2d(ag::Graph& g, ag::Var shared) { return align::project_local(g, head2d_, shared); }

ag::Var Model::local3d(ag::Graph& g, ag::Var shared) { return align::project_local(g, head3d_, shared); }

std::vector<ag::Parameter*> Model::group(const std::string& name) {
  std::vector<ag::Parameter*> out;
  if (name == "shared") {
    f2d_.collect(out);
    f3d_.collect(out);
  } else if (name == "local") {
    head2d_.collect(out);
    head3d_.collect(out);
  } else if (name == "global") {
    fusion_.collect(out);
    global2d_.collect(out);
    global3d_.collect(out);
    out.push_back(&tau_g_);
  } else if (name == "vae3d") {
    vae_.collect(out);
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown parameter group " + name);
  }
  return out;
}

std::vector<ag::Parameter*> Model::parameters() {
  std::vector<ag::Parameter*> out;
  for (const char* name : {"shared", "local", "global", "vae3d"}) {
    auto g = group(name);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

ag::Parameter* Model::find(const std::string& name) {
  for (ag::Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

}  // namespace pixpoint
