#include "pixpoint/config.hpp"

#include <cstdio>
#include <set>

#include "pixpoint/binio.hpp"
#include "pixpoint/error.hpp"

namespace pixpoint::config {

using nlohmann::json;

namespace {

/// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    require(j.is_object(), ErrorCode::kConfig, "config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfig, "config: bad value for " + name_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items())
      require(seen_.count(item.key()) > 0, ErrorCode::kConfig, "config: unknown key " + name_ + "." + item.key());
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json stage_to_json(const train::StageConfig& s) {
  return json{{"enable_global", s.enable_global}, {"enable_fusion", s.enable_fusion},
              {"lambda_local", s.lambda_local},   {"lambda_global", s.lambda_global},
              {"lambda_sub", s.lambda_sub},       {"lambda_sd", s.lambda_sd},
              {"hard_k", s.hard_k},               {"hard_weight", s.hard_weight},
              {"delta", s.delta},                 {"tau_d", s.tau_d},
              {"base_lr", s.base_lr},             {"lr_shared", s.lr_shared},
              {"lr_local", s.lr_local},           {"lr_global", s.lr_global},
              {"lr_vae3d", s.lr_vae3d},           {"batch_size", s.batch_size},
              {"epochs", s.epochs},               {"high_resolution", s.high_resolution}};
}

void stage_from_json(const json& j, const std::string& name, train::StageConfig& s) {
  Section sec(j, name);
  sec.get("enable_global", s.enable_global);
  sec.get("enable_fusion", s.enable_fusion);
  sec.get("lambda_local", s.lambda_local);
  sec.get("lambda_global", s.lambda_global);
  sec.get("lambda_sub", s.lambda_sub);
  sec.get("lambda_sd", s.lambda_sd);
  sec.get("hard_k", s.hard_k);
  sec.get("hard_weight", s.hard_weight);
  sec.get("delta", s.delta);
  sec.get("tau_d", s.tau_d);
  sec.get("base_lr", s.base_lr);
  sec.get("lr_shared", s.lr_shared);
  sec.get("lr_local", s.lr_local);
  sec.get("lr_global", s.lr_global);
  sec.get("lr_vae3d", s.lr_vae3d);
  sec.get("batch_size", s.batch_size);
  sec.get("epochs", s.epochs);
  sec.get("high_resolution", s.high_resolution);
  sec.finish();
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

json to_json(const RunConfig& c) {
  const auto& d = c.corpus;
  const auto& m = c.model;
  const auto& t = c.train;
  const auto& p = c.transfer;
  json j;
  j["dataset"] = json{{"categories", d.categories},
                      {"train_per_category", d.train_per_category},
                      {"test_per_category", d.test_per_category},
                      {"random_views", d.random_views},
                      {"resolution", d.resolution},
                      {"high_resolution", d.high_resolution},
                      {"surface_points", d.surface_points},
                      {"dense_points", d.dense_points},
                      {"splat_radius", d.splat_radius},
                      {"seed", d.seed}};
  j["model"] = json{{"f2d", m.f2d},
                    {"dc", m.dc},
                    {"dt", m.dt},
                    {"dsh", m.dsh},
                    {"dloc", m.dloc},
                    {"dg", m.dg},
                    {"dvae", m.dvae},
                    {"n3d", m.n3d},
                    {"k_neighbors", m.k_neighbors},
                    {"m_max", m.m_max},
                    {"mlp_hidden", m.mlp_hidden},
                    {"mlp_blocks", m.mlp_blocks},
                    {"heads", m.heads},
                    {"ffn_hidden", m.ffn_hidden},
                    {"point_width", m.point_width},
                    {"patch", m.patch},
                    {"backbone_frequency", m.backbone_frequency},
                    {"tau_g_init", m.tau_g_init},
                    {"seed", m.seed},
                    {"backbone_seed", m.backbone_seed},
                    {"teacher_seed", m.teacher_seed}};
  j["stages"] = json::array();
  for (const auto& s : c.stages) j["stages"].push_back(stage_to_json(s));
  j["train"] = json{{"lr_multiplier", t.desk.lr_multiplier},
                    {"epoch_multiplier", t.desk.epoch_multiplier},
                    {"sigma", t.sigma},
                    {"tau_l", t.tau_l},
                    {"max_views", t.max_views},
                    {"seed", t.seed}};
  j["eval"] = json{{"pixels_per_view", c.eval.pixels_per_view},
                   {"ks", c.eval.ks},
                   {"seed", c.eval.seed},
                   {"transfer_clicks_per_object", c.eval.transfer_clicks_per_object}};
  j["transfer"] = json{{"coverage_frac", p.coverage_frac}, {"sim_min", p.sim_min},
                       {"eps", p.eps},                     {"min_pts", p.min_pts},
                       {"seed_radius", p.seed_radius},     {"flood_radius", p.flood_radius}};
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Section top(j, "config");
  if (const json* s = top.child("dataset")) {
    Section sec(*s, "dataset");
    auto& d = c.corpus;
    sec.get("categories", d.categories);
    sec.get("train_per_category", d.train_per_category);
    sec.get("test_per_category", d.test_per_category);
    sec.get("random_views", d.random_views);
    sec.get("resolution", d.resolution);
    sec.get("high_resolution", d.high_resolution);
    sec.get("surface_points", d.surface_points);
    sec.get("dense_points", d.dense_points);
    sec.get("splat_radius", d.splat_radius);
    sec.get("seed", d.seed);
    sec.finish();
  }
  if (const json* s = top.child("model")) {
    Section sec(*s, "model");
    auto& m = c.model;
    sec.get("f2d", m.f2d);
    sec.get("dc", m.dc);
    sec.get("dt", m.dt);
    sec.get("dsh", m.dsh);
    sec.get("dloc", m.dloc);
    sec.get("dg", m.dg);
    sec.get("dvae", m.dvae);
    sec.get("n3d", m.n3d);
    sec.get("k_neighbors", m.k_neighbors);
    sec.get("m_max", m.m_max);
    sec.get("mlp_hidden", m.mlp_hidden);
    sec.get("mlp_blocks", m.mlp_blocks);
    sec.get("heads", m.heads);
    sec.get("ffn_hidden", m.ffn_hidden);
    sec.get("point_width", m.point_width);
    sec.get("patch", m.patch);
    sec.get("backbone_frequency", m.backbone_frequency);
    sec.get("tau_g_init", m.tau_g_init);
    sec.get("seed", m.seed);
    sec.get("backbone_seed", m.backbone_seed);
    sec.get("teacher_seed", m.teacher_seed);
    sec.finish();
  }
  if (const json* s = top.child("stages")) {
    require(s->is_array() && s->size() == 3, ErrorCode::kConfig, "config: 'stages' must list three stages");
    for (std::size_t i = 0; i < 3; ++i) stage_from_json((*s)[i], "stages[" + std::to_string(i) + "]", c.stages[i]);
  }
  if (const json* s = top.child("train")) {
    Section sec(*s, "train");
    auto& t = c.train;
    sec.get("lr_multiplier", t.desk.lr_multiplier);
    sec.get("epoch_multiplier", t.desk.epoch_multiplier);
    sec.get("sigma", t.sigma);
    sec.get("tau_l", t.tau_l);
    sec.get("max_views", t.max_views);
    sec.get("seed", t.seed);
    sec.finish();
  }
  if (const json* s = top.child("eval")) {
    Section sec(*s, "eval");
    sec.get("pixels_per_view", c.eval.pixels_per_view);
    sec.get("ks", c.eval.ks);
    sec.get("seed", c.eval.seed);
    sec.get("transfer_clicks_per_object", c.eval.transfer_clicks_per_object);
    sec.finish();
  }
  if (const json* s = top.child("transfer")) {
    Section sec(*s, "transfer");
    auto& p = c.transfer;
    sec.get("coverage_frac", p.coverage_frac);
    sec.get("sim_min", p.sim_min);
    sec.get("eps", p.eps);
    sec.get("min_pts", p.min_pts);
    sec.get("seed_radius", p.seed_radius);
    sec.get("flood_radius", p.flood_radius);
    sec.finish();
  }
  top.finish();
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  const auto& d = c.corpus;
  require(!d.categories.empty() && d.train_per_category >= 0 && d.test_per_category >= 0 && d.random_views >= 0,
          ErrorCode::kConfig, "dataset: categories must be non-empty and counts non-negative");
  const auto& templates = data::builtin_templates();
  for (int cat : d.categories) {
    bool known = false;
    for (const auto& t : templates) known = known || t.category_id == cat;
    require(known, ErrorCode::kConfig, "dataset: unknown category " + std::to_string(cat));
  }
  const int patch = static_cast<int>(c.model.patch);
  require(d.resolution > 0 && d.high_resolution > 0 && d.resolution % patch == 0 && d.high_resolution % patch == 0,
          ErrorCode::kConfig, "dataset: resolutions must be positive multiples of the patch size");
  require(d.surface_points >= c.model.n3d && c.model.n3d >= c.model.k_neighbors, ErrorCode::kConfig,
          "dataset: need surface_points >= n3d >= k_neighbors");
  require(d.dense_points > 0 && d.splat_radius > 0, ErrorCode::kConfig, "dataset: dense_points and splat_radius");
  validate(c.model);
  require(c.model.backbone_frequency > 0, ErrorCode::kConfig, "model: backbone_frequency must be positive");
  for (std::size_t i = 0; i < 3; ++i) {
    require(c.stages[i].stage == static_cast<int>(i) + 1, ErrorCode::kConfig, "stages must be ordered I, II, III");
    train::validate(c.stages[i]);
  }
  const auto& t = c.train;
  require(t.desk.lr_multiplier > 0 && t.desk.epoch_multiplier > 0, ErrorCode::kConfig,
          "train: multipliers must be positive");
  require(t.sigma > 0 && t.tau_l > 0 && t.max_views >= 1, ErrorCode::kConfig,
          "train: sigma, tau_l must be positive and max_views at least 1");
  require(!c.eval.ks.empty() && c.eval.pixels_per_view > 0, ErrorCode::kConfig, "eval: ks and pixels_per_view");
  for (std::size_t k : c.eval.ks) require(k >= 1, ErrorCode::kConfig, "eval: k must be at least 1");
  part::validate(c.transfer);
}

RunConfig load(const std::filesystem::path& path) {
  std::vector<unsigned char> raw;
  try {
    raw = io::read_file(path);
  } catch (const Error&) {
    fail(ErrorCode::kConfig, "config: cannot read " + path.string());
  }
  json j;
  try {
    j = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("config: parse error: ") + e.what());
  }
  return from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::kConfig, "override must be section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!key.empty(), ErrorCode::kConfig, "override has an empty key: " + path);
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        fail(ErrorCode::kConfig, "override index is not a number: " + path);
      }
      require(idx < node->size(), ErrorCode::kConfig, "override index out of range: " + path);
      node = &(*node)[idx];
    } else {
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  return data::fnv1a64(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

int eval_resolution(const RunConfig& cfg, int stage) {
  require(stage >= 1 && stage <= 3, ErrorCode::kInvalidArgument, "eval_resolution: stage must be 1..3");
  return cfg.stages[static_cast<std::size_t>(stage - 1)].high_resolution ? cfg.corpus.high_resolution
                                                                          : cfg.corpus.resolution;
}

}  // namespace pixpoint::config
