#include "pixpoint/session.hpp"

#include <fstream>

#include "pixpoint/error.hpp"

namespace pixpoint {

using nlohmann::json;

json to_json(const eval::LocalReport& r) {
  return json{{"ks", r.model.ks},
              {"loc_acc", r.model.scores},
              {"baseline", r.baseline.scores},
              {"ceiling", r.ceiling.scores},
              {"queries", r.queries}};
}

json to_json(const eval::RetrievalReport& r) {
  return json{{"ks", r.result.ks},
              {"recall", r.result.recall},
              {"mrr", r.result.mrr},
              {"chance_recall1", r.chance.recall1},
              {"chance_mrr", r.chance.mrr}};
}

json to_json(const StageSnapshot& s) {
  json j{{"stage", s.stage}, {"resolution", s.resolution}, {"local", to_json(s.local)}};
  if (s.high_resolution) {
    j["high_resolution"] = s.high_resolution;
    j["local_high"] = to_json(s.local_high);
  }
  if (!s.single_view.result.ks.empty()) {
    j["retrieval_s1"] = to_json(s.single_view);
    j["retrieval_s4"] = to_json(s.multi_view);
  }
  return j;
}

Session::Session(config::RunConfig cfg, data::Corpus corpus)
    : cfg_(std::move(cfg)), corpus_(std::move(corpus)), model_(std::make_unique<Model>(cfg_.model)) {
  state_.seed = cfg_.train.seed;
}

const PreparedSet& Session::prepared(int resolution, bool held_out) {
  auto& slot = sets_[{resolution, held_out}];
  if (!slot) slot = std::make_unique<PreparedSet>(corpus_, cfg_.model, resolution, held_out);
  return *slot;
}

void Session::release_except(int keep_resolution) {
  for (auto it = sets_.begin(); it != sets_.end();)
    it = it->first.first == keep_resolution ? std::next(it) : sets_.erase(it);
}

void Session::train_stage(int stage, const train::StepCallback& on_step, std::size_t stop_after) {
  train::begin_stage(*model_, state_, stage);
  const train::StageConfig& sc = cfg_.stages[static_cast<std::size_t>(stage - 1)];
  const PreparedSet& data = prepared(stage_resolution(stage), false);
  train::run_stage(*model_, state_, data, sc, cfg_.train, on_step, stop_after);
}

StageSnapshot Session::snapshot(int stage, bool retrieval) {
  StageSnapshot s;
  s.stage = stage;
  s.resolution = cfg_.corpus.resolution;
  eval::LocalEvalOptions opts;
  opts.protocol = eval::Protocol::kS4Random;
  opts.pixels_per_view = cfg_.eval.pixels_per_view;
  opts.ks = cfg_.eval.ks;
  opts.seed = cfg_.eval.seed;
  const PreparedSet& base = prepared(s.resolution, true);
  s.local = eval::evaluate_local(*model_, base, opts);
  const int res = stage_resolution(stage);
  if (res != s.resolution) {
    s.high_resolution = res;
    s.local_high = eval::evaluate_local(*model_, prepared(res, true), opts);
  }
  if (retrieval && cfg_.stages[static_cast<std::size_t>(stage - 1)].enable_global) {
    const PreparedSet& data = prepared(res, true);
    const bool teacher = cfg_.stages[static_cast<std::size_t>(stage - 1)].enable_fusion;
    s.single_view = eval::evaluate_retrieval(*model_, data, eval::Protocol::kS1Random, teacher, cfg_.eval.ks,
                                             cfg_.eval.seed);
    s.multi_view = eval::evaluate_retrieval(*model_, data, eval::Protocol::kS4Random, teacher, cfg_.eval.ks,
                                            cfg_.eval.seed);
  }
  return s;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot append to " + path.string());
  out << line << '\n';
  require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + path.string());
}

void append_manifest(const RunPaths& run, const config::RunConfig& cfg, json event) {
  std::filesystem::create_directories(run.root);
  const std::string hash = config::hex64(config::config_hash(cfg));
  if (std::filesystem::exists(run.manifest())) {
    std::ifstream in(run.manifest());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json prev = json::parse(line, nullptr, false);
      require(!prev.is_discarded() && prev.contains("config_hash"), ErrorCode::kConfig,
              "run manifest is damaged: " + run.manifest().string());
      require(prev["config_hash"] == hash, ErrorCode::kConfig,
              "run directory " + run.root.string() + " belongs to config " + prev["config_hash"].get<std::string>() +
                  ", not " + hash);
    }
  } else {
    append_line(run.manifest(), json{{"event", "created"},
                                     {"config_hash", hash},
                                     {"config", config::to_json(cfg)},
                                     {"seeds", seeds_json(cfg)}}
                                    .dump());
  }
  event["config_hash"] = hash;
  append_line(run.manifest(), event.dump());
}

void check_dataset(const data::Corpus& corpus, const config::RunConfig& cfg) {
  config::RunConfig stored = cfg;
  stored.corpus = corpus.config;
  const json a = config::to_json(stored)["dataset"], b = config::to_json(cfg)["dataset"];
  require(a == b, ErrorCode::kDatasetMismatch,
          "dataset was generated with a different configuration: stored " + a.dump() + " vs config " + b.dump());
}

json seeds_json(const config::RunConfig& cfg) {
  return json{{"dataset", cfg.corpus.seed},          {"model", cfg.model.seed},
              {"backbone", cfg.model.backbone_seed}, {"teacher", cfg.model.teacher_seed},
              {"train", cfg.train.seed},             {"eval", cfg.eval.seed}};
}

}  // namespace pixpoint
