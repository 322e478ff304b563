#pragma once

// A configured model plus its data: cached prepared sets, stage runs,
// stage-boundary snapshots and the run directory (checkpoint, metrics,
// append-only manifest).

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>

#include "json.hpp"
#include "pixpoint/config.hpp"
#include "pixpoint/eval.hpp"

namespace pixpoint {

struct StageSnapshot {
  int stage = 0;
  int resolution = 0;
  eval::LocalReport local;          // base resolution
  int high_resolution = 0;          // 0 when the stage trains at the base resolution
  eval::LocalReport local_high;
  eval::RetrievalReport single_view;  // s1-random
  eval::RetrievalReport multi_view;   // s4-random
};

nlohmann::json to_json(const eval::LocalReport& r);
nlohmann::json to_json(const eval::RetrievalReport& r);
nlohmann::json to_json(const StageSnapshot& s);

class Session {
 public:
  Session(config::RunConfig cfg, data::Corpus corpus);
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const config::RunConfig& config() const { return cfg_; }
  const data::Corpus& corpus() const { return corpus_; }
  Model& model() { return *model_; }
  train::TrainState& state() { return state_; }

  /// Prepared objects of the train or held-out split at a resolution; built once.
  const PreparedSet& prepared(int resolution, bool held_out);
  /// Drops cached prepared sets other than `keep_resolution`.
  void release_except(int keep_resolution);

  int stage_resolution(int stage) const { return config::eval_resolution(cfg_, stage); }

  /// begin_stage + run_stage on the stage's training tier.
  void train_stage(int stage, const train::StepCallback& on_step = {}, std::size_t stop_after = 0);

  /// Held-out LocAcc (s4-random) and retrieval (s1/s4 random) after `stage`.
  StageSnapshot snapshot(int stage, bool retrieval = true);

  void save(const std::filesystem::path& path) { train::save_checkpoint(path, *model_, state_); }
  void load(const std::filesystem::path& path) { train::load_checkpoint(path, *model_, state_); }

 private:
  config::RunConfig cfg_;
  data::Corpus corpus_;
  std::unique_ptr<Model> model_;
  train::TrainState state_;
  std::map<std::pair<int, bool>, std::unique_ptr<PreparedSet>> sets_;
};

/// Files of one run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path checkpoint() const { return root / "checkpoint.bin"; }
  std::filesystem::path metrics() const { return root / "metrics.jsonl"; }
  std::filesystem::path manifest() const { return root / "manifest.jsonl"; }
};

/// Appends one event line to the run manifest. Every event carries the config
/// hash; a run directory refuses events from a different config (kConfig).
void append_manifest(const RunPaths& run, const config::RunConfig& cfg, nlohmann::json event);

void append_line(const std::filesystem::path& path, const std::string& line);

/// Throws kDatasetMismatch when the stored corpus was generated from a
/// different dataset configuration.
void check_dataset(const data::Corpus& corpus, const config::RunConfig& cfg);

/// Seeds recorded in manifests.
nlohmann::json seeds_json(const config::RunConfig& cfg);

}  // namespace pixpoint
