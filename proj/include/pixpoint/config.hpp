#pragma once

// Run configuration: one JSON document drives dataset, model, schedule,
// evaluation and part transfer. Unknown keys are rejected.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pixpoint/corpus.hpp"
#include "pixpoint/model.hpp"
#include "pixpoint/parttransfer.hpp"
#include "pixpoint/trainer.hpp"

namespace pixpoint::config {

struct EvalConfig {
  std::size_t pixels_per_view = 20;
  std::vector<std::size_t> ks{1, 2, 3, 5, 10};
  std::uint64_t seed = 17;
  std::size_t transfer_clicks_per_object = 1;
};

struct RunConfig {
  data::CorpusConfig corpus;
  ModelConfig model;
  std::array<train::StageConfig, 3> stages = train::default_stage_configs();
  train::TrainSettings train;
  EvalConfig eval;
  part::TransferConfig transfer;
};

RunConfig default_config();

/// Missing keys keep their defaults; unknown keys and bad values throw kConfig.
RunConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

void validate(const RunConfig& cfg);

RunConfig load(const std::filesystem::path& path);

/// Applies one `section.key=value` override (value parsed as JSON, else as a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

/// FNV-1a of the canonical JSON dump.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hex64(std::uint64_t v);

/// Resolution used for held-out evaluation after `stage`.
int eval_resolution(const RunConfig& cfg, int stage);

}  // namespace pixpoint::config
