#pragma once

// Three-stage progressive training: stage configs, the training step,
// checkpoints and the per-step metrics log.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pixpoint/alignment.hpp"
#include "pixpoint/model.hpp"
#include "pixpoint/optim.hpp"
#include "pixpoint/pipeline.hpp"

namespace pixpoint::train {

struct StageConfig {
  int stage = 1;
  bool enable_global = false;
  bool enable_fusion = false;
  double lambda_local = 1.0;
  double lambda_global = 0.0;
  double lambda_sub = 0.0;
  double lambda_sd = 0.0;
  std::size_t hard_k = 0;
  double hard_weight = 0.0;
  double delta = 0.02;
  double tau_d = 0.07;
  double base_lr = 1e-4;
  double lr_shared = 1.0;
  double lr_local = 1.0;
  double lr_global = 1.0;
  double lr_vae3d = 1.0;
  std::size_t batch_size = 30;
  std::size_t epochs = 5;
  bool high_resolution = false;

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

/// Stage I, II, III as published.
std::array<StageConfig, 3> default_stage_configs();

void validate(const StageConfig& cfg);

/// Multipliers that map the published schedule onto a few hundred objects.
struct DeskScale {
  double lr_multiplier = 20.0;
  double epoch_multiplier = 4.0;
};

struct TrainSettings {
  DeskScale desk;
  double sigma = 0.05;
  double tau_l = 0.07;
  std::size_t max_views = 4;
  std::uint64_t seed = 5;
};

std::size_t steps_per_epoch(std::size_t objects, const StageConfig& cfg);
std::size_t total_steps(std::size_t objects, const StageConfig& cfg, const DeskScale& desk);

/// Unweighted loss terms plus their weighted contributions to the total.
struct StepRecord {
  int stage = 0;
  std::size_t step = 0;
  std::size_t epoch = 0;
  double total = 0.0;
  double local = 0.0;
  double local_forward = 0.0;
  double local_reverse = 0.0;
  double hard_forward = 0.0;
  double hard_reverse = 0.0;
  double global = 0.0;
  double sub = 0.0;
  double sd = 0.0;
  double contrib_local = 0.0;
  double contrib_global = 0.0;
  double contrib_sub = 0.0;
  double contrib_sd = 0.0;
  double grad_norm = 0.0;
  double tau_g = 0.0;
  double lr = 0.0;
  std::size_t local_terms = 0;
  std::size_t subset_terms = 0;
};

std::string to_json_line(const StepRecord& r);

/// Position in the schedule; everything random in a step derives from
/// (seed, stage, step), so this is all a resume needs.
struct TrainState {
  int stage = 0;                // stage currently running or last completed
  bool stage_complete = false;
  std::size_t step = 0;         // next step to run within `stage`
  std::uint64_t seed = 0;
  optim::AdamW optimizer;
};

/// Builds and evaluates the batch loss of one step without touching parameters.
struct StepLoss {
  ag::Var total;
  StepRecord record;
};

StepLoss compute_step_loss(ag::Graph& g, Model& model, const PreparedSet& data, const StageConfig& cfg,
                           const TrainSettings& settings, std::size_t step);

/// Optimizer groups active in a stage (the global group only when enabled).
std::vector<optim::ParamGroup> stage_groups(Model& model, const StageConfig& cfg);

/// One optimization step: loss, backward, clip, AdamW, temperature clamp.
StepRecord train_step(Model& model, TrainState& state, const PreparedSet& data, const StageConfig& cfg,
                      const TrainSettings& settings);

using StepCallback = std::function<void(const StepRecord&, const TrainState&)>;

/// Runs `cfg` from state.step to the end (or `stop_after` steps when nonzero).
/// Starting a new stage requires the previous one to be complete.
void run_stage(Model& model, TrainState& state, const PreparedSet& data, const StageConfig& cfg,
               const TrainSettings& settings, const StepCallback& on_step = {}, std::size_t stop_after = 0);

/// Prepares `state` for `stage`: checks ordering and resets the step counter.
void begin_stage(Model& model, TrainState& state, int stage);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t model_config_hash(const ModelConfig& cfg);

std::vector<unsigned char> encode_checkpoint(Model& model, const TrainState& state);
void decode_checkpoint(const std::vector<unsigned char>& bytes, Model& model, TrainState& state);
void save_checkpoint(const std::filesystem::path& path, Model& model, const TrainState& state);
/// Throws kMissingCheckpoint when absent, kVersionMismatch / kChecksum /
/// kTruncated on damage, kConfig when the model dimensions differ.
void load_checkpoint(const std::filesystem::path& path, Model& model, TrainState& state);

}  // namespace pixpoint::train
