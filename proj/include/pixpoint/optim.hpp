#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pixpoint/autograd.hpp"

namespace pixpoint::optim {

using ag::Parameter;

/// Parameters sharing one learning-rate scale (shared / local / global / vae3d).
struct ParamGroup {
  std::string name;
  std::vector<Parameter*> params;
  double lr_scale = 1.0;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
};

struct Moments {
  Matrix m;
  Matrix v;
  std::uint64_t steps = 0;
  friend bool operator==(const Moments&, const Moments&) = default;
};

/// AdamW with decoupled weight decay. State is keyed by parameter name so it
/// survives model re-construction and checkpoint round trips.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter in `groups` with lr = base_lr · group.lr_scale.
  void step(const std::vector<ParamGroup>& groups, double base_lr);

  const AdamWConfig& config() const { return cfg_; }
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  AdamWConfig cfg_;
  std::map<std::string, Moments> state_;
};

/// Global L2 norm over all gradients.
double global_grad_norm(const std::vector<Parameter*>& params);

/// Scales all gradients by max_norm/‖g‖ when ‖g‖ > max_norm. Returns the pre-clip norm.
double clip_global_norm(const std::vector<Parameter*>& params, double max_norm = 1.0);

void zero_grads(const std::vector<Parameter*>& params);

}  // namespace pixpoint::optim
