#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pixpoint/autograd.hpp"

namespace pixpoint {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Builds a scalar loss from fresh graph leaves for `inputs`; parameters are
/// bound inside the builder through Graph::param.
using LossBuilder = std::function<ag::Var(ag::Graph&, const std::vector<ag::Var>&)>;

/// Compares reverse-mode gradients of every input entry and every parameter
/// entry with central differences of step h.
///
/// Relative error per entry is |a − n| / max(|a|, |n|, floor).
GradCheckResult check_gradients(const LossBuilder& build, std::vector<Matrix> inputs,
                                const std::vector<ag::Parameter*>& params, double h = 1e-4,
                                double floor = 1e-6);

}  // namespace pixpoint
