#pragma once

// Gradient checks, closed-form loss values and brute-force metric oracles,
// shared by the `selftest` subcommand and the acceptance runner.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace pixpoint::selftest {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Central-difference checks of every differentiable block, `instances` random
/// small cases each; passes when the worst relative error is ≤ tolerance.
std::vector<Check> gradient_checks(std::size_t instances, std::uint64_t seed, double tolerance = 1e-4);

/// Closed-form loss values and KL non-negativity over `kl_trials` random cases.
std::vector<Check> closed_form_checks(std::size_t kl_trials, std::uint64_t seed);

/// Library metrics and geometry kernels against independent brute-force
/// implementations on `instances` random cases of at most `max_size` items.
std::vector<Check> oracle_checks(std::size_t instances, std::size_t max_size, std::uint64_t seed);

bool all_pass(const std::vector<Check>& checks);

}  // namespace pixpoint::selftest
