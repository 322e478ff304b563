#include "doctest.h"
#include "pixpoint/selftest.hpp"

using namespace pixpoint;

namespace {

void require_all(const std::vector<selftest::Check>& checks) {
  for (const auto& c : checks) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.pass);
  }
}

}  // namespace

TEST_CASE("gradient checks of every differentiable block") { require_all(selftest::gradient_checks(5, 11)); }

TEST_CASE("closed-form loss values") { require_all(selftest::closed_form_checks(500, 12)); }

TEST_CASE("metric and geometry oracles") { require_all(selftest::oracle_checks(20, 200, 13)); }
