#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pixpoint/config.hpp"
#include "pixpoint/error.hpp"

using namespace pixpoint;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("defaults round-trip through JSON") {
  const auto cfg = config::default_config();
  const auto back = config::from_json(config::to_json(cfg));
  CHECK(config::to_json(back) == config::to_json(cfg));
  CHECK(config::config_hash(back) == config::config_hash(cfg));
  CHECK(cfg.stages == train::default_stage_configs());
}

TEST_CASE("the default schedule holds the published stage values") {
  const auto s = train::default_stage_configs();
  CHECK_FALSE(s[0].enable_global);
  CHECK(s[1].enable_global);
  CHECK(s[1].enable_fusion);
  CHECK(s[1].hard_k == 64);
  CHECK(s[2].hard_k == 96);
  CHECK(s[2].enable_fusion);
  CHECK(s[2].high_resolution);
  CHECK(s[0].hard_k == 0);
}

TEST_CASE("partial documents keep defaults") {
  const auto cfg = config::from_json(json{{"train", {{"seed", 9}}}, {"dataset", {{"train_per_category", 4}}}});
  CHECK(cfg.train.seed == 9);
  CHECK(cfg.corpus.train_per_category == 4);
  CHECK(cfg.model.n3d == config::default_config().model.n3d);
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK(code_of([] { config::from_json(json{{"trian", json::object()}}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { config::from_json(json{{"model", {{"n3d_tokens", 4}}}}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { config::from_json(json{{"model", {{"n3d", "many"}}}}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { config::from_json(json{{"dataset", {{"resolution", 60}}}}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { config::from_json(json{{"dataset", {{"categories", {42}}}}}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { config::from_json(json{{"transfer", {{"eps", -1}}}}); }) == ErrorCode::kConfig);
}

TEST_CASE("overrides address nested keys and array items") {
  json j = config::to_json(config::default_config());
  config::apply_override(j, "train.seed=123");
  config::apply_override(j, "stages.1.hard_k=32");
  config::apply_override(j, "transfer.eps=0.1");
  const auto cfg = config::from_json(j);
  CHECK(cfg.train.seed == 123);
  CHECK(cfg.stages[1].hard_k == 32);
  CHECK(cfg.transfer.eps == doctest::Approx(0.1));
  CHECK(config::config_hash(cfg) != config::config_hash(config::default_config()));
  CHECK(code_of([&] { config::apply_override(j, "no_equals_sign"); }) == ErrorCode::kConfig);
  config::apply_override(j, "train.sedd=1");
  CHECK(code_of([&] { config::from_json(j); }) == ErrorCode::kConfig);
}

TEST_CASE("config files: read, parse errors, missing file") {
  const auto dir = std::filesystem::temp_directory_path() / "pixpoint_test_cfg";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "ok.json") << R"({"eval": {"seed": 3}})";
    std::ofstream(dir / "bad.json") << R"({"eval": {"seed": )";
  }
  CHECK(config::load(dir / "ok.json").eval.seed == 3);
  CHECK(code_of([&] { config::load(dir / "bad.json"); }) == ErrorCode::kConfig);
  CHECK(code_of([&] { config::load(dir / "missing.json"); }) == ErrorCode::kConfig);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluation resolution follows the stage") {
  const auto cfg = config::default_config();
  CHECK(config::eval_resolution(cfg, 1) == 64);
  CHECK(config::eval_resolution(cfg, 3) == 128);
  CHECK(config::hex64(0xabcull) == "0000000000000abc");
}
