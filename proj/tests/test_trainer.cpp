#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pixpoint/binio.hpp"
#include "pixpoint/error.hpp"
#include "pixpoint/session.hpp"
#include "support.hpp"

using namespace pixpoint;
namespace fs = std::filesystem;

namespace {

const data::Corpus& tiny_corpus() {
  static const data::Corpus corpus = data::generate_corpus(testing::tiny_config().corpus);
  return corpus;
}

std::unique_ptr<Session> tiny_session(config::RunConfig cfg = testing::tiny_config()) {
  return std::make_unique<Session>(cfg, tiny_corpus());
}

std::vector<Matrix> values(Model& m) {
  std::vector<Matrix> out;
  for (auto* p : m.parameters()) out.push_back(p->value);
  return out;
}

std::vector<std::string> run(Session& s, int stage, std::size_t stop_after = 0) {
  std::vector<std::string> lines;
  s.train_stage(
      stage, [&](const train::StepRecord& r, const train::TrainState&) { lines.push_back(train::to_json_line(r)); },
      stop_after);
  return lines;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pixpoint_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("schedule length") {
  train::StageConfig c;
  c.batch_size = 30;
  c.epochs = 5;
  CHECK(train::steps_per_epoch(200, c) == 7);
  CHECK(train::total_steps(200, c, {20.0, 4.0}) == 140);
  CHECK(train::total_steps(3, c, {1.0, 0.01}) == 1);
}

TEST_CASE("identical seeds give identical records and parameters") {
  auto a = tiny_session(), b = tiny_session();
  const auto ra = run(*a, 1), rb = run(*b, 1);
  CHECK(ra.size() == 3);
  CHECK(ra == rb);
  CHECK(values(a->model()) == values(b->model()));
  auto c = tiny_session([] {
    auto cfg = testing::tiny_config();
    cfg.train.seed = 6;
    return cfg;
  }());
  CHECK(run(*c, 1) != ra);
}

TEST_CASE("resume from a mid-stage checkpoint reproduces the uninterrupted run") {
  const fs::path dir = scratch("resume");
  auto full = tiny_session();
  auto lines = run(*full, 1);
  for (const auto& l : run(*full, 2)) lines.push_back(l);

  auto first = tiny_session();
  auto resumed_lines = run(*first, 1);
  auto part = run(*first, 2, 2);
  first->save(dir / "ck.bin");
  CHECK_FALSE(first->state().stage_complete);
  auto second = tiny_session();
  second->load(dir / "ck.bin");
  CHECK(second->state().step == 2);
  for (const auto& l : part) resumed_lines.push_back(l);
  for (const auto& l : run(*second, 2)) resumed_lines.push_back(l);
  CHECK(resumed_lines == lines);
  CHECK(values(second->model()) == values(full->model()));
  CHECK(second->state().optimizer.state() == full->state().optimizer.state());
  fs::remove_all(dir);
}

TEST_CASE("checkpoints round-trip and reject damage or other model shapes") {
  const fs::path dir = scratch("ckpt");
  auto a = tiny_session();
  run(*a, 1);
  a->save(dir / "ck.bin");
  auto b = tiny_session();
  b->load(dir / "ck.bin");
  CHECK(values(a->model()) == values(b->model()));
  CHECK(b->state().stage == 1);
  CHECK(b->state().stage_complete);

  auto other_cfg = testing::tiny_config();
  other_cfg.model.dsh = 20;
  auto c = tiny_session(other_cfg);
  CHECK(code_of([&] { c->load(dir / "ck.bin"); }) == ErrorCode::kConfig);
  CHECK(code_of([&] { b->load(dir / "absent.bin"); }) == ErrorCode::kMissingCheckpoint);

  auto bytes = io::read_file(dir / "ck.bin");
  bytes[bytes.size() / 2] ^= 0x20;
  io::write_file(dir / "flip.bin", bytes);
  CHECK(code_of([&] { b->load(dir / "flip.bin"); }) == ErrorCode::kChecksum);
  bytes.resize(10);
  io::write_file(dir / "short.bin", bytes);
  CHECK(code_of([&] { b->load(dir / "short.bin"); }) == ErrorCode::kTruncated);
  fs::remove_all(dir);
}

TEST_CASE("stage order is enforced") {
  auto s = tiny_session();
  CHECK(code_of([&] { run(*s, 2); }) == ErrorCode::kMissingCheckpoint);
  CHECK(code_of([&] { run(*s, 3); }) == ErrorCode::kMissingCheckpoint);
  run(*s, 1);
  CHECK(code_of([&] { run(*s, 1); }) == ErrorCode::kStageOrder);
  CHECK(code_of([&] { run(*s, 3); }) == ErrorCode::kStageOrder);
}

TEST_CASE("stage I leaves the global branch untouched; stage II re-draws it") {
  auto s = tiny_session();
  Model fresh(testing::tiny_config().model);
  auto global_values = [](Model& m) {
    std::vector<Matrix> out;
    for (auto* p : m.group("global")) out.push_back(p->value);
    return out;
  };
  const auto before = global_values(s->model());
  const auto lines = run(*s, 1);
  CHECK(global_values(s->model()) == before);
  for (const auto& l : lines) {
    const auto j = nlohmann::json::parse(l);
    CHECK(j["global"] == 0.0);
    CHECK(j["sd"] == 0.0);
  }
  train::begin_stage(s->model(), s->state(), 2);
  CHECK(global_values(s->model()) == global_values(fresh));
}

TEST_CASE("all three stages run with finite losses and snapshots") {
  auto s = tiny_session();
  for (int stage = 1; stage <= 3; ++stage) {
    for (const auto& l : run(*s, stage)) {
      const auto j = nlohmann::json::parse(l);
      CHECK(std::isfinite(j["total"].get<double>()));
      CHECK(j["tau_g"].get<double>() >= global::kTauMin);
      if (stage == 3) CHECK(j["sd"].get<double>() >= 0.0);
    }
    const auto snap = s->snapshot(stage);
    CHECK(snap.local.model.scores.size() == 5);
    for (std::size_t i = 1; i < 5; ++i) CHECK(snap.local.model.scores[i] >= snap.local.model.scores[i - 1]);
    CHECK((stage == 3) == (snap.high_resolution == 48));
    CHECK((stage > 1) == !snap.single_view.result.ks.empty());
  }
}

TEST_CASE("run manifests refuse a different config and datasets are checked") {
  const fs::path dir = scratch("manifest");
  const RunPaths run{dir};
  auto cfg = testing::tiny_config();
  append_manifest(run, cfg, {{"event", "a"}});
  append_manifest(run, cfg, {{"event", "b"}});
  auto other = cfg;
  other.train.seed = 99;
  CHECK(code_of([&] { append_manifest(run, other, {{"event", "c"}}); }) == ErrorCode::kConfig);
  std::ifstream in(run.manifest());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (n == 0) CHECK(j["event"] == "created");
    CHECK(j.contains("config_hash"));
    ++n;
  }
  CHECK(n == 3);
  check_dataset(tiny_corpus(), cfg);
  auto moved = cfg;
  moved.corpus.seed = 8;
  CHECK(code_of([&] { check_dataset(tiny_corpus(), moved); }) == ErrorCode::kDatasetMismatch);
  fs::remove_all(dir);
}
