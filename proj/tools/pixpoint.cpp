// Command-line entry point: dataset generation, staged training, evaluation,
// queries, part transfer and the self-test suite.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pixpoint/error.hpp"
#include "pixpoint/parttransfer.hpp"
#include "pixpoint/selftest.hpp"
#include "pixpoint/session.hpp"

using namespace pixpoint;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string data = "data";
  std::string run = "run";
};

config::RunConfig load_config(const Common& c) {
  json j = config::to_json(config::default_config());
  if (!c.config_path.empty()) {
    const config::RunConfig file = config::load(c.config_path);
    j = config::to_json(file);
  }
  for (const std::string& o : c.overrides) config::apply_override(j, o);
  return config::from_json(j);
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return 2;
    case ErrorCode::kMissingCheckpoint:
    case ErrorCode::kStageOrder: return 3;
    case ErrorCode::kDatasetMismatch:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kChecksum:
    case ErrorCode::kTruncated: return 4;
    case ErrorCode::kNumerical: return 5;
    case ErrorCode::kIo: return 6;
    default: return 1;
  }
}

std::pair<int, int> parse_pair(const std::string& s, const char* what) {
  int a = 0, b = 0;
  char comma = 0;
  std::istringstream is(s);
  if (!(is >> a >> comma >> b) || comma != ',')
    fail(ErrorCode::kInvalidArgument, std::string(what) + " must look like a,b: " + s);
  return {a, b};
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) ks.push_back(std::stoul(item));
  require(!ks.empty(), ErrorCode::kConfig, "empty k list");
  return ks;
}

std::unique_ptr<Session> open_session(const config::RunConfig& cfg, const Common& c) {
  data::Corpus corpus = data::read_corpus(c.data);
  check_dataset(corpus, cfg);
  return std::make_unique<Session>(cfg, std::move(corpus));
}

/// Loads the run checkpoint; the model must have finished at least one stage.
int load_trained(Session& s, const Common& c) {
  const RunPaths run{c.run};
  s.load(run.checkpoint());
  const auto& st = s.state();
  const int done = st.stage_complete ? st.stage : st.stage - 1;
  require(done >= 1, ErrorCode::kMissingCheckpoint, "checkpoint has no completed stage");
  return done;
}

const PreparedObject& find_object(Session& s, int resolution, int id) {
  for (bool held : {true, false}) {
    const PreparedSet& set = s.prepared(resolution, held);
    for (std::size_t i = 0; i < set.size(); ++i)
      if (set[i].record->instance.object_id == id) return set[i];
  }
  fail(ErrorCode::kInvalidArgument, "no object with id " + std::to_string(id));
}

void print(const json& j) { std::cout << j.dump() << '\n'; }

int cmd_gen_data(const Common& c, const std::string& out_dir) {
  const config::RunConfig cfg = load_config(c);
  const auto t0 = std::chrono::steady_clock::now();
  const data::Corpus corpus = data::generate_corpus(cfg.corpus);
  const std::string dir = out_dir.empty() ? c.data : out_dir;
  const data::Manifest m = data::write_corpus(corpus, dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(RunPaths{c.run}, cfg, json{{"event", "gen-data"}, {"dataset", dir}, {"objects", m.objects.size()}});
  print(json{{"event", "gen-data"}, {"dataset", dir}, {"objects", m.objects.size()}, {"seconds", secs}});
  return 0;
}

int cmd_train(const Common& c, int only_stage, std::size_t steps, bool no_eval) {
  const config::RunConfig cfg = load_config(c);
  auto session = open_session(cfg, c);
  const RunPaths run{c.run};
  std::filesystem::create_directories(run.root);
  if (std::filesystem::exists(run.checkpoint())) session->load(run.checkpoint());
  append_manifest(run, cfg, json{{"event", "train"}, {"dataset", c.data}, {"stage", only_stage}, {"steps", steps}});
  train::TrainState& st = session->state();
  std::vector<int> stages;
  if (only_stage) {
    stages.push_back(only_stage);
  } else {
    const int first = st.stage == 0 ? 1 : st.stage_complete ? st.stage + 1 : st.stage;
    for (int s = first; s <= 3; ++s) stages.push_back(s);
  }
  for (int stage : stages) {
    const auto t0 = std::chrono::steady_clock::now();
    session->train_stage(
        stage,
        [&](const train::StepRecord& r, const train::TrainState&) {
          append_line(run.metrics(), train::to_json_line(r));
          if (r.step % 10 == 0)
            std::fprintf(stderr, "stage %d step %zu loss %.4f local %.4f global %.4f\n", r.stage, r.step, r.total,
                         r.local, r.global);
        },
        steps);
    session->save(run.checkpoint());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!st.stage_complete) {
      append_manifest(run, cfg, json{{"event", "stage_paused"}, {"stage", stage}, {"step", st.step}});
      print(json{{"event", "stage_paused"}, {"stage", stage}, {"step", st.step}, {"seconds", secs}});
      return 0;
    }
    std::filesystem::copy_file(run.checkpoint(), run.root / ("checkpoint_stage" + std::to_string(stage) + ".bin"),
                               std::filesystem::copy_options::overwrite_existing);
    json event{{"event", "stage_complete"}, {"stage", stage}, {"steps", st.step}};
    if (!no_eval) event["snapshot"] = to_json(session->snapshot(stage));
    append_manifest(run, cfg, event);
    event["seconds"] = secs;
    print(event);
  }
  return 0;
}

int cmd_eval_local(const Common& c, const std::string& protocol, const std::string& ks, int resolution) {
  const config::RunConfig cfg = load_config(c);
  auto session = open_session(cfg, c);
  const int stage = load_trained(*session, c);
  eval::LocalEvalOptions opts;
  opts.protocol = eval::parse_protocol(protocol);
  opts.ks = ks.empty() ? cfg.eval.ks : parse_ks(ks);
  opts.pixels_per_view = cfg.eval.pixels_per_view;
  opts.seed = cfg.eval.seed;
  const int res = resolution ? resolution : session->stage_resolution(stage);
  const eval::LocalReport rep = eval::evaluate_local(session->model(), session->prepared(res, true), opts);
  for (std::size_t i = 0; i < opts.ks.size(); ++i)
    print(json{{"metric", "loc_acc"},
               {"protocol", protocol},
               {"stage", stage},
               {"resolution", res},
               {"k", opts.ks[i]},
               {"value", rep.model.scores[i]},
               {"baseline", rep.baseline.scores[i]},
               {"ceiling", rep.ceiling.scores[i]},
               {"queries", rep.queries}});
  append_manifest(RunPaths{c.run}, cfg, json{{"event", "eval-local"}, {"protocol", protocol}, {"report", to_json(rep)}});
  return 0;
}

int cmd_eval_retrieval(const Common& c, const std::string& protocol, const std::string& ks, bool no_teacher) {
  const config::RunConfig cfg = load_config(c);
  auto session = open_session(cfg, c);
  const int stage = load_trained(*session, c);
  const auto klist = ks.empty() ? cfg.eval.ks : parse_ks(ks);
  const int res = session->stage_resolution(stage);
  const bool teacher = !no_teacher && cfg.stages[static_cast<std::size_t>(stage - 1)].enable_fusion;
  const eval::RetrievalReport rep = eval::evaluate_retrieval(
      session->model(), session->prepared(res, true), eval::parse_protocol(protocol), teacher, klist, cfg.eval.seed);
  for (std::size_t i = 0; i < klist.size(); ++i)
    print(json{{"metric", "recall"}, {"protocol", protocol}, {"stage", stage}, {"k", klist[i]}, {"value", rep.result.recall[i]}});
  print(json{{"metric", "mrr"}, {"protocol", protocol}, {"stage", stage}, {"value", rep.result.mrr}});
  print(json{{"metric", "chance"}, {"protocol", protocol}, {"recall1", rep.chance.recall1}, {"mrr", rep.chance.mrr}});
  append_manifest(RunPaths{c.run}, cfg,
                  json{{"event", "eval-retrieval"}, {"protocol", protocol}, {"report", to_json(rep)}});
  return 0;
}

struct QueryArgs {
  std::string direction = "2d3d";
  int object = 0;
  int other = -1;
  std::size_t view = 0;
  std::string pixel;
  std::size_t token = 0;
  std::size_t top = 5;
};

int cmd_query(const Common& c, const QueryArgs& q) {
  const config::RunConfig cfg = load_config(c);
  auto session = open_session(cfg, c);
  const int stage = load_trained(*session, c);
  const int res = session->stage_resolution(stage);
  const PreparedObject& obj = find_object(*session, res, q.object);
  json out{{"direction", q.direction}, {"object", q.object}};
  if (q.direction == "2d3d") {
    const auto [u, v] = parse_pair(q.pixel, "--pixel");
    const eval::Ranked r = eval::query_2d_to_3d(session->model(), obj, q.view, v, u);
    const auto truth = obj.render(q.view).map.xyz(v, u);
    out["view"] = q.view;
    out["pixel"] = {u, v};
    out["ground_truth"] = truth;
    json hits = json::array();
    for (std::size_t i = 0; i < std::min(q.top, r.index.size()); ++i) {
      const std::size_t n = r.index[i];
      hits.push_back({{"token", n},
                      {"similarity", r.similarity[i]},
                      {"center", {obj.field.centers(n, 0), obj.field.centers(n, 1), obj.field.centers(n, 2)}}});
    }
    out["tokens"] = hits;
  } else if (q.direction == "3d2d") {
    std::vector<std::size_t> views(obj.view_count());
    for (std::size_t i = 0; i < views.size(); ++i) views[i] = i;
    const auto hits = eval::query_3d_to_2d(session->model(), obj, q.token, views);
    out["token"] = q.token;
    json arr = json::array();
    for (std::size_t i = 0; i < std::min(q.top, hits.size()); ++i)
      arr.push_back({{"view", hits[i].view}, {"pixel", {hits[i].col, hits[i].row}}, {"similarity", hits[i].similarity}});
    out["pixels"] = arr;
  } else if (q.direction == "3d3d") {
    const PreparedObject& other = find_object(*session, res, q.other < 0 ? q.object : q.other);
    const eval::Ranked r = eval::query_3d_to_3d(session->model(), obj, q.token, other);
    out["token"] = q.token;
    out["other"] = other.record->instance.object_id;
    json arr = json::array();
    for (std::size_t i = 0; i < std::min(q.top, r.index.size()); ++i)
      arr.push_back({{"token", r.index[i]}, {"similarity", r.similarity[i]}});
    out["tokens"] = arr;
  } else {
    fail(ErrorCode::kInvalidArgument, "direction must be 2d3d, 3d2d or 3d3d");
  }
  print(out);
  return 0;
}

void dump_obj(const std::filesystem::path& path, const data::ObjectInstance& inst,
              const std::vector<std::uint32_t>& region) {
  std::vector<char> in(inst.faces.size(), 0);
  for (std::uint32_t f : region) in[f] = 1;
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << "# region faces red, others grey\n";
  for (std::size_t f = 0; f < inst.faces.size(); ++f)
    for (std::uint32_t v : inst.faces[f])
      out << "v " << inst.vertices(v, 0) << ' ' << inst.vertices(v, 1) << ' ' << inst.vertices(v, 2)
          << (in[f] ? " 0.9 0.1 0.1\n" : " 0.6 0.6 0.6\n");
  for (std::size_t f = 0; f < inst.faces.size(); ++f)
    out << "f " << 3 * f + 1 << ' ' << 3 * f + 2 << ' ' << 3 * f + 3 << '\n';
}

struct TransferArgs {
  int object = -1;
  std::size_t view = 0;
  std::string click;
  std::string mask;
  std::string dump;
  std::size_t evaluate = 0;
};

int cmd_part_transfer(const Common& c, const TransferArgs& a) {
  const config::RunConfig cfg = load_config(c);
  auto session = open_session(cfg, c);
  const int stage = load_trained(*session, c);
  const int res = session->stage_resolution(stage);
  if (a.evaluate > 0) {
    const part::TransferReport rep =
        part::evaluate_transfer(session->model(), session->prepared(res, true), cfg.transfer, a.evaluate, cfg.eval.seed);
    for (const auto& t : rep.triples)
      print(json{{"object", t.object_id}, {"view", t.view},        {"click", {t.col, t.row}},
                 {"part", t.part_label},  {"status", part::status_name(t.status)},
                 {"iou", t.iou},          {"area_iou", t.area_iou}, {"connected", t.connected},
                 {"faces", t.region_faces}});
    const json summary{{"metric", "part_transfer"}, {"triples", rep.triples.size()}, {"mean_iou", rep.mean_iou},
                       {"mean_area_iou", rep.mean_area_iou}, {"all_connected", rep.all_connected},
                       {"no_region", rep.no_region}};
    print(summary);
    append_manifest(RunPaths{c.run}, cfg, json{{"event", "part-transfer-eval"}, {"summary", summary}});
    return 0;
  }
  require(a.object >= 0 && !a.click.empty(), ErrorCode::kInvalidArgument, "part-transfer needs --object and --click");
  const PreparedObject& obj = find_object(*session, res, a.object);
  require(a.view < obj.view_count(), ErrorCode::kInvalidArgument, "view out of range");
  const auto [u, v] = parse_pair(a.click, "--click");
  const part::PartMask2D mask = a.mask.empty() ? part::select_mask(obj.render(a.view), a.view, v, u)
                                               : part::load_mask(a.mask, obj.render(a.view), a.view, v, u);
  const part::TransferResult r = part::transfer(session->model(), obj, mask, cfg.transfer);
  json out{{"object", a.object},
           {"view", a.view},
           {"click", {u, v}},
           {"status", part::status_name(r.status)},
           {"mask_part", mask.part_label},
           {"mask_pixels", mask.area()},
           {"active_patches", r.active},
           {"active_without_descriptor", r.active_invalid},
           {"matches_raw", r.matches.raw},
           {"matches_dedup", r.matches.deduplicated},
           {"matches_kept", r.matches.matches.size()},
           {"dbscan_labels", r.labels},
           {"dominant_cluster", r.dominant},
           {"cluster_tokens", r.cluster_tokens},
           {"seed_faces", r.region.seeds.size()},
           {"faces", r.region.faces}};
  if (mask.part_label >= 0) {
    const auto gt = part::part_faces(obj.record->instance, mask.part_label);
    out["iou"] = part::face_iou(r.region.faces, gt);
  }
  if (!a.dump.empty()) dump_obj(a.dump, obj.record->instance, r.region.faces);
  print(out);
  return 0;
}

int report_checks(const std::vector<selftest::Check>& checks) {
  for (const auto& ch : checks)
    print(json{{"check", ch.name}, {"pass", ch.pass}, {"detail", ch.detail}});
  return selftest::all_pass(checks) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixpoint: dual-branch 2D-3D alignment at desk scale"};
  app.require_subcommand(1);
  Common common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file (defaults when omitted)");
    sub->add_option("--set", common.overrides, "Override one key, e.g. train.seed=9 or stages.1.hard_k=32");
    sub->add_option("--data", common.data, "Dataset directory")->capture_default_str();
    sub->add_option("--run", common.run, "Run directory (checkpoint, metrics, manifest)")->capture_default_str();
  };

  std::string out_dir;
  auto* gen = app.add_subcommand("gen-data", "Generate and write the synthetic corpus");
  add_common(gen);
  gen->add_option("--out", out_dir, "Output directory (defaults to --data)");

  int stage = 0;
  std::size_t steps = 0;
  bool no_eval = false;
  auto* tr = app.add_subcommand("train", "Run training stages, resuming from the run checkpoint");
  add_common(tr);
  tr->add_option("--stage", stage, "Run only this stage (1-3); default runs all remaining stages");
  tr->add_option("--steps", steps, "Stop after this many steps (the checkpoint allows resuming)");
  tr->add_flag("--no-eval", no_eval, "Skip stage-boundary evaluation");

  std::string protocol = "s4-random", ks;
  int resolution = 0;
  auto* el = app.add_subcommand("eval-local", "Held-out LocAcc@k");
  add_common(el);
  el->add_option("--protocol", protocol, "s1-random | s4-random | s4-ortho")->capture_default_str();
  el->add_option("--ks", ks, "Comma-separated k list");
  el->add_option("--resolution", resolution, "Render tier (default: the last trained stage's)");

  bool no_teacher = false;
  auto* er = app.add_subcommand("eval-retrieval", "Held-out image-to-shape retrieval");
  add_common(er);
  er->add_option("--protocol", protocol, "s1-random | s4-random | s4-ortho")->capture_default_str();
  er->add_option("--ks", ks, "Comma-separated k list");
  er->add_flag("--no-teacher", no_teacher, "Disable the teacher fusion term");

  QueryArgs qa;
  auto* qu = app.add_subcommand("query", "Correspondence queries");
  add_common(qu);
  qu->add_option("--direction", qa.direction, "2d3d | 3d2d | 3d3d")->capture_default_str();
  qu->add_option("--object", qa.object, "Object id")->required();
  qu->add_option("--other", qa.other, "Second object id for 3d3d");
  qu->add_option("--view", qa.view, "View index for 2d3d");
  qu->add_option("--pixel", qa.pixel, "u,v pixel (column,row) for 2d3d");
  qu->add_option("--token", qa.token, "Token index for 3d2d and 3d3d");
  qu->add_option("--top", qa.top, "Results to print")->capture_default_str();

  TransferArgs ta;
  auto* pt = app.add_subcommand("part-transfer", "Transfer a 2D part mask to a 3D face region");
  add_common(pt);
  pt->add_option("--object", ta.object, "Object id");
  pt->add_option("--view", ta.view, "View index");
  pt->add_option("--click", ta.click, "u,v click (column,row)");
  pt->add_option("--mask", ta.mask, "Plain PBM mask instead of the rendered part mask");
  pt->add_option("--dump", ta.dump, "Write the mesh with the region colored (OBJ with vertex colors)");
  pt->add_option("--evaluate", ta.evaluate, "Score N random clicks per held-out multi-part object");

  std::size_t instances = 20;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gc->add_option("--instances", instances, "Random instances per block")->capture_default_str();

  auto* cf = app.add_subcommand("config", "Print the resolved configuration and its hash");
  add_common(cf);

  auto* st = app.add_subcommand("selftest", "Gradient checks, closed forms and brute-force oracles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_data(common, out_dir);
    if (*tr) return cmd_train(common, stage, steps, no_eval);
    if (*el) return cmd_eval_local(common, protocol, ks, resolution);
    if (*er) return cmd_eval_retrieval(common, protocol, ks, no_teacher);
    if (*qu) return cmd_query(common, qa);
    if (*pt) return cmd_part_transfer(common, ta);
    if (*cf) {
      const config::RunConfig cfg = load_config(common);
      print(json{{"config", config::to_json(cfg)}, {"config_hash", config::hex64(config::config_hash(cfg))}});
      return 0;
    }
    if (*gc) return report_checks(selftest::gradient_checks(instances, 1));
    if (*st) {
      auto checks = selftest::gradient_checks(20, 1);
      for (auto& c : selftest::closed_form_checks(10000, 2)) checks.push_back(c);
      for (auto& c : selftest::oracle_checks(100, 500, 3)) checks.push_back(c);
      return report_checks(checks);
    }
  } catch (const Error& e) {
    std::cerr << "error [" << error_code_name(e.code()) << "]: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
