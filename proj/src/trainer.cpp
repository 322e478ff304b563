#include "pixpoint/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "pixpoint/binio.hpp"
#include "pixpoint/corpus.hpp"
#include "pixpoint/error.hpp"

namespace pixpoint::train {

namespace {

using Rng = std::mt19937_64;

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t x = a * 0x9e3779b97f4a7c15ULL ^ (b + 0x632be59bd9b4e019ULL) * 0xbf58476d1ce4e5b9ULL ^ c;
  x ^= x >> 31;
  x *= 0x94d049bb133111ebULL;
  return x ^ (x >> 29);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int stage, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix(seed, static_cast<std::uint64_t>(stage), 0x1000 + epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::size_t> sample_views(std::size_t available, std::size_t max_views, Rng& rng) {
  const std::size_t upper = std::min(max_views, available);
  const std::size_t s = std::uniform_int_distribution<std::size_t>(1, upper)(rng);
  std::vector<std::size_t> all(available);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, available - 1)(rng);
    std::swap(all[i], all[j]);
  }
  all.resize(s);
  return all;
}

ag::Var add_all(ag::Graph& g, const std::vector<ag::Var>& terms) {
  if (terms.empty()) return g.constant(Matrix(1, 1));
  ag::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ag::add(acc, terms[i]);
  return acc;
}

}  // namespace

std::array<StageConfig, 3> default_stage_configs() {
  StageConfig s1;
  s1.stage = 1;
  s1.enable_global = false;
  s1.enable_fusion = false;
  s1.lambda_local = 1.0;
  s1.lambda_global = 0.0;
  s1.lambda_sub = 0.0;
  s1.lambda_sd = 0.0;
  s1.hard_k = 0;
  s1.hard_weight = 0.0;
  s1.delta = 0.020;
  s1.tau_d = 0.07;
  s1.base_lr = 1e-4;
  s1.lr_shared = 1.0;
  s1.lr_local = 1.0;
  s1.lr_global = 1.0;
  s1.lr_vae3d = 1.0;
  s1.batch_size = 30;
  s1.epochs = 5;
  s1.high_resolution = false;

  StageConfig s2 = s1;
  s2.stage = 2;
  s2.enable_global = true;
  s2.enable_fusion = true;
  s2.lambda_local = 0.25;
  s2.lambda_global = 1.0;
  s2.lambda_sub = 0.05;
  s2.lambda_sd = 0.10;
  s2.hard_k = 64;
  s2.hard_weight = 0.25;
  s2.delta = 0.020;
  s2.tau_d = 0.07;
  s2.base_lr = 6e-5;
  s2.lr_shared = 0.10;
  s2.lr_local = 0.30;
  s2.lr_global = 1.0;
  s2.batch_size = 25;
  s2.epochs = 3;

  StageConfig s3 = s2;
  s3.stage = 3;
  s3.lambda_local = 0.50;
  s3.lambda_global = 0.80;
  s3.lambda_sub = 0.05;
  s3.lambda_sd = 0.20;
  s3.hard_k = 96;
  s3.hard_weight = 0.50;
  s3.delta = 0.015;
  s3.tau_d = 0.05;
  s3.base_lr = 3e-5;
  s3.lr_shared = 0.05;
  s3.lr_local = 0.50;
  s3.lr_global = 1.0;
  s3.batch_size = 7;
  s3.epochs = 3;
  s3.high_resolution = true;
  return {s1, s2, s3};
}

void validate(const StageConfig& c) {
  require(c.stage >= 1 && c.stage <= 3, ErrorCode::kConfig, "stage must be 1, 2 or 3");
  require(c.lambda_local >= 0 && c.lambda_global >= 0 && c.lambda_sub >= 0 && c.lambda_sd >= 0,
          ErrorCode::kConfig, "loss weights must be non-negative");
  if (c.stage == 1)
    require(!c.enable_global && c.lambda_global == 0 && c.lambda_sub == 0 && c.lambda_sd == 0, ErrorCode::kConfig,
            "stage 1 trains without the global branch");
  if (!c.enable_global)
    require(c.lambda_global == 0 && c.lambda_sub == 0 && c.lambda_sd == 0, ErrorCode::kConfig,
            "global loss weights need the global branch");
  require(c.delta >= 0 && c.tau_d > 0 && c.base_lr > 0 && c.hard_weight >= 0, ErrorCode::kConfig,
          "delta, tau_d, base_lr and hard_weight out of range");
  require(c.lr_shared >= 0 && c.lr_local >= 0 && c.lr_global >= 0 && c.lr_vae3d >= 0, ErrorCode::kConfig,
          "learning-rate scales must be non-negative");
  require(c.batch_size >= 1 && c.epochs >= 1, ErrorCode::kConfig, "batch size and epochs must be positive");
}

std::size_t steps_per_epoch(std::size_t objects, const StageConfig& cfg) {
  return (objects + cfg.batch_size - 1) / cfg.batch_size;
}

std::size_t total_steps(std::size_t objects, const StageConfig& cfg, const DeskScale& desk) {
  const auto epochs = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.epochs) * desk.epoch_multiplier));
  return std::max<std::size_t>(1, epochs) * steps_per_epoch(objects, cfg);
}

std::string to_json_line(const StepRecord& r) {
  nlohmann::ordered_json j{{"stage", r.stage},
                           {"step", r.step},
                           {"epoch", r.epoch},
                           {"total", r.total},
                           {"local", r.local},
                           {"local_forward", r.local_forward},
                           {"local_reverse", r.local_reverse},
                           {"hard_forward", r.hard_forward},
                           {"hard_reverse", r.hard_reverse},
                           {"global", r.global},
                           {"sub", r.sub},
                           {"sd", r.sd},
                           {"contrib_local", r.contrib_local},
                           {"contrib_global", r.contrib_global},
                           {"contrib_sub", r.contrib_sub},
                           {"contrib_sd", r.contrib_sd},
                           {"grad_norm", r.grad_norm},
                           {"tau_g", r.tau_g},
                           {"lr", r.lr},
                           {"local_terms", r.local_terms},
                           {"subset_terms", r.subset_terms}};
  return j.dump();
}

StepLoss compute_step_loss(ag::Graph& g, Model& model, const PreparedSet& data, const StageConfig& cfg,
                           const TrainSettings& settings, std::size_t step) {
  validate(cfg);
  require(data.size() > 0, ErrorCode::kInvalidArgument, "training set is empty");
  const ModelConfig& mc = model.config();
  const std::size_t spe = steps_per_epoch(data.size(), cfg);
  StepRecord rec;
  rec.stage = cfg.stage;
  rec.step = step;
  rec.epoch = step / spe;
  const auto order = epoch_order(data.size(), settings.seed, cfg.stage, rec.epoch);
  const std::size_t begin = (step % spe) * cfg.batch_size;
  const std::size_t end = std::min(data.size(), begin + cfg.batch_size);
  Rng rng(mix(settings.seed, static_cast<std::uint64_t>(cfg.stage), step));

  align::LocalLossConfig lcfg;
  lcfg.sigma = settings.sigma;
  lcfg.tau = settings.tau_l;
  lcfg.delta = cfg.delta;
  lcfg.hard_k = cfg.hard_k;
  lcfg.hard_weight = cfg.hard_weight;

  std::vector<ag::Var> locals, subsets, g2_rows, g3_rows;
  std::vector<double> teacher_rows;
  for (std::size_t b = begin; b < end; ++b) {
    const PreparedObject& obj = data[order[b]];
    const auto views = sample_views(obj.view_count(), settings.max_views, rng);
    Encoded2d enc2 = encode_views(g, model, obj, views);
    Encoded3d enc3 = encode_tokens(g, model, obj);

    std::vector<const tok2d::PatchGrid*> grids;
    std::vector<const data::PositionMap*> maps;
    for (std::size_t s : views) {
      grids.push_back(&obj.views[s].grid);
      maps.push_back(&obj.render(s).map);
    }
    const tok2d::QuerySet qs = tok2d::sample_queries(grids, maps, mc.m_max);
    if (!qs.empty()) {
      std::vector<std::size_t> rows(qs.size());
      for (std::size_t m = 0; m < qs.size(); ++m) rows[m] = enc2.row_of(qs.view[m], qs.cell[m]);
      ag::Var d2 = model.local2d(g, ag::gather_rows(enc2.shared, rows));
      const align::Assignment a = align::assign(qs.q, obj.field.centers, lcfg);
      const align::LocalLoss ll = align::local_loss(g, d2, enc3.local, a, lcfg);
      if (!ll.skipped) {
        locals.push_back(ll.total);
        rec.local_forward += ll.forward;
        rec.local_reverse += ll.reverse;
        rec.hard_forward += ll.hard_forward;
        rec.hard_reverse += ll.hard_reverse;
      }
    }
    if (!cfg.enable_global || enc2.row_view.empty()) continue;
    Global2dResult g2 = encode_global2d(g, model, obj, enc2, cfg.enable_fusion);
    g2_rows.push_back(g2.descriptor);
    g3_rows.push_back(model.global3d().forward(g, enc3.shared));
    teacher_rows.insert(teacher_rows.end(), g2.teacher_mean.data.begin(), g2.teacher_mean.data.end());
    const std::size_t v = g2.valid_rows.size();
    if (v >= 2 && cfg.lambda_sub > 0) {
      const std::uint64_t mask = std::uniform_int_distribution<std::uint64_t>(1, (1ULL << v) - 2)(rng);
      std::vector<std::size_t> subset;
      for (std::size_t i = 0; i < v; ++i)
        if (mask >> i & 1ULL) subset.push_back(g2.valid_rows[i]);
      subsets.push_back(global::subset_loss(model.global2d().describe(g, g2.refined, subset), g2.descriptor));
    }
  }

  std::vector<ag::Var> contributions;
  rec.local_terms = locals.size();
  if (!locals.empty()) {
    const double inv = 1.0 / static_cast<double>(locals.size());
    ag::Var local = ag::scale(add_all(g, locals), inv);
    rec.local = local.scalar();
    rec.local_forward *= inv;
    rec.local_reverse *= inv;
    rec.hard_forward *= inv;
    rec.hard_reverse *= inv;
    ag::Var c = ag::scale(local, cfg.lambda_local);
    rec.contrib_local = c.scalar();
    contributions.push_back(c);
  }
  if (!g2_rows.empty()) {
    ag::Var G2 = ag::concat_rows(g2_rows), G3 = ag::concat_rows(g3_rows);
    if (cfg.lambda_global > 0) {
      ag::Var lg = global::global_loss(G2, G3, g.param(model.tau_g()));
      rec.global = lg.scalar();
      ag::Var c = ag::scale(lg, cfg.lambda_global);
      rec.contrib_global = c.scalar();
      contributions.push_back(c);
    }
    if (cfg.lambda_sd > 0) {
      const Matrix t(g2_rows.size(), mc.dt, teacher_rows);
      ag::Var sd = global::distill_loss(t, G2, G3, cfg.tau_d);
      rec.sd = sd.scalar();
      ag::Var c = ag::scale(sd, cfg.lambda_sd);
      rec.contrib_sd = c.scalar();
      contributions.push_back(c);
    }
  }
  rec.subset_terms = subsets.size();
  if (!subsets.empty()) {
    ag::Var sub = ag::scale(add_all(g, subsets), 1.0 / static_cast<double>(subsets.size()));
    rec.sub = sub.scalar();
    ag::Var c = ag::scale(sub, cfg.lambda_sub);
    rec.contrib_sub = c.scalar();
    contributions.push_back(c);
  }
  StepLoss out;
  out.total = add_all(g, contributions);
  rec.total = out.total.scalar();
  rec.tau_g = model.tau_g().value(0, 0);
  out.record = rec;
  return out;
}

std::vector<optim::ParamGroup> stage_groups(Model& model, const StageConfig& cfg) {
  std::vector<optim::ParamGroup> groups;
  groups.push_back({"shared", model.group("shared"), cfg.lr_shared});
  groups.push_back({"local", model.group("local"), cfg.lr_local});
  if (cfg.enable_global) groups.push_back({"global", model.group("global"), cfg.lr_global});
  groups.push_back({"vae3d", model.group("vae3d"), cfg.lr_vae3d});
  return groups;
}

StepRecord train_step(Model& model, TrainState& state, const PreparedSet& data, const StageConfig& cfg,
                      const TrainSettings& settings) {
  optim::zero_grads(model.parameters());
  ag::Graph g;
  StepLoss loss = compute_step_loss(g, model, data, cfg, settings, state.step);
  g.backward(loss.total);
  const auto groups = stage_groups(model, cfg);
  std::vector<ag::Parameter*> active;
  for (const auto& grp : groups) active.insert(active.end(), grp.params.begin(), grp.params.end());
  loss.record.grad_norm = optim::clip_global_norm(active, state.optimizer.config().clip_norm);
  const double lr = cfg.base_lr * settings.desk.lr_multiplier;
  loss.record.lr = lr;
  state.optimizer.step(groups, lr);
  global::clamp_temperature(model.tau_g());
  for (ag::Parameter* p : active)
    for (double v : p->value.data)
      require(std::isfinite(v), ErrorCode::kNumerical, "parameter " + p->name + " became non-finite");
  ++state.step;
  return loss.record;
}

void begin_stage(Model& model, TrainState& state, int stage) {
  require(stage >= 1 && stage <= 3, ErrorCode::kConfig, "stage must be 1, 2 or 3");
  if (state.stage == stage && !state.stage_complete) return;  // resume
  if (stage == 1) {
    require(state.stage == 0, ErrorCode::kStageOrder, "stage 1 already ran for this state");
  } else {
    require(state.stage != 0, ErrorCode::kMissingCheckpoint,
            "stage " + std::to_string(stage) + " needs the stage " + std::to_string(stage - 1) + " checkpoint");
    require(state.stage == stage - 1 && state.stage_complete, ErrorCode::kStageOrder,
            "stage " + std::to_string(stage) + " must follow a completed stage " + std::to_string(stage - 1));
    if (state.stage == 1) model.reset_global();
  }
  state.stage = stage;
  state.stage_complete = false;
  state.step = 0;
  state.optimizer = optim::AdamW(state.optimizer.config());
}

void run_stage(Model& model, TrainState& state, const PreparedSet& data, const StageConfig& cfg,
               const TrainSettings& settings, const StepCallback& on_step, std::size_t stop_after) {
  validate(cfg);
  require(state.stage == cfg.stage && !state.stage_complete, ErrorCode::kStageOrder,
          "run_stage: call begin_stage first");
  const std::size_t total = total_steps(data.size(), cfg, settings.desk);
  std::size_t ran = 0;
  while (state.step < total && (stop_after == 0 || ran < stop_after)) {
    const StepRecord rec = train_step(model, state, data, cfg, settings);
    ++ran;
    if (state.step == total) state.stage_complete = true;
    if (on_step) on_step(rec, state);
  }
}

std::uint64_t model_config_hash(const ModelConfig& c) {
  std::ostringstream os;
  os << c.f2d << ',' << c.dc << ',' << c.dt << ',' << c.dsh << ',' << c.dloc << ',' << c.dg << ',' << c.dvae << ','
     << c.n3d << ',' << c.k_neighbors << ',' << c.m_max << ',' << c.mlp_hidden << ',' << c.mlp_blocks << ','
     << c.heads << ',' << c.ffn_hidden << ',' << c.point_width << ',' << c.patch << ',' << c.backbone_seed << ','
     << c.teacher_seed << ',' << c.backbone_frequency;
  const std::string s = os.str();
  return data::fnv1a64(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'X', 'P', 'T', 'C', 'K', 'P', 'T'};
enum CheckpointTag : std::uint32_t { kHeader = 1, kParams = 2, kOptimizer = 3 };

void put_matrix(io::ByteWriter& w, const Matrix& m) {
  w.put<std::uint64_t>(m.rows);
  w.put<std::uint64_t>(m.cols);
  w.put_array(m.data.data(), m.data.size());
  w.put(data::fnv1a64(reinterpret_cast<const unsigned char*>(m.data.data()), m.data.size() * sizeof(double)));
}

Matrix get_matrix(io::ByteReader& r, const std::string& what) {
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  auto values = r.get_array<double>();
  const auto sum = r.get<std::uint64_t>();
  require(values.size() == rows * cols, ErrorCode::kTruncated, what + ": payload size mismatch");
  require(sum == data::fnv1a64(reinterpret_cast<const unsigned char*>(values.data()), values.size() * sizeof(double)),
          ErrorCode::kChecksum, what + ": blob checksum mismatch");
  return Matrix(rows, cols, std::move(values));
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(Model& model, const TrainState& state) {
  io::ByteWriter w;
  for (char c : kCheckpointMagic) w.put(c);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.section(kHeader, [&](io::ByteWriter& s) {
    s.put<std::int32_t>(state.stage);
    s.put<std::uint8_t>(state.stage_complete ? 1 : 0);
    s.put<std::uint64_t>(state.step);
    s.put<std::uint64_t>(state.seed);
    s.put<std::uint64_t>(model.config().seed);
    s.put<std::uint64_t>(model_config_hash(model.config()));
  });
  w.section(kParams, [&](io::ByteWriter& s) {
    const auto params = model.parameters();
    s.put<std::uint64_t>(params.size());
    for (ag::Parameter* p : params) {
      s.put_string(p->name);
      s.put<std::uint8_t>(p->decay ? 1 : 0);
      put_matrix(s, p->value);
    }
  });
  w.section(kOptimizer, [&](io::ByteWriter& s) {
    const optim::AdamWConfig& oc = state.optimizer.config();
    for (double v : {oc.beta1, oc.beta2, oc.eps, oc.weight_decay, oc.clip_norm}) s.put(v);
    s.put<std::uint64_t>(state.optimizer.state().size());
    for (const auto& [name, mom] : state.optimizer.state()) {
      s.put_string(name);
      s.put<std::uint64_t>(mom.steps);
      put_matrix(s, mom.m);
      put_matrix(s, mom.v);
    }
  });
  w.put(data::fnv1a64(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

void decode_checkpoint(const std::vector<unsigned char>& bytes, Model& model, TrainState& state) {
  constexpr std::size_t kHead = sizeof(kCheckpointMagic) + sizeof(std::uint32_t);
  require(bytes.size() >= kHead + sizeof(std::uint64_t), ErrorCode::kTruncated, "checkpoint too short");
  require(std::equal(kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic), bytes.begin()),
          ErrorCode::kVersionMismatch, "not a checkpoint file");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kCheckpointMagic), sizeof(version));
  require(version == kCheckpointVersion, ErrorCode::kVersionMismatch,
          "checkpoint format version " + std::to_string(version));
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  require(stored == data::fnv1a64(bytes.data(), body), ErrorCode::kChecksum, "checkpoint checksum mismatch");

  io::ByteReader r(bytes.data() + kHead, body - kHead);
  TrainState loaded;
  {
    auto s = r.section(kHeader);
    loaded.stage = s.get<std::int32_t>();
    loaded.stage_complete = s.get<std::uint8_t>() != 0;
    loaded.step = s.get<std::uint64_t>();
    loaded.seed = s.get<std::uint64_t>();
    s.get<std::uint64_t>();  // model init seed, informational
    const auto hash = s.get<std::uint64_t>();
    require(hash == model_config_hash(model.config()), ErrorCode::kConfig,
            "checkpoint was written for different model dimensions");
  }
  std::vector<std::pair<ag::Parameter*, Matrix>> values;
  {
    auto s = r.section(kParams);
    const auto n = s.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::string name = s.get_string();
      s.get<std::uint8_t>();
      Matrix m = get_matrix(s, name);
      ag::Parameter* p = model.find(name);
      require(p != nullptr, ErrorCode::kConfig, "checkpoint parameter " + name + " unknown to the model");
      require(p->value.same_shape(m), ErrorCode::kConfig, "checkpoint parameter " + name + " has the wrong shape");
      values.emplace_back(p, std::move(m));
    }
    require(values.size() == model.parameters().size(), ErrorCode::kConfig, "checkpoint lacks model parameters");
  }
  {
    auto s = r.section(kOptimizer);
    optim::AdamWConfig oc;
    oc.beta1 = s.get<double>();
    oc.beta2 = s.get<double>();
    oc.eps = s.get<double>();
    oc.weight_decay = s.get<double>();
    oc.clip_norm = s.get<double>();
    loaded.optimizer = optim::AdamW(oc);
    const auto n = s.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::string name = s.get_string();
      optim::Moments mom;
      mom.steps = s.get<std::uint64_t>();
      mom.m = get_matrix(s, name + ".m");
      mom.v = get_matrix(s, name + ".v");
      loaded.optimizer.state()[name] = std::move(mom);
    }
  }
  for (auto& [p, m] : values) {
    p->value = std::move(m);
    p->zero_grad();
  }
  state = std::move(loaded);
}

void save_checkpoint(const std::filesystem::path& path, Model& model, const TrainState& state) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  io::write_file(path, encode_checkpoint(model, state));
}

void load_checkpoint(const std::filesystem::path& path, Model& model, TrainState& state) {
  require(std::filesystem::exists(path), ErrorCode::kMissingCheckpoint, "checkpoint not found: " + path.string());
  decode_checkpoint(io::read_file(path), model, state);
}

}  // namespace pixpoint::train
