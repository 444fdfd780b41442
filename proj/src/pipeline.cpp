// Copyright 2026 The mixq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mixq/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mixq/io.hpp"
#include "mixq/lrp.hpp"

namespace mixq::pipeline {

using model::LayerId;
using model::LayerKind;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
  for (const auto& [key, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok |= key == a;
    if (!ok) throw ConfigError(std::string("unknown config key '") + section + "." + key + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

void RunConfig::validate() const {
  if (precision != "float" && precision != "double") throw ConfigError("precision must be 'float' or 'double'");
  model.validate();
  if (model.image_size % model.patch_size != 0 ||
      (model.image_size / model.patch_size) * (model.image_size / model.patch_size) != model.tokens) {
    throw ConfigError("model tokens must equal (image_size / patch_size)^2");
  }
  if (dataset_source != "synthetic" && dataset_source != "directory") {
    throw ConfigError("dataset.source must be 'synthetic' or 'directory'");
  }
  if (dataset_source == "directory" && dataset_path.empty()) throw ConfigError("dataset.path is required for directory datasets");
  synth.validate();
  train.validate();
  ptq.validate();
  sweep.validate();
  if (calib_samples == 0 || lrp_samples == 0 || qsa_samples == 0) throw ConfigError("sample counts must be positive");
  if (dataset_source == "synthetic") {
    for (std::size_t n : {calib_samples, lrp_samples, qsa_samples}) {
      if (n > synth.train) throw ConfigError("sample count exceeds the synthetic training split");
    }
  }
  if (alloc_bits.empty()) throw ConfigError("allocator.bits must not be empty");
  for (std::size_t i = 0; i < alloc_bits.size(); ++i) {
    if (alloc_bits[i] < 1 || alloc_bits[i] > 8) throw ConfigError("allocator.bits must lie in [1, 8]");
    if (i > 0 && alloc_bits[i] <= alloc_bits[i - 1]) throw ConfigError("allocator.bits must be sorted and unique");
    if (std::find(sweep.candidates.begin(), sweep.candidates.end(), alloc_bits[i]) == sweep.candidates.end()) {
      throw ConfigError("allocator bit " + std::to_string(alloc_bits[i]) + " has no sensitivity score (add it to qsa.candidates)");
    }
  }
  if (std::find(alloc_bits.begin(), alloc_bits.end(), fixed_bits) == alloc_bits.end()) {
    throw ConfigError("allocator.fixed_bits must be one of allocator.bits");
  }
  if (!(budget_scale > 0.0) || !std::isfinite(budget_scale)) {
    throw ConfigError("allocator.budget_scale must be positive and finite");
  }
  std::set<std::string> names;
  for (const auto& info : model::layer_registry(model)) names.insert(info.id.name());
  for (const auto& [name, b] : pins) {
    if (!names.count(name)) throw ConfigError("pinned layer '" + name + "' does not exist");
    if (b < 1 || b > 8) throw ConfigError("pinned bits of '" + name + "' must lie in [1, 8]");
  }
}

json RunConfig::to_json() const {
  json m = io::to_json(model);
  m.erase("seed");
  json pins_j = json::object();
  for (const auto& [k, v] : pins) pins_j[k] = v;
  return {
      {"seed", seed},
      {"precision", precision},
      {"model", m},
      {"dataset",
       {{"source", dataset_source},
        {"path", dataset_path},
        {"train", synth.train},
        {"eval", synth.eval},
        {"blobs", synth.blobs},
        {"jitter", synth.jitter},
        {"noise", synth.noise},
        {"calib_samples", calib_samples}}},
      {"train", {{"epochs", train.epochs}, {"batch", train.batch}, {"lr", train.lr}}},
      {"quant",
       {{"ln_percentile", ptq.ln_percentile},
        {"ln_granularity_without_crl", quant::granularity_name(ptq.ln_granularity)},
        {"log_post_softmax", ptq.log_post_softmax},
        {"log_post_gelu", ptq.log_post_gelu},
        {"adaptive_base", ptq.adaptive_base},
        {"fixed_base", ptq.fixed_base},
        {"base_grid", ptq.base_grid},
        {"sample_cap", ptq.sample_cap}}},
      {"crl", {{"enabled", ptq.crl}, {"k", std::isinf(ptq.clip.k) ? json("inf") : json(ptq.clip.k)}}},
      {"lrp", {{"samples", lrp_samples}}},
      {"qsa",
       {{"baseline_bits", sweep.baseline_bits},
        {"candidates", sweep.candidates},
        {"loss", qsa::loss_kind_name(sweep.loss)},
        {"samples", qsa_samples}}},
      {"allocator",
       {{"bits", alloc_bits},
        {"fixed_bits", fixed_bits},
        {"budget_scale", budget_scale},
        {"pins", pins_j},
        {"orientation", alloc::orientation_name(orientation)}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  check_keys(j, "root", {"seed", "precision", "model", "dataset", "train", "quant", "crl", "lrp", "qsa", "allocator"});
  read(j, "seed", c.seed);
  read(j, "precision", c.precision);
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"num_blocks", "embed_dim", "heads", "mlp_dim", "tokens", "classes", "patch_size",
                            "image_size", "channels", "ln_eps"});
    read(m, "num_blocks", c.model.num_blocks);
    read(m, "embed_dim", c.model.embed_dim);
    read(m, "heads", c.model.heads);
    read(m, "mlp_dim", c.model.mlp_dim);
    read(m, "tokens", c.model.tokens);
    read(m, "classes", c.model.classes);
    read(m, "patch_size", c.model.patch_size);
    read(m, "image_size", c.model.image_size);
    read(m, "channels", c.model.channels);
    read(m, "ln_eps", c.model.ln_eps);
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    check_keys(d, "dataset", {"source", "path", "train", "eval", "blobs", "jitter", "noise", "calib_samples"});
    read(d, "source", c.dataset_source);
    read(d, "path", c.dataset_path);
    read(d, "train", c.synth.train);
    read(d, "eval", c.synth.eval);
    read(d, "blobs", c.synth.blobs);
    read(d, "jitter", c.synth.jitter);
    read(d, "noise", c.synth.noise);
    read(d, "calib_samples", c.calib_samples);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"epochs", "batch", "lr"});
    read(t, "epochs", c.train.epochs);
    read(t, "batch", c.train.batch);
    read(t, "lr", c.train.lr);
  }
  if (j.contains("quant")) {
    const auto& q = j["quant"];
    check_keys(q, "quant", {"ln_percentile", "ln_granularity_without_crl", "log_post_softmax", "log_post_gelu",
                            "adaptive_base", "fixed_base", "base_grid", "sample_cap"});
    read(q, "ln_percentile", c.ptq.ln_percentile);
    if (q.contains("ln_granularity_without_crl")) {
      c.ptq.ln_granularity = quant::granularity_from_name(q["ln_granularity_without_crl"].get<std::string>());
    }
    read(q, "log_post_softmax", c.ptq.log_post_softmax);
    read(q, "log_post_gelu", c.ptq.log_post_gelu);
    read(q, "adaptive_base", c.ptq.adaptive_base);
    read(q, "fixed_base", c.ptq.fixed_base);
    read(q, "base_grid", c.ptq.base_grid);
    read(q, "sample_cap", c.ptq.sample_cap);
  }
  if (j.contains("crl")) {
    const auto& r = j["crl"];
    check_keys(r, "crl", {"enabled", "k"});
    read(r, "enabled", c.ptq.crl);
    if (r.contains("k")) {
      if (r["k"].is_string() && r["k"].get<std::string>() == "inf") c.ptq.clip.k = std::numeric_limits<double>::infinity();
      else read(r, "k", c.ptq.clip.k);
    }
  }
  if (j.contains("lrp")) {
    check_keys(j["lrp"], "lrp", {"samples"});
    read(j["lrp"], "samples", c.lrp_samples);
  }
  if (j.contains("qsa")) {
    const auto& s = j["qsa"];
    check_keys(s, "qsa", {"baseline_bits", "candidates", "loss", "samples"});
    read(s, "baseline_bits", c.sweep.baseline_bits);
    read(s, "candidates", c.sweep.candidates);
    if (s.contains("loss")) c.sweep.loss = qsa::loss_kind_from_name(s["loss"].get<std::string>());
    read(s, "samples", c.qsa_samples);
  }
  if (j.contains("allocator")) {
    const auto& a = j["allocator"];
    check_keys(a, "allocator", {"bits", "fixed_bits", "budget_scale", "pins", "orientation"});
    read(a, "bits", c.alloc_bits);
    read(a, "fixed_bits", c.fixed_bits);
    read(a, "budget_scale", c.budget_scale);
    read(a, "pins", c.pins);
    if (a.contains("orientation")) c.orientation = alloc::orientation_from_name(a["orientation"].get<std::string>());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::hash() const { return io::fnv1a_hex(to_json().dump()); }

const char* stage_name(Stage s) noexcept {
  switch (s) {
    case Stage::SynthData: return "synth-data";
    case Stage::Calibrate: return "calibrate";
    case Stage::Importance: return "importance";
    case Stage::Sensitivity: return "sensitivity";
    case Stage::Allocate: return "allocate";
    case Stage::Quantize: return "quantize";
    case Stage::Eval: return "eval";
    case Stage::Report: return "report";
  }
  return "?";
}

Stage stage_from_name(const std::string& s) {
  for (Stage st : kAllStages)
    if (s == stage_name(st)) return st;
  throw ConfigError("unknown stage '" + s + "'");
}

const char* ablation_name(Ablation a) noexcept { return a == Ablation::OmegaLambda ? "omega-lambda" : "omega-only"; }

Ablation ablation_from_name(const std::string& s) {
  if (s == "omega-lambda") return Ablation::OmegaLambda;
  if (s == "omega-only") return Ablation::OmegaOnly;
  throw ConfigError("unknown ablation '" + s + "' (expected omega-only or omega-lambda)");
}

alloc::AllocationInstance make_instance(const model::ModelConfig& mc, const std::map<LayerId, double>& omega,
                                        const std::map<qsa::KindBit, double>& lambda, const std::vector<int>& bits,
                                        const std::map<std::string, int>& pins, alloc::Orientation orientation) {
  alloc::AllocationInstance inst;
  inst.bits = bits;
  inst.orientation = orientation;
  for (LayerKind k : model::kQuantKinds) {
    std::vector<double> row;
    for (int b : bits) {
      auto it = lambda.find({k, b});
      row.push_back(it == lambda.end() ? 0.0 : it->second);
    }
    inst.lambda.push_back(std::move(row));
  }
  for (const auto& info : model::layer_registry(mc)) {
    alloc::AllocLayer l;
    l.name = info.id.name();
    l.params = info.params;
    l.macs = info.macs;
    auto o = omega.find(info.id);
    if (o == omega.end()) throw ConfigError("importance table has no entry for " + l.name);
    l.omega = o->second;
    l.kind = static_cast<std::size_t>(std::find(model::kQuantKinds.begin(), model::kQuantKinds.end(), info.id.kind) -
                                      model::kQuantKinds.begin());
    if (auto p = pins.find(l.name); p != pins.end()) l.pinned = p->second;
    inst.layers.push_back(std::move(l));
  }
  return inst;
}

json strip_timings(json report) {
  report.erase("timings");
  return report;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

std::uint64_t derive_seed(std::uint64_t seed, const char* tag) {
  std::uint64_t h = std::stoull(io::fnv1a_hex(tag), nullptr, 16) ^ seed;
  // splitmix64 finalizer
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

class Clock {
 public:
  Clock() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

struct Artifacts {
  const RunContext& ctx;
  fs::path dir;
  std::string hash;

  explicit Artifacts(const RunContext& c) : ctx(c), dir(c.artifacts()), hash(c.config.hash()) {}

  fs::path marker(Stage s) const { return dir / (std::string(stage_name(s)) + ".json"); }

  json load(Stage producer) const {
    const fs::path p = marker(producer);
    if (!fs::exists(p)) {
      throw MissingArtifactError("missing " + p.string() + "; run `mixq " + stage_name(producer) + "` first",
                                 stage_name(producer));
    }
    json j = json::parse(io::read_text(p));
    if (j.value("config_hash", "") != hash) {
      throw MissingArtifactError(p.string() + " was produced with config hash " + j.value("config_hash", "?") +
                                     ", current is " + hash + "; rerun `mixq " + stage_name(producer) + "`",
                                 stage_name(producer));
    }
    return j;
  }

  void save(Stage s, json body, double seconds) const {
    body["stage"] = stage_name(s);
    body["config_hash"] = hash;
    body["wall_seconds"] = seconds;
    io::write_text(marker(s), body.dump(2) + "\n");
  }
};

template <typename T>
model::ToyViT<T> load_fp_model(const Artifacts& a) {
  a.load(Stage::SynthData);
  return io::load_model<T>(a.dir, "model_fp");
}

std::vector<std::size_t> indices(const json& j, const char* key) { return j.at(key).get<std::vector<std::size_t>>(); }

json score_map(const std::map<LayerId, double>& m) {
  json j = json::object();
  for (const auto& [id, v] : m) j[id.name()] = v;
  return j;
}

std::map<LayerId, double> score_map_from(const json& j) {
  std::map<LayerId, double> m;
  for (const auto& [k, v] : j.items()) m[LayerId::parse(k)] = v.get<double>();
  return m;
}

json kind_bit_map(const std::map<qsa::KindBit, double>& m) {
  json j = json::object();
  for (const auto& [kb, v] : m) j[model::kind_name(kb.first)][std::to_string(kb.second)] = v;
  return j;
}

std::map<qsa::KindBit, double> kind_bit_map_from(const json& j) {
  std::map<qsa::KindBit, double> m;
  for (const auto& [k, row] : j.items())
    for (const auto& [b, v] : row.items()) m[{model::kind_from_name(k), std::stoi(b)}] = v.get<double>();
  return m;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
data::Dataset<T> train_subset(const data::Splits& s, const std::vector<std::size_t>& idx) {
  return s.train.subset(idx).template cast<T>();
}

template <typename T>
void synth_data(const RunContext& ctx) {
  Clock clock;
  const RunConfig& cfg = ctx.config;
  const Artifacts a(ctx);
  data::Splits splits;
  if (cfg.dataset_source == "synthetic") {
    splits = data::synthesize(cfg.model, cfg.synth, derive_seed(cfg.seed, "data"));
  } else {
    if (!io::TensorArchive::exists(cfg.dataset_path, "dataset")) {
      throw ConfigError("dataset directory " + cfg.dataset_path + " has no dataset.json / dataset.bin");
    }
    splits = data::load_splits(cfg.dataset_path, "dataset");
    const auto& sh = splits.train.images.shape();
    if (sh[1] != static_cast<std::size_t>(cfg.model.image_size) || sh[2] != static_cast<std::size_t>(cfg.model.image_size) ||
        sh[3] != static_cast<std::size_t>(cfg.model.channels)) {
      throw ConfigError("dataset images " + shape_to_string(sh) + " do not match the model config");
    }
  }
  const std::size_t n = splits.train.size();
  for (std::size_t k : {cfg.calib_samples, cfg.lrp_samples, cfg.qsa_samples}) {
    if (k > n) throw ConfigError("sample count " + std::to_string(k) + " exceeds the training split (" + std::to_string(n) + ")");
  }

  model::ModelConfig mc = cfg.model;
  mc.seed = derive_seed(cfg.seed, "init");
  auto m = model::init_weights<T>(mc);
  const auto train_set = splits.train.template cast<T>();
  const auto log = data::train(m, train_set, cfg.train, derive_seed(cfg.seed, "train"));
  const double eval_acc = data::accuracy(m, splits.eval.template cast<T>());

  data::save_splits(splits, a.dir, "dataset");
  io::save_model(m, a.dir, "model_fp");

  const auto lrp_pool = data::sample_without_replacement(n, std::min(n, 2 * cfg.lrp_samples), derive_seed(cfg.seed, "lrp"));
  const std::vector<std::size_t> lrp_a(lrp_pool.begin(), lrp_pool.begin() + cfg.lrp_samples);
  std::vector<std::size_t> lrp_b;
  if (lrp_pool.size() >= 2 * cfg.lrp_samples) lrp_b.assign(lrp_pool.begin() + cfg.lrp_samples, lrp_pool.end());

  json body;
  body["train_loss"] = log.epoch_loss;
  body["train_accuracy"] = log.epoch_accuracy;
  body["eval_accuracy"] = eval_acc;
  body["train_size"] = n;
  body["eval_size"] = splits.eval.size();
  body["calib_indices"] = data::sample_without_replacement(n, cfg.calib_samples, derive_seed(cfg.seed, "calib"));
  body["lrp_indices"] = lrp_a;
  body["lrp_indices_b"] = lrp_b;
  body["qsa_indices"] = data::sample_without_replacement(n, cfg.qsa_samples, derive_seed(cfg.seed, "qsa"));
  a.save(Stage::SynthData, body, clock.seconds());
}

template <typename T>
void calibrate(const RunContext& ctx) {
  Clock clock;
  const Artifacts a(ctx);
  const json synth = a.load(Stage::SynthData);
  const auto m = io::load_model<T>(a.dir, "model_fp");
  const auto splits = data::load_splits(a.dir, "dataset");
  const auto calib = train_subset<T>(splits, indices(synth, "calib_indices"));
  const auto set = ptq::collect_calibration(m, calib.images, ctx.config.ptq);
  set.save(a.dir, "calibration");
  a.save(Stage::Calibrate, {{"images", set.images}, {"sites", set.stats.size()}}, clock.seconds());
}

template <typename T>
void importance(const RunContext& ctx) {
  Clock clock;
  const Artifacts a(ctx);
  const json synth = a.load(Stage::SynthData);
  const auto m = io::load_model<T>(a.dir, "model_fp");
  const auto splits = data::load_splits(a.dir, "dataset");
  const auto set_a = train_subset<T>(splits, indices(synth, "lrp_indices"));
  const auto contrib = lrp::contribution_scores(m, set_a.images);
  const auto omega = lrp::importance_scores(contrib);
  json body;
  body["samples"] = contrib.samples;
  body["contribution"] = score_map(contrib.scores);
  body["omega"] = score_map(omega.omega);
  const auto idx_b = indices(synth, "lrp_indices_b");
  if (!idx_b.empty()) {
    const auto set_b = train_subset<T>(splits, idx_b);
    const auto omega_b = lrp::importance_scores(lrp::contribution_scores(m, set_b.images));
    std::vector<double> va, vb;
    for (const auto& [id, v] : omega.omega) {
      va.push_back(v);
      vb.push_back(omega_b.omega.at(id));
    }
    body["omega_holdout"] = score_map(omega_b.omega);
    body["omega_spearman"] = lrp::spearman(va, vb);
  }
  a.save(Stage::Importance, body, clock.seconds());
}

template <typename T>
qsa::EvalSet<T> make_eval_set(const model::ToyViT<T>& m, const data::Dataset<T>& d, qsa::LossKind loss) {
  qsa::EvalSet<T> e{d.images, d.labels, {}};
  if (loss == qsa::LossKind::KLvsFullPrecision) e.fp_logits = model::forward(m, d.images, model::QuantPlan{}).logits;
  return e;
}

template <typename T>
void sensitivity(const RunContext& ctx) {
  Clock clock;
  const Artifacts a(ctx);
  const json synth = a.load(Stage::SynthData);
  a.load(Stage::Calibrate);
  const auto m = io::load_model<T>(a.dir, "model_fp");
  const auto splits = data::load_splits(a.dir, "dataset");
  const auto calib = ptq::CalibrationSet::load(a.dir, "calibration");
  const auto subset = train_subset<T>(splits, indices(synth, "qsa_indices"));
  const auto eval = make_eval_set(m, subset, ctx.config.sweep.loss);
  const auto t = qsa::sweep(m, calib, eval, ctx.config.sweep, ctx.config.ptq);
  json body;
  body["samples"] = subset.size();
  body["loss"] = qsa::loss_kind_name(ctx.config.sweep.loss);
  body["baseline_bits"] = ctx.config.sweep.baseline_bits;
  body["baseline_loss"] = t.baseline_loss;
  body["baseline_accuracy"] = t.baseline_accuracy;
  body["lambda"] = kind_bit_map(t.lambda);
  body["delta"] = kind_bit_map(t.delta);
  body["accuracy_delta"] = kind_bit_map(t.accuracy_delta);
  body["uniform_fallback"] = t.uniform_fallback;
  a.save(Stage::Sensitivity, body, clock.seconds());
}

json assignment_json(const alloc::AllocationInstance& inst, const alloc::BitAssignment& s) {
  json bits = json::object();
  for (std::size_t i = 0; i < inst.layers.size(); ++i) bits[inst.layers[i].name] = s.bits[i];
  return {{"bits", bits}, {"phi", s.phi}, {"size_bits", s.size_bits}, {"bitops", s.bitops}};
}

void allocate(const RunContext& ctx) {
  Clock clock;
  const RunConfig& cfg = ctx.config;
  const Artifacts a(ctx);
  const json imp = a.load(Stage::Importance);
  const json sens = a.load(Stage::Sensitivity);
  const auto omega = score_map_from(imp.at("omega"));
  const auto lambda = kind_bit_map_from(sens.at("lambda"));
  auto inst = make_instance(cfg.model, omega, lambda, cfg.alloc_bits, cfg.pins, cfg.orientation);
  alloc::Budget budget = alloc::budget_from_fixed(inst, cfg.fixed_bits);
  if (cfg.budget_scale != 1.0) {
    budget.size_bits = static_cast<std::uint64_t>(std::floor(static_cast<double>(budget.size_bits) * cfg.budget_scale));
    budget.bitops = static_cast<std::uint64_t>(std::floor(static_cast<double>(budget.bitops) * cfg.budget_scale));
  }
  const auto with_lambda = alloc::solve_exact(inst, budget);
  auto omega_only_inst = inst;
  for (auto& row : omega_only_inst.lambda) std::fill(row.begin(), row.end(), 0.0);
  const auto omega_only = alloc::solve_exact(omega_only_inst, budget);

  json layers = json::array();
  for (const auto& l : inst.layers) {
    json e = {{"name", l.name}, {"params", l.params}, {"macs", l.macs}, {"omega", l.omega},
              {"kind", model::kind_name(model::kQuantKinds[l.kind])}};
    if (l.pinned) e["pinned"] = *l.pinned;
    layers.push_back(e);
  }
  json body;
  body["bits"] = cfg.alloc_bits;
  body["fixed_bits"] = cfg.fixed_bits;
  body["orientation"] = alloc::orientation_name(cfg.orientation);
  body["layers"] = layers;
  body["budget"] = {{"size_bits", budget.size_bits}, {"bitops", budget.bitops}};
  body["omega_lambda"] = assignment_json(inst, with_lambda);
  body["omega_only"] = assignment_json(inst, omega_only);
  a.save(Stage::Allocate, body, clock.seconds());
}

ptq::BitMap bitmap_from(const json& bits) {
  ptq::BitMap m;
  for (const auto& [k, v] : bits.items()) m[LayerId::parse(k)] = v.get<int>();
  return m;
}

ptq::BitMap fixed_bitmap(const RunConfig& cfg) {
  ptq::BitMap m = ptq::uniform_bits(cfg.model, cfg.fixed_bits);
  for (const auto& [name, b] : cfg.pins) m[LayerId::parse(name)] = b;
  return m;
}

json records_json(const std::vector<crl::ReparamRecord>& records) {
  json out = json::array();
  for (const auto& r : records) {
    out.push_back({{"norm", r.norm.name()},
                   {"next", r.next.name()},
                   {"bits", r.bits},
                   {"mu_s", r.clip.mu_s},
                   {"sigma_s", r.clip.sigma_s},
                   {"mu_z", r.clip.mu_z},
                   {"sigma_z", r.clip.sigma_z},
                   {"s_clipped_low", r.clip.s_clipped_low},
                   {"s_clipped_high", r.clip.s_clipped_high},
                   {"z_clipped_low", r.clip.z_clipped_low},
                   {"z_clipped_high", r.clip.z_clipped_high},
                   {"s_spread", *std::max_element(r.s.begin(), r.s.end()) / *std::min_element(r.s.begin(), r.s.end())},
                   {"s_hat_spread", *std::max_element(r.clip.s_hat.begin(), r.clip.s_hat.end()) /
                                        *std::min_element(r.clip.s_hat.begin(), r.clip.s_hat.end())}});
  }
  return out;
}

constexpr const char* kVariants[] = {"fixed", "fixed_no_crl", "mixed_omega_lambda", "mixed_omega_only"};

template <typename T>
void quantize(const RunContext& ctx) {
  Clock clock;
  const RunConfig& cfg = ctx.config;
  const Artifacts a(ctx);
  a.load(Stage::Calibrate);
  const json al = a.load(Stage::Allocate);
  const auto m = load_fp_model<T>(a);
  const auto calib = ptq::CalibrationSet::load(a.dir, "calibration");
  json body;
  for (const char* v : kVariants) {
    const std::string variant = v;
    ptq::PtqOptions opt = cfg.ptq;
    ptq::BitMap bits;
    if (variant == "fixed") bits = fixed_bitmap(cfg);
    if (variant == "fixed_no_crl") bits = fixed_bitmap(cfg), opt.crl = false;
    if (variant == "mixed_omega_lambda") bits = bitmap_from(al.at("omega_lambda").at("bits"));
    if (variant == "mixed_omega_only") bits = bitmap_from(al.at("omega_only").at("bits"));
    const auto qm = ptq::build_quantized(m, calib, bits, opt);
    io::save_model(qm.model, a.dir, "model_" + variant);
    json bj = json::object();
    for (const auto& [id, b] : bits) bj[id.name()] = b;
    body[variant] = {{"bits", bj}, {"crl", opt.crl}, {"plan", io::to_json(qm.plan)}, {"crl_records", records_json(qm.records)}};
  }
  a.save(Stage::Quantize, body, clock.seconds());
}

template <typename T>
void eval(const RunContext& ctx) {
  Clock clock;
  const RunConfig& cfg = ctx.config;
  const Artifacts a(ctx);
  const json q = a.load(Stage::Quantize);
  const json al = a.load(Stage::Allocate);
  const json imp = a.load(Stage::Importance);
  const json sens = a.load(Stage::Sensitivity);
  const auto fp = load_fp_model<T>(a);
  const auto splits = data::load_splits(a.dir, "dataset");
  const auto eval_set = make_eval_set(fp, splits.eval.template cast<T>(), qsa::LossKind::CrossEntropy);
  const auto inst = make_instance(cfg.model, score_map_from(imp.at("omega")), kind_bit_map_from(sens.at("lambda")),
                                  cfg.alloc_bits, cfg.pins, cfg.orientation);

  json body;
  {
    const auto r = qsa::score_logits(model::forward(fp, eval_set.images, model::QuantPlan{}).logits, eval_set,
                                     qsa::LossKind::CrossEntropy);
    std::uint64_t size = 0, ops = 0;
    for (const auto& l : inst.layers) size += l.params * 32, ops += l.macs * 32 * 32;
    body["fp"] = {{"accuracy", r.accuracy}, {"loss", r.loss}, {"size_bits", size}, {"bitops", ops}};
  }
  for (const char* v : kVariants) {
    if (!q.contains(v)) throw MissingArtifactError(std::string("quantize output lacks variant ") + v, "quantize");
    const auto qm_model = io::load_model<T>(a.dir, std::string("model_") + v);
    const auto plan = io::quant_plan_from_json(q.at(v).at("plan"));
    const auto r = qsa::evaluate(ptq::QuantizedModel<T>{qm_model, plan, {}}, eval_set, qsa::LossKind::CrossEntropy);
    std::vector<int> bits;
    const auto bm = q.at(v).at("bits");
    for (const auto& l : inst.layers) bits.push_back(bm.at(l.name).get<int>());
    const auto e = alloc::evaluate_assignment(inst, bits);
    body[v] = {{"accuracy", r.accuracy}, {"loss", r.loss}, {"size_bits", e.size_bits}, {"bitops", e.bitops}, {"phi", e.phi}};
  }
  body["budget"] = al.at("budget");
  body["eval_size"] = eval_set.labels.size();
  a.save(Stage::Eval, body, clock.seconds());
}

void write_csv(const fs::path& path, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
  io::write_text(path, os.str());
}

// Block x kind matrix; PatchEmbed and Head sit in their own rows.
std::vector<std::vector<std::string>> layer_matrix(const model::ModelConfig& mc, const json& values) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"block"};
  for (LayerKind k : model::kBlockKinds) header.push_back(model::kind_name(k));
  rows.push_back(header);
  auto cell = [&](const std::string& name) {
    if (!values.contains(name)) return std::string();
    const auto& v = values.at(name);
    return v.is_number_integer() ? std::to_string(v.get<long long>()) : fmt(v.get<double>());
  };
  for (int l = 0; l < mc.num_blocks; ++l) {
    std::vector<std::string> row{std::to_string(l)};
    for (LayerKind k : model::kBlockKinds) row.push_back(cell(LayerId{l, k}.name()));
    rows.push_back(row);
  }
  rows.push_back({"patch_embed", cell("patch_embed")});
  rows.push_back({"head", cell("head")});
  return rows;
}

void report(const RunContext& ctx) {
  Clock clock;
  const RunConfig& cfg = ctx.config;
  const Artifacts a(ctx);
  json stage_docs = json::object();
  for (Stage s : {Stage::SynthData, Stage::Calibrate, Stage::Importance, Stage::Sensitivity, Stage::Allocate,
                  Stage::Quantize, Stage::Eval}) {
    stage_docs[stage_name(s)] = a.load(s);
  }
  const json& synth = stage_docs["synth-data"];
  const json& imp = stage_docs["importance"];
  const json& sens = stage_docs["sensitivity"];
  const json& al = stage_docs["allocate"];
  const json& q = stage_docs["quantize"];
  const json& ev = stage_docs["eval"];
  const std::string mixed = ctx.ablation == Ablation::OmegaLambda ? "omega_lambda" : "omega_only";

  json r;
  r["format"] = "mixq-report";
  r["version"] = 1;
  r["config_hash"] = a.hash;
  r["config"] = cfg.to_json();
  r["seed"] = cfg.seed;
  r["ablation"] = ablation_name(ctx.ablation);
  r["training"] = {{"train_loss", synth["train_loss"]},
                   {"train_accuracy", synth["train_accuracy"]},
                   {"eval_accuracy", synth["eval_accuracy"]}};
  r["importance"] = {{"samples", imp["samples"]}, {"contribution", imp["contribution"]}, {"omega", imp["omega"]}};
  if (imp.contains("omega_spearman")) r["importance"]["holdout_spearman"] = imp["omega_spearman"];
  r["sensitivity"] = {{"samples", sens["samples"]},
                      {"loss", sens["loss"]},
                      {"baseline_bits", sens["baseline_bits"]},
                      {"baseline_loss", sens["baseline_loss"]},
                      {"lambda", sens["lambda"]},
                      {"delta", sens["delta"]},
                      {"accuracy_delta", sens["accuracy_delta"]}};
  r["allocation"] = {{"bits", al["bits"]},
                     {"fixed_bits", al["fixed_bits"]},
                     {"orientation", al["orientation"]},
                     {"budget", al["budget"]},
                     {"selected", mixed},
                     {"omega_lambda", al["omega_lambda"]},
                     {"omega_only", al["omega_only"]}};
  r["reparameterization"] = {{"fixed", q["fixed"]["crl_records"]}, {"mixed", q["mixed_" + mixed]["crl_records"]}};
  json metrics = json::object();
  for (const char* v : {"fp", "fixed", "fixed_no_crl", "mixed_omega_lambda", "mixed_omega_only"}) metrics[v] = ev[v];
  metrics["mixed"] = ev["mixed_" + mixed];
  r["evaluation"] = metrics;
  json timings = json::object();
  for (const auto& [k, v] : stage_docs.items()) timings[k] = v["wall_seconds"];
  r["timings"] = timings;

  const fs::path out = ctx.out;
  io::write_text(out / "report.json", r.dump(2) + "\n");

  std::vector<std::vector<std::string>> rows{{"layer", "omega", "contribution"}};
  for (const auto& [k, v] : imp["omega"].items()) rows.push_back({k, fmt(v.get<double>()), fmt(imp["contribution"][k].get<double>())});
  write_csv(out / "importance.csv", rows);
  write_csv(out / "importance_heatmap.csv", layer_matrix(cfg.model, imp["omega"]));

  auto kind_bit_csv = [&](const json& table, const fs::path& path) {
    std::vector<std::vector<std::string>> t;
    std::vector<std::string> header{"kind"};
    for (int b : cfg.sweep.candidates) header.push_back("b" + std::to_string(b));
    t.push_back(header);
    for (LayerKind k : model::kQuantKinds) {
      std::vector<std::string> row{model::kind_name(k)};
      for (int b : cfg.sweep.candidates) row.push_back(fmt(table[model::kind_name(k)][std::to_string(b)].get<double>()));
      t.push_back(row);
    }
    write_csv(path, t);
  };
  kind_bit_csv(sens["lambda"], out / "sensitivity_lambda.csv");
  kind_bit_csv(sens["delta"], out / "sensitivity_delta.csv");
  kind_bit_csv(sens["accuracy_delta"], out / "sensitivity_accuracy_delta.csv");
  write_csv(out / "bits_mixed.csv", layer_matrix(cfg.model, al[mixed]["bits"]));
  write_csv(out / "bits_omega_lambda.csv", layer_matrix(cfg.model, al["omega_lambda"]["bits"]));
  write_csv(out / "bits_omega_only.csv", layer_matrix(cfg.model, al["omega_only"]["bits"]));

  std::vector<std::vector<std::string>> er{{"variant", "accuracy", "loss", "size_bits", "bitops"}};
  for (const auto& [k, v] : metrics.items()) {
    er.push_back({k, fmt(v["accuracy"].get<double>()), fmt(v["loss"].get<double>()),
                  std::to_string(v["size_bits"].get<std::uint64_t>()), std::to_string(v["bitops"].get<std::uint64_t>())});
  }
  write_csv(out / "eval.csv", er);
  (void)clock;
}

template <typename T>
void dispatch(Stage stage, const RunContext& ctx) {
  switch (stage) {
    case Stage::SynthData: return synth_data<T>(ctx);
    case Stage::Calibrate: return calibrate<T>(ctx);
    case Stage::Importance: return importance<T>(ctx);
    case Stage::Sensitivity: return sensitivity<T>(ctx);
    case Stage::Allocate: return allocate(ctx);
    case Stage::Quantize: return quantize<T>(ctx);
    case Stage::Eval: return eval<T>(ctx);
    case Stage::Report: return report(ctx);
  }
}

}  // namespace

void run_stage(Stage stage, const RunContext& ctx) {
  ctx.config.validate();
  std::error_code ec;
  fs::create_directories(ctx.artifacts(), ec);
  fs::create_directories(ctx.out, ec);
  if (ctx.config.precision == "double") dispatch<double>(stage, ctx);
  else dispatch<float>(stage, ctx);
}

void run_all(const RunContext& ctx) {
  for (Stage s : kAllStages) run_stage(s, ctx);
}

}  // namespace mixq::pipeline
