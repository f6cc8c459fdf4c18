#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "csgru/cells.hpp"
#include "csgru/checkpoint.hpp"
#include "csgru/data.hpp"
#include "csgru/digits.hpp"
#include "csgru/errors.hpp"
#include "csgru/idx.hpp"
#include "csgru/metrics.hpp"
#include "csgru/rng.hpp"
#include "csgru/train.hpp"

namespace csgru {

// ---- formatting helpers ------------------------------------------------------

inline std::string fmt_double(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---- task specification --------------------------------------------------------

// Where the spike data comes from: a synthetic generator, rate-coded IDX
// images, the built-in procedural digit corpus, or pre-encoded spike bundles.
struct TaskSpec {
  std::string kind = "pattern3";  // pattern3 | moving_bar | idx | digits | spk
  int n_train = 600;
  int n_test = 200;
  int timesteps = 20;     // synthetic tasks
  Shape grid = {1, 8, 8};  // synthetic tasks
  double noise = 0.05;     // synthetic tasks
  int rate_T = 10;         // rate-coding window for image tasks
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::string train_path, test_path;                                 // spk
};

struct BuiltTask {
  Dataset train, test;
  int classes = 0;
};

// ---- spike bundle files ----------------------------------------------------------
//
// Sparse text container for encoded spike data: a JSON header line, then one
// line per sample ("label t:c:y:x t:c:y:x ..."). Deterministic bytes.

inline void save_spk(const std::string& path, const Dataset& ds) {
  if (ds.empty()) throw data_error("save_spk: empty dataset");
  std::ofstream out(path);
  if (!out) throw data_error("cannot write spike bundle: " + path);
  const Shape& s = ds[0].data.shape();
  nlohmann::json header = {{"version", 1},
                           {"n", ds.size()},
                           {"T", s[0]},
                           {"shape", Shape{s[1], s[2], s[3]}}};
  out << header.dump() << '\n';
  for (const SpikeSequence& seq : ds) {
    if (seq.data.shape() != s)
      throw data_error("save_spk: inhomogeneous sample shapes");
    out << seq.label;
    for (int t = 0; t < s[0]; ++t)
      for (int c = 0; c < s[1]; ++c)
        for (int y = 0; y < s[2]; ++y)
          for (int x = 0; x < s[3]; ++x)
            if (seq.data[((static_cast<std::int64_t>(t) * s[1] + c) * s[2] + y) * s[3] + x] == 1.0)
              out << ' ' << t << ':' << c << ':' << y << ':' << x;
    out << '\n';
  }
}

inline Dataset load_spk(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open spike bundle: " + path);
  std::string line;
  if (!std::getline(in, line)) throw parse_error(path + ": missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ":1: bad header: " + e.what());
  }
  const int T = header.at("T").get<int>();
  const Shape grid = header.at("shape").get<Shape>();
  const std::size_t n = header.at("n").get<std::size_t>();
  Dataset ds;
  ds.reserve(n);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int label;
    if (!(ls >> label)) throw parse_error(path + ":" + std::to_string(line_no) + ": bad label");
    std::vector<double> d(static_cast<std::size_t>(T) * numel(grid), 0.0);
    std::string tok;
    while (ls >> tok) {
      int t, c, y, x;
      if (std::sscanf(tok.c_str(), "%d:%d:%d:%d", &t, &c, &y, &x) != 4)
        throw parse_error(path + ":" + std::to_string(line_no) + ": bad event token " + tok);
      if (t < 0 || t >= T || c < 0 || c >= grid[0] || y < 0 || y >= grid[1] || x < 0 ||
          x >= grid[2])
        throw data_error(path + ":" + std::to_string(line_no) + ": event out of range " + tok);
      d[((static_cast<std::size_t>(t) * grid[0] + c) * grid[1] + y) * grid[2] + x] = 1.0;
    }
    Shape shape = {T, grid[0], grid[1], grid[2]};
    ds.push_back(make_spike_sequence(Tensor(std::move(shape), std::move(d)), label));
  }
  if (ds.size() != n)
    throw parse_error(path + ": header declares " + std::to_string(n) + " samples, found " +
                      std::to_string(ds.size()));
  return ds;
}

// ---- task construction ------------------------------------------------------------

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag));
}

inline Dataset encode_images(const std::vector<std::pair<Tensor, int>>& images, int rate_T,
                             std::uint64_t seed) {
  Dataset out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    out.push_back(rate_encode(images[i].first, rate_T, seed, i, images[i].second));
  return out;
}

inline int max_label(const Dataset& ds) {
  int m = 0;
  for (const SpikeSequence& s : ds) m = std::max(m, s.label);
  return m;
}

}  // namespace detail

inline BuiltTask build_task(const TaskSpec& spec, std::uint64_t seed) {
  BuiltTask task;
  if (spec.kind == "pattern3" || spec.kind == "moving_bar") {
    SynthSpec s;
    s.kind = synth_kind_from_string(spec.kind);
    s.timesteps = spec.timesteps;
    s.grid = spec.grid;
    s.noise_rate = spec.noise;
    s.n_samples = spec.n_train;
    s.seed = detail::derive_seed(seed, 0x7261696eULL);  // train split
    task.train = synth_task(s);
    s.n_samples = spec.n_test;
    s.seed = detail::derive_seed(seed, 0x74657374ULL);  // test split
    task.test = synth_task(s);
    task.classes = synth_classes(s.kind);
  } else if (spec.kind == "idx") {
    auto tr = load_idx_dataset(spec.train_images, spec.train_labels, spec.n_train);
    auto te = load_idx_dataset(spec.test_images, spec.test_labels, spec.n_test);
    task.train = detail::encode_images(tr, spec.rate_T, detail::derive_seed(seed, 0x69e1ULL));
    task.test = detail::encode_images(te, spec.rate_T, detail::derive_seed(seed, 0x69e2ULL));
    task.classes = std::max(detail::max_label(task.train), detail::max_label(task.test)) + 1;
  } else if (spec.kind == "digits") {
    auto all = generate_digit_corpus(spec.n_train + spec.n_test,
                                     detail::derive_seed(seed, 0xd161ULL));
    std::vector<std::pair<Tensor, int>> tr(all.begin(), all.begin() + spec.n_train);
    std::vector<std::pair<Tensor, int>> te(all.begin() + spec.n_train, all.end());
    task.train = detail::encode_images(tr, spec.rate_T, detail::derive_seed(seed, 0x69e1ULL));
    task.test = detail::encode_images(te, spec.rate_T, detail::derive_seed(seed, 0x69e2ULL));
    task.classes = 10;
  } else if (spec.kind == "spk") {
    task.train = load_spk(spec.train_path);
    task.test = load_spk(spec.test_path);
    task.classes = std::max(detail::max_label(task.train), detail::max_label(task.test)) + 1;
  } else {
    throw config_error("unknown task kind: " + spec.kind);
  }
  if (task.train.empty() || task.test.empty())
    throw config_error("task produced an empty split");
  return task;
}

// ---- experiment configuration -------------------------------------------------------

// Full declarative description of one run, mirrored one-to-one by the JSON
// config files the CLI consumes.
struct ExperimentConfig {
  CellKind cell = CellKind::variant;
  ModSet mods;
  SurrogateKind surrogate = SurrogateKind::triangular;       // used when mod4 is off
  SurrogateKind mod4_surrogate = SurrogateKind::arctan;      // used when mod4 is on
  double gamma = 1.0;
  double v_th = 1.0;
  TaskSpec task;
  PipelineSpec pipeline;
  int n_layers = 1;
  int hidden = 128;
  Shape hidden_grid;  // required for mod3
  int kernel = 3;
  double decay_init = 0.9;
  double current_bias_init = 0.3;
  bool learn_decay = true;
  bool detach_reset = false;
  int epochs = 100;
  int batch = 128;
  double lr = 1e-3;
  double clip_norm = 0.0;
  int threads = 0;
  std::uint64_t seed = 1;

  // The surrogate actually in effect for this run: mod4 selects the arctan
  // family (scaled_tanh exposed as an alternative), all non-mod4 spiking
  // cells use the base kind.
  SurrogateSpec effective_surrogate() const {
    SurrogateSpec s;
    s.kind = (cell == CellKind::variant && mods.mod4) ? mod4_surrogate : surrogate;
    s.gamma = gamma;
    s.v_th = v_th;
    return s;
  }
};

namespace detail {

inline void check_known_keys(const nlohmann::json& j, const std::set<std::string>& known,
                             const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw config_error("unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

inline TaskSpec task_from_json(const nlohmann::json& j) {
  detail::check_known_keys(j,
                           {"kind", "n_train", "n_test", "T", "grid", "noise", "rate_T",
                            "train_images", "train_labels", "test_images", "test_labels",
                            "train", "test"},
                           "task");
  TaskSpec t;
  t.kind = j.value("kind", t.kind);
  t.n_train = j.value("n_train", t.n_train);
  t.n_test = j.value("n_test", t.n_test);
  t.timesteps = j.value("T", t.timesteps);
  if (j.contains("grid")) t.grid = j.at("grid").get<Shape>();
  t.noise = j.value("noise", t.noise);
  t.rate_T = j.value("rate_T", t.rate_T);
  t.train_images = j.value("train_images", std::string());
  t.train_labels = j.value("train_labels", std::string());
  t.test_images = j.value("test_images", std::string());
  t.test_labels = j.value("test_labels", std::string());
  t.train_path = j.value("train", std::string());
  t.test_path = j.value("test", std::string());
  return t;
}

inline nlohmann::json task_to_json(const TaskSpec& t) {
  nlohmann::json j;
  j["kind"] = t.kind;
  j["n_train"] = t.n_train;
  j["n_test"] = t.n_test;
  if (t.kind == "pattern3" || t.kind == "moving_bar") {
    j["T"] = t.timesteps;
    j["grid"] = t.grid;
    j["noise"] = t.noise;
  }
  if (t.kind == "idx" || t.kind == "digits") j["rate_T"] = t.rate_T;
  if (t.kind == "idx") {
    j["train_images"] = t.train_images;
    j["train_labels"] = t.train_labels;
    j["test_images"] = t.test_images;
    j["test_labels"] = t.test_labels;
  }
  if (t.kind == "spk") {
    j["train"] = t.train_path;
    j["test"] = t.test_path;
  }
  return j;
}

inline PipelineSpec pipeline_from_json(const nlohmann::json& j) {
  detail::check_known_keys(j, {"grid", "pool", "downconv"}, "pipeline");
  PipelineSpec p;
  if (j.contains("grid")) p.grid = j.at("grid").get<Shape>();
  p.pool = j.value("pool", false);
  if (j.contains("downconv") && !j.at("downconv").is_null()) {
    const auto& d = j.at("downconv");
    detail::check_known_keys(d, {"out_channels", "kernel", "stride"}, "pipeline.downconv");
    DownConvSpec dc;
    dc.out_channels = d.value("out_channels", 1);
    if (d.contains("kernel")) {
      dc.kh = d.at("kernel")[0].get<int>();
      dc.kw = d.at("kernel")[1].get<int>();
    }
    if (d.contains("stride")) {
      dc.sy = d.at("stride")[0].get<int>();
      dc.sx = d.at("stride")[1].get<int>();
    }
    p.downconv = dc;
  }
  return p;
}

inline nlohmann::json pipeline_to_json(const PipelineSpec& p) {
  nlohmann::json j;
  j["grid"] = p.grid;
  j["pool"] = p.pool;
  if (p.downconv) {
    j["downconv"] = {{"out_channels", p.downconv->out_channels},
                     {"kernel", {p.downconv->kh, p.downconv->kw}},
                     {"stride", {p.downconv->sy, p.downconv->sx}}};
  } else {
    j["downconv"] = nullptr;
  }
  return j;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  detail::check_known_keys(
      j, {"cell", "mods", "surrogate", "mod4_surrogate", "gamma", "v_th", "task", "pipeline",
          "n_layers", "hidden", "hidden_grid", "kernel", "decay_init", "current_bias_init",
          "learn_decay", "detach_reset", "epochs", "batch", "lr", "clip_norm", "threads",
          "seed"},
      "config");
  ExperimentConfig c;
  if (j.contains("cell")) c.cell = cell_kind_from_string(j.at("cell").get<std::string>());
  if (j.contains("mods")) c.mods = mods_from_list(j.at("mods").get<std::vector<int>>());
  if (j.contains("surrogate"))
    c.surrogate = surrogate_kind_from_string(j.at("surrogate").get<std::string>());
  if (j.contains("mod4_surrogate"))
    c.mod4_surrogate = surrogate_kind_from_string(j.at("mod4_surrogate").get<std::string>());
  c.gamma = j.value("gamma", c.gamma);
  c.v_th = j.value("v_th", c.v_th);
  if (j.contains("task")) c.task = task_from_json(j.at("task"));
  if (j.contains("pipeline")) c.pipeline = pipeline_from_json(j.at("pipeline"));
  c.n_layers = j.value("n_layers", c.n_layers);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("hidden_grid")) c.hidden_grid = j.at("hidden_grid").get<Shape>();
  c.kernel = j.value("kernel", c.kernel);
  c.decay_init = j.value("decay_init", c.decay_init);
  c.current_bias_init = j.value("current_bias_init", c.current_bias_init);
  c.learn_decay = j.value("learn_decay", c.learn_decay);
  c.detach_reset = j.value("detach_reset", c.detach_reset);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.threads = j.value("threads", c.threads);
  c.seed = j.value("seed", c.seed);
  if (c.mods.mod3 && c.cell == CellKind::variant && c.hidden_grid.size() != 3)
    throw config_error("mod3 requires hidden_grid [C,H,W]");
  if (c.epochs < 0 || c.batch < 1) throw config_error("invalid epochs/batch");
  return c;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["cell"] = to_string(c.cell);
  j["mods"] = mods_to_list(c.mods);
  j["surrogate"] = to_string(c.surrogate);
  j["mod4_surrogate"] = to_string(c.mod4_surrogate);
  j["gamma"] = c.gamma;
  j["v_th"] = c.v_th;
  j["task"] = task_to_json(c.task);
  j["pipeline"] = pipeline_to_json(c.pipeline);
  j["n_layers"] = c.n_layers;
  j["hidden"] = c.hidden;
  j["hidden_grid"] = c.hidden_grid;
  j["kernel"] = c.kernel;
  j["decay_init"] = c.decay_init;
  j["current_bias_init"] = c.current_bias_init;
  j["learn_decay"] = c.learn_decay;
  j["detach_reset"] = c.detach_reset;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["clip_norm"] = c.clip_norm;
  j["threads"] = c.threads;
  j["seed"] = c.seed;
  return j;
}

inline std::string config_digest(const ExperimentConfig& c) {
  return hex64(fnv1a64(experiment_to_json(c).dump()));
}

// ---- experiment runner -----------------------------------------------------------

inline std::string model_label(CellKind kind, const ModSet& mods) {
  switch (kind) {
    case CellKind::gru: return "GRU";
    case CellKind::cuba_lif: return "Cuba-LIF";
    case CellKind::spikgru: return "SpikGRU";
    case CellKind::variant: return mods.label();
  }
  return "?";
}

struct MetricsRecord {
  std::string digest;
  std::string model;
  std::string mods;
  std::vector<EpochMetrics> epochs;
  double final_test_acc = 0.0;
  std::optional<double> activity;             // spikes/neuron/timestep, test set
  std::optional<double> relative_reduction;   // % vs the SpikGRU baseline
  std::string status = "ok";
  Network network;  // trained parameters (empty params when the run failed early)
};

namespace detail {

inline std::string mods_string(const ModSet& m) {
  std::string s;
  for (int v : mods_to_list(m)) s += (s.empty() ? "" : "+") + std::to_string(v);
  return s;
}

}  // namespace detail

// Builds the task and network from one config, trains, and evaluates.
// Training divergence is captured in the record status rather than thrown, so
// grid runs always produce a row per cell.
inline MetricsRecord run_experiment(const ExperimentConfig& cfg) {
  MetricsRecord rec;
  rec.digest = config_digest(cfg);
  rec.model = model_label(cfg.cell, cfg.mods);
  rec.mods = detail::mods_string(cfg.mods);

  BuiltTask task = build_task(cfg.task, detail::derive_seed(cfg.seed, 0x7461736bULL));
  PipelineSpec data_side = cfg.pipeline;
  data_side.downconv.reset();  // the learnable conv lives in the network
  if (!data_side.grid.empty() || data_side.pool) {
    task.train = reshape_pipeline(task.train, data_side);
    task.test = reshape_pipeline(task.test, data_side);
  }

  const Shape& ds_shape = task.train[0].data.shape();
  NetworkConfig nc;
  nc.kind = cfg.cell;
  nc.mods = cfg.mods;
  nc.surrogate = cfg.effective_surrogate();
  nc.n_layers = cfg.n_layers;
  nc.hidden = cfg.hidden;
  nc.hidden_grid = cfg.hidden_grid;
  nc.kernel = cfg.kernel;
  nc.classes = task.classes;
  nc.input_shape = {ds_shape[1], ds_shape[2], ds_shape[3]};
  nc.front = cfg.pipeline.downconv;
  nc.v_th = cfg.v_th;
  nc.decay_init = cfg.decay_init;
  nc.current_bias_init = cfg.current_bias_init;
  nc.learn_decay = cfg.learn_decay;
  nc.detach_reset = cfg.detach_reset;

  rec.network = build_network(nc, detail::derive_seed(cfg.seed, 0x6e6574ULL));

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch = cfg.batch;
  tc.adam.lr = cfg.lr;
  tc.clip_norm = cfg.clip_norm;
  tc.threads = cfg.threads;
  tc.seed = detail::derive_seed(cfg.seed, 0x73677274ULL);

  try {
    TrainResult tr = train(rec.network, task.train, task.test, tc);
    rec.epochs = std::move(tr.epochs);
  } catch (const divergence_error& e) {
    rec.status = std::string("diverged: ") + e.what();
    return rec;
  }

  EvalResult ev = evaluate(rec.network, task.test, cfg.threads);
  rec.final_test_acc = ev.accuracy;
  rec.activity = ev.activity;
  return rec;
}

// One run per mod subset plus the GRU, Cuba-LIF and SpikGRU baselines, all
// sharing the seed. Failed cells keep their row with a diagnostic status.
inline std::vector<MetricsRecord> ablation_grid(const ExperimentConfig& base,
                                                const std::vector<std::vector<int>>& subsets) {
  std::vector<MetricsRecord> rows;
  auto run_row = [&](CellKind kind, const ModSet& mods) {
    ExperimentConfig cfg = base;
    cfg.cell = kind;
    cfg.mods = kind == CellKind::variant ? mods : ModSet{};
    try {
      rows.push_back(run_experiment(cfg));
    } catch (const std::exception& e) {
      MetricsRecord rec;
      rec.digest = config_digest(cfg);
      rec.model = model_label(kind, cfg.mods);
      rec.mods = detail::mods_string(cfg.mods);
      rec.status = std::string("error: ") + e.what();
      rows.push_back(std::move(rec));
    }
  };

  run_row(CellKind::gru, {});
  run_row(CellKind::cuba_lif, {});
  run_row(CellKind::spikgru, {});
  std::optional<double> baseline_activity = rows.back().activity;
  for (const std::vector<int>& subset : subsets) run_row(CellKind::variant, mods_from_list(subset));

  if (baseline_activity && *baseline_activity > 0.0) {
    for (MetricsRecord& r : rows) {
      if (r.model != "SpikGRU" && r.activity)
        r.relative_reduction = (*baseline_activity - *r.activity) / *baseline_activity * 100.0;
    }
  }
  return rows;
}

// ---- CSV emission ------------------------------------------------------------------

// Per-epoch metric log. Wall-clock seconds are only written when requested,
// so the default output is byte-reproducible across runs.
inline std::string epoch_csv(const std::vector<EpochMetrics>& rows, bool include_wall = false) {
  std::string out = "epoch,train_loss,train_acc,test_acc,spikes_per_neuron_per_step,wall_seconds\n";
  for (const EpochMetrics& m : rows) {
    out += std::to_string(m.epoch);
    out += ',' + fmt_double(m.train_loss, "%.12g");
    out += ',' + fmt_double(m.train_acc, "%.6f");
    out += ',' + fmt_double(m.test_acc, "%.6f");
    out += ',';
    if (m.activity) out += fmt_double(*m.activity, "%.8f");
    out += ',';
    out += include_wall ? fmt_double(m.wall_seconds, "%.3f") : "0.000";
    out += '\n';
  }
  return out;
}

inline std::string ablation_csv(const std::vector<MetricsRecord>& rows) {
  std::string out = "model,mods,test_acc,spikes_per_neuron_per_step,relative_reduction_pct,status\n";
  for (const MetricsRecord& r : rows) {
    out += r.model + ',' + r.mods + ',';
    if (r.status == "ok") out += fmt_double(r.final_test_acc, "%.6f");
    out += ',';
    if (r.activity) out += fmt_double(*r.activity, "%.8f");
    out += ',';
    if (r.relative_reduction) out += fmt_double(*r.relative_reduction, "%.2f");
    out += ',' + r.status + '\n';
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write file: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace csgru
