// Experiment CLI: train single configs, run ablation grids, encode spike
// data, and evaluate checkpoints. Exit codes: 0 success, 2 configuration
// error, 3 training divergence.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "csgru/checkpoint.hpp"
#include "csgru/data.hpp"
#include "csgru/experiment.hpp"
#include "csgru/idx.hpp"
#include "csgru/metrics.hpp"

namespace fs = std::filesystem;
using namespace csgru;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
}

ExperimentConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  ExperimentConfig cfg = experiment_from_json(read_json_file(path));
  if (seed) cfg.seed = *seed;
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw config_error("cannot create output directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

bool sniff_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  return b[0] == 0 && b[1] == 0 && (b[3] == 1 || b[3] == 3);
}

int cmd_train(const ExperimentConfig& cfg, const std::string& out_dir, bool timings) {
  ensure_dir(out_dir);
  MetricsRecord rec = run_experiment(cfg);
  write_text_file(join(out_dir, "config_echo.json"), experiment_to_json(cfg).dump(2) + "\n");
  write_text_file(join(out_dir, "metrics.csv"), epoch_csv(rec.epochs, timings));
  if (rec.status != "ok") {
    std::cerr << "training aborted: " << rec.status << "\n";
    return 3;
  }
  save_checkpoint(rec.network, join(out_dir, "checkpoint.ckpt"));
  std::cout << "model " << rec.model << "  digest " << rec.digest << "\n"
            << "final_test_acc " << fmt_double(rec.final_test_acc, "%.4f");
  if (rec.activity)
    std::cout << "  spikes/neuron/step " << fmt_double(*rec.activity, "%.4f");
  std::cout << "\noutputs in " << out_dir << "\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::string>& mod_args,
               const std::string& out_dir) {
  std::vector<std::vector<int>> subsets;
  for (const std::string& arg : mod_args) {
    std::vector<int> subset;
    std::string tok;
    std::istringstream ss(arg);
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) subset.push_back(std::stoi(tok));
    if (subset.empty()) throw config_error("empty --mods subset: '" + arg + "'");
    mods_from_list(subset);  // validates values
    subsets.push_back(std::move(subset));
  }
  ensure_dir(out_dir);
  std::vector<MetricsRecord> rows = ablation_grid(cfg, subsets);
  const std::string csv = ablation_csv(rows);
  write_text_file(join(out_dir, "ablation.csv"), csv);
  write_text_file(join(out_dir, "config_echo.json"), experiment_to_json(cfg).dump(2) + "\n");
  std::cout << csv << "outputs in " << out_dir << "\n";
  return 0;
}

int cmd_encode(const std::string& in_path, const std::string& out_path,
               const std::string& labels_path, int timesteps, int sensor_h, int sensor_w,
               int bins, double window, std::uint64_t seed) {
  if (sniff_idx(in_path)) {
    std::vector<Tensor> images = read_idx_images(in_path);
    std::vector<int> labels(images.size(), 0);
    if (!labels_path.empty()) {
      labels = read_idx_labels(labels_path);
      if (labels.size() < images.size())
        throw data_error("label file has fewer entries than the image file");
    }
    Dataset ds;
    ds.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
      ds.push_back(rate_encode(images[i], timesteps, seed, i, labels[i]));
    save_spk(out_path, ds);
    std::cout << "encoded " << ds.size() << " rate-coded sequences (T=" << timesteps << ") to "
              << out_path << "\n";
  } else {
    SpikeSequence seq = load_events(in_path, sensor_h, sensor_w, bins, window);
    save_spk(out_path, {seq});
    std::cout << "binned events into [" << bins << ",2," << sensor_h << "," << sensor_w
              << "] sequence at " << out_path << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& task_path,
             const std::optional<std::uint64_t>& seed, const std::string& out_dir) {
  Network net = load_checkpoint(checkpoint_path);
  ExperimentConfig cfg = load_config(task_path, seed);
  BuiltTask task = build_task(cfg.task, detail::derive_seed(cfg.seed, 0x7461736bULL));
  PipelineSpec data_side = cfg.pipeline;
  data_side.downconv.reset();
  if (!data_side.grid.empty() || data_side.pool)
    task.test = reshape_pipeline(task.test, data_side);
  const Shape& s = task.test[0].data.shape();
  if (Shape{s[1], s[2], s[3]} != net.config.input_shape)
    throw config_error("task input shape " + shape_str({s[1], s[2], s[3]}) +
                       " does not match checkpoint input " +
                       shape_str(net.config.input_shape));
  EvalResult ev = evaluate(net, task.test, cfg.threads);
  std::string csv = "model,test_acc,spikes_per_neuron_per_step\n";
  csv += model_label(net.config.kind, net.config.mods) + ',' +
         fmt_double(ev.accuracy, "%.6f") + ',';
  if (ev.activity) csv += fmt_double(*ev.activity, "%.8f");
  csv += '\n';
  ensure_dir(out_dir);
  write_text_file(join(out_dir, "eval.csv"), csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional spiking GRU experiment harness"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out-dir", out_dir, "output directory (default .)");

  auto* train_cmd = app.add_subcommand("train", "train one configuration");
  std::string train_config;
  bool timings = false;
  train_cmd->add_option("--config", train_config, "experiment config JSON")->required();
  train_cmd->add_flag("--timings", timings, "include measured wall seconds in metrics.csv");

  auto* ablate_cmd = app.add_subcommand("ablate", "run the mod-subset ablation grid");
  std::string ablate_config;
  std::vector<std::string> mod_args;
  ablate_cmd->add_option("--config", ablate_config, "base experiment config JSON")->required();
  ablate_cmd->add_option("--mods", mod_args,
                         "mod subset as comma-separated digits; repeat for several subsets");

  auto* encode_cmd = app.add_subcommand("encode", "encode images or events into a spike bundle");
  std::string enc_in, enc_out, enc_labels;
  int enc_T = 10, enc_h = 128, enc_w = 128, enc_bins = 10;
  double enc_window = 1.0;
  encode_cmd->add_option("--in", enc_in, "input file (idx images or t,x,y,p event csv)")
      ->required();
  encode_cmd->add_option("--out", enc_out, "output spike bundle")->required();
  encode_cmd->add_option("--labels", enc_labels, "idx label file");
  encode_cmd->add_option("--timesteps", enc_T, "rate-coding timesteps (idx input)");
  encode_cmd->add_option("--sensor-h", enc_h, "sensor height (event input)");
  encode_cmd->add_option("--sensor-w", enc_w, "sensor width (event input)");
  encode_cmd->add_option("--bins", enc_bins, "time bins (event input)");
  encode_cmd->add_option("--window", enc_window, "binning window in seconds (event input)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a task");
  std::string eval_ckpt, eval_task;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint archive")->required();
  eval_cmd->add_option("--task", eval_task, "experiment config JSON naming the task")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(load_config(train_config, seed), out_dir, timings);
    if (*ablate_cmd) return cmd_ablate(load_config(ablate_config, seed), mod_args, out_dir);
    if (*encode_cmd)
      return cmd_encode(enc_in, enc_out, enc_labels, enc_T, enc_h, enc_w, enc_bins, enc_window,
                        seed.value_or(1));
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_task, seed, out_dir);
  } catch (const divergence_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const parse_error& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
