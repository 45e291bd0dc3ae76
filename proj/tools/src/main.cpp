#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "safenet/config.hpp"
#include "safenet/data.hpp"
#include "safenet/errors.hpp"
#include "safenet/pipeline.hpp"
#include "safenet/profiler.hpp"
#include "safenet/random.hpp"
#include "safenet/runtime.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace safenet;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

// Refused operation that the user can fix by changing the invocation.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool no_safd = false;
  std::optional<std::size_t> safd_iters;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<std::size_t> threads;
  std::string manifest;
  std::string run_dir;
  std::string split = "test";
  std::string csv;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON run config; unknown keys are rejected");
  cmd->add_option("--seed", o.seed, "Seed (data seed for synth, model and shuffling seed otherwise)");
  cmd->add_flag("--force", o.force, "Overwrite existing outputs");
  cmd->add_flag("--no-safd", o.no_safd, "Disable the decomposition stage");
  cmd->add_option("--safd-iters", o.safd_iters, "Decomposition iterations");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--batch", o.batch, "Batch size for training and profiling");
  cmd->add_option("--lr", o.lr, "Initial learning rate");
  cmd->add_option("--device-threads", o.threads, "Worker threads for the numeric kernels");
}

config::RunConfig base_config(const Options& o) {
  config::RunConfig cfg = o.config_path.empty() ? config::RunConfig{} : config::load_run_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.no_safd) cfg.model.safd_enabled = false;
  if (o.safd_iters) cfg.model.safd.iterations = *o.safd_iters;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch) {
    cfg.train.batch_size = *o.batch;
    cfg.profile.batch = *o.batch;
  }
  if (o.lr) cfg.train.lr = *o.lr;
  if (o.threads) cfg.threads = *o.threads;
  return cfg;
}

// Creates `dir` for a fresh output set. An existing non-empty directory needs --force.
void prepare_out_dir(const std::string& dir, bool force) {
  if (dir.empty()) throw UsageError("--out is required");
  const fs::path p(dir);
  if (fs::exists(p) && !force) {
    if (!fs::is_directory(p) || !fs::is_empty(p)) {
      throw UsageError("output directory exists: " + p.string() + " (pass --force to overwrite)");
    }
  }
  fs::create_directories(p);
}

// Path of a file written into --out, or empty when printing to stdout only.
fs::path output_file(const Options& o, const std::string& name) {
  if (o.out.empty()) return {};
  fs::create_directories(o.out);
  const fs::path p = fs::path(o.out) / name;
  if (fs::exists(p) && !o.force) throw UsageError("output file exists: " + p.string() + " (pass --force to overwrite)");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

data::DatasetManifest require_manifest(const Options& o) {
  if (o.manifest.empty()) throw UsageError("--manifest is required");
  return data::read_manifest(o.manifest);
}

pipeline::LoadedRun require_run(const Options& o) {
  if (o.run_dir.empty()) throw UsageError("--run is required");
  pipeline::LoadedRun run = pipeline::load_run(o.run_dir);
  if (o.threads) run.config.threads = *o.threads;
  runtime::set_threads(run.config.threads);
  return run;
}

int cmd_synth(const Options& o) {
  config::RunConfig cfg = base_config(o);
  if (o.seed) cfg.synth.seed = *o.seed;
  cfg.validate();
  prepare_out_dir(o.out, o.force);
  const data::SyntheticCohort cohort = data::generate_synthetic_cohort(cfg.synth);
  data::write_cohort(cohort, cfg.synth, o.out);
  write_text(fs::path(o.out) / "synth.json", json{{"config", config::to_json(cfg)}}.dump(2) + "\n");
  std::cout << "wrote " << cohort.recordings.size() << " subjects to " << o.out << "\n";
  return 0;
}

int cmd_preprocess(const Options& o) {
  const data::DatasetManifest manifest = require_manifest(o);
  const config::RunConfig cfg = pipeline::resolve(base_config(o), manifest);
  prepare_out_dir(o.out, o.force);
  const dsp::WindowedDataset ds = pipeline::load_dataset(manifest, cfg.dsp);
  dsp::write_sfw1(ds, fs::path(o.out) / "dataset.sfw1");
  const dsp::WindowedDataset train_part = dsp::gather(ds, train::partition(ds).train);
  const dsp::ZScoreStats emg = dsp::fit_zscore(train_part.windows);
  const dsp::ZScoreStats angles = dsp::fit_zscore(train_part.targets);
  const json meta = {{"config", config::to_json(cfg)},
                     {"emg_stats", {{"mean", emg.mean}, {"std", emg.std}}},
                     {"angle_stats", {{"mean", angles.mean}, {"std", angles.std}}},
                     {"windows", ds.size()},
                     {"length", ds.length},
                     {"step", ds.step},
                     {"channel_names", manifest.channel_names},
                     {"joint_names", manifest.joint_names}};
  write_text(fs::path(o.out) / "dataset.json", meta.dump(2) + "\n");
  std::cout << "wrote " << ds.size() << " windows of " << ds.length << " samples to " << o.out << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const data::DatasetManifest manifest = require_manifest(o);
  const config::RunConfig cfg = pipeline::resolve(base_config(o), manifest);
  runtime::set_threads(cfg.threads);
  prepare_out_dir(o.out, o.force);
  const pipeline::TrainOutcome r = pipeline::run_training(cfg, manifest, o.out, &std::cerr);
  std::cout << "best epoch " << r.fit.best_epoch << "; test mean R2 "
            << (r.test.mean.r2 ? std::to_string(*r.test.mean.r2) : "n/a") << ", identity accuracy "
            << r.test.identity_accuracy << "\n";
  std::cout << "run written to " << o.out << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  pipeline::LoadedRun run = require_run(o);
  const data::DatasetManifest manifest = require_manifest(o);
  const dsp::WindowedDataset all = pipeline::load_dataset(manifest, run.config.dsp);
  const dsp::WindowedDataset ds = pipeline::select_split(all, o.split, run);
  const train::MetricReport report = train::evaluate(*run.net, ds, run.angle_stats);
  json j = pipeline::metrics_to_json(report, run.joint_names);
  j["split"] = o.split;
  j["config"] = config::to_json(run.config);
  const fs::path path = output_file(o, "eval_" + o.split + ".json");
  if (!path.empty()) write_text(path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

std::string cost_report_text(const profiler::CostReport& r, const std::string& echo) {
  std::ostringstream s;
  s.precision(10);
  s << "params: " << r.params << "\n"
    << "model_size_bytes: " << r.model_size_bytes << "\n"
    << "flops: " << r.flops << "\n"
    << "effective_macs: " << r.effective_macs << "\n"
    << "spike_rate: " << r.spike_rate << "\n"
    << "latency_s: " << r.latency_s << "\n"
    << "latency_var: " << r.latency_var << "\n"
    << "power_w: " << r.power_w << "\n"
    << "power_w_annotated: " << r.power_w_annotated << "\n"
    << "note: " << r.note << "\n"
    << "config: " << echo << "\n";
  return s.str();
}

int cmd_profile(const Options& o) {
  config::RunConfig cfg;
  std::unique_ptr<model::SAFENet> fresh;
  model::SAFENet* net = nullptr;
  std::optional<pipeline::LoadedRun> run;
  Tensor windows;
  if (!o.run_dir.empty()) {
    run = require_run(o);
    cfg = run->config;
    if (o.batch) cfg.profile.batch = *o.batch;
    net = run->net.get();
  } else {
    cfg = base_config(o);
    cfg.validate();
    fresh = std::make_unique<model::SAFENet>(cfg.model, cfg.seed);
    net = fresh.get();
  }
  cfg.validate();
  if (run && !o.manifest.empty()) {
    const data::DatasetManifest manifest = require_manifest(o);
    const dsp::WindowedDataset test = pipeline::select_split(pipeline::load_dataset(manifest, cfg.dsp), "test", *run);
    windows = dsp::slice(test, 0, std::min(cfg.profile.batch, test.size())).windows;
  } else {
    // Standardized inputs stand in for real windows.
    Rng rng(cfg.seed, 0x50524f46);
    windows = Tensor({cfg.profile.batch, cfg.model.window, cfg.model.embed.c_in});
    for (double& v : windows.values()) v = rng.normal();
  }
  const profiler::CostReport r = profiler::profile(*net, windows, cfg.profile.repeats, cfg.profile.warmup);
  const std::string text = cost_report_text(r, config::echo(cfg));
  const fs::path path = output_file(o, "profile.txt");
  if (!path.empty()) write_text(path, text);
  std::cout << text;
  if (!o.csv.empty()) {
    const bool fresh_file = !fs::exists(o.csv);
    std::ofstream out(o.csv, std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + o.csv + " for writing");
    if (fresh_file) {
      out << "params,model_size_bytes,flops,effective_macs,spike_rate,latency_s,latency_var,power_w,"
             "power_w_annotated,batch,config\n";
    }
    out.precision(10);
    std::string quoted = config::echo(cfg);
    for (std::size_t pos = 0; (pos = quoted.find('"', pos)) != std::string::npos; pos += 2) quoted.insert(pos, 1, '"');
    out << r.params << ',' << r.model_size_bytes << ',' << r.flops << ',' << r.effective_macs << ',' << r.spike_rate
        << ',' << r.latency_s << ',' << r.latency_var << ',' << r.power_w << ',' << r.power_w_annotated << ','
        << windows.dim(0) << ",\"" << quoted << "\"\n";
  }
  return 0;
}

int cmd_decompose(const Options& o) {
  pipeline::LoadedRun run = require_run(o);
  const data::DatasetManifest manifest = require_manifest(o);
  if (o.out.empty()) throw UsageError("--out is required");
  const fs::path path = output_file(o, "features_" + o.split + ".csv");
  const dsp::WindowedDataset ds =
      pipeline::select_split(pipeline::load_dataset(manifest, run.config.dsp), o.split, run);
  data::export_features(*run.net, ds, path, config::echo(run.config));
  std::cout << "wrote " << ds.size() << " rows to " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  runtime::tune_allocator();
  CLI::App app{"SAFE-Net toolkit: synthetic cohorts, preprocessing, training, evaluation and profiling"};
  app.require_subcommand(1);
  Options o;

  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic multi-subject gait cohort");
  CLI::App* preprocess = app.add_subcommand("preprocess", "Filter and segment the recordings of a manifest");
  CLI::App* train = app.add_subcommand("train", "Train on a manifest and write a run directory");
  CLI::App* eval = app.add_subcommand("eval", "Score a trained run on one split");
  CLI::App* profile = app.add_subcommand("profile", "Report parameters, FLOPs, effective MACs, latency and power");
  CLI::App* decompose = app.add_subcommand("decompose", "Export kinematic and biological features per window");

  for (CLI::App* cmd : {synth, preprocess, train, eval, profile, decompose}) add_common(cmd, o);
  for (CLI::App* cmd : {synth, preprocess, train, decompose}) cmd->add_option("--out", o.out, "Output directory");
  for (CLI::App* cmd : {eval, profile}) cmd->add_option("--out", o.out, "Directory for the report file");
  for (CLI::App* cmd : {preprocess, train, eval, profile, decompose}) {
    cmd->add_option("--manifest", o.manifest, "Dataset manifest (JSON)");
  }
  for (CLI::App* cmd : {eval, profile, decompose}) cmd->add_option("--run", o.run_dir, "Run directory from train");
  for (CLI::App* cmd : {eval, decompose}) {
    cmd->add_option("--split", o.split, "train, val, test or all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
  }
  profile->add_option("--csv", o.csv, "Append one delimited row per report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*preprocess) return cmd_preprocess(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*profile) return cmd_profile(o);
    if (*decompose) return cmd_decompose(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::logic_error& e) {
    // ContractError, DimensionError, RangeError and LengthError: invalid configuration or inputs.
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}
