#include "safenet/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "safenet/errors.hpp"

namespace safenet::pipeline {

using nlohmann::json;

namespace {

json stats_json(const dsp::ZScoreStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

dsp::ZScoreStats stats_from_json(const json& j) {
  dsp::ZScoreStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.std.size()) throw ParseError("run.json: stats mean and std lengths differ");
  return s;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json joint_json(const train::JointMetrics& m) {
  return {{"rmse", m.rmse}, {"mae", m.mae}, {"pcc", optional_json(m.pcc)}, {"r2", optional_json(m.r2)}};
}

std::string format_losses(const train::LossBreakdown& l) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "total=%.6f mse=%.6f ce=%.6f orth=%.6f", l.total, l.mse, l.ce, l.orth);
  return buf;
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

dsp::WindowedDataset load_dataset(const data::DatasetManifest& manifest, const dsp::DspConfig& cfg) {
  manifest.validate();
  if (manifest.entries.empty()) throw ContractError("manifest has no entries");
  const double fs = manifest.entries.front().fs_emg;
  std::vector<dsp::WindowedDataset> parts;
  for (const data::ManifestEntry& e : manifest.entries) {
    if (e.fs_emg != fs) throw ContractError("manifest mixes sEMG rates; resample the recordings first");
    parts.push_back(dsp::preprocess_recording(data::load_recording(manifest, e), cfg));
  }
  return dsp::concat(parts);
}

config::RunConfig resolve(config::RunConfig cfg, const data::DatasetManifest& manifest) {
  manifest.validate();
  if (manifest.entries.empty()) throw ContractError("manifest has no entries");
  cfg.model.embed.c_in = manifest.channel_names.size();
  cfg.model.n_joints = manifest.joint_names.size();
  cfg.model.n_subjects = manifest.subject_count();
  cfg.model.window = cfg.dsp.window_length(manifest.entries.front().fs_emg);
  cfg.validate();
  return cfg;
}

json metrics_to_json(const train::MetricReport& report, const std::vector<std::string>& joint_names) {
  json joints = json::object();
  for (std::size_t j = 0; j < report.joints.size(); ++j) {
    const std::string name = j < joint_names.size() ? joint_names[j] : "joint" + std::to_string(j);
    joints[name] = joint_json(report.joints[j]);
  }
  return {{"windows", report.windows},
          {"identity_accuracy", report.identity_accuracy},
          {"joints", joints},
          {"mean", joint_json(report.mean)}};
}

TrainOutcome run_training(const config::RunConfig& cfg, const data::DatasetManifest& manifest,
                          const std::filesystem::path& out_dir, std::ostream* progress) {
  cfg.validate();
  const std::string echo = config::echo(cfg);
  const dsp::WindowedDataset all = load_dataset(manifest, cfg.dsp);
  const train::Splits splits = train::split(all);

  std::ofstream log(out_dir / kLogFile, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open " + (out_dir / kLogFile).string() + " for writing");
  log << "# config: " << echo << '\n';
  log << "# windows: train=" << splits.train.size() << " val=" << splits.val.size()
      << " test=" << splits.test.size() << '\n';

  model::SAFENet net(cfg.model, cfg.seed);
  TrainOutcome outcome;
  outcome.fit = train::fit(net, splits.train, splits.val, cfg.train, cfg.seed, [&](const train::EpochRecord& r) {
    char head[64];
    std::snprintf(head, sizeof head, "epoch %zu lr=%.6g ", r.epoch, r.lr);
    const std::string line = head + ("train " + format_losses(r.train)) + " val " + format_losses(r.val);
    log << line << '\n';
    if (progress != nullptr) *progress << line << std::endl;
  });
  log << "# best_epoch: " << outcome.fit.best_epoch << (outcome.fit.stopped_early ? " (early stop)" : "") << '\n';

  outcome.test = train::evaluate(net, splits.test, splits.angle_stats);
  model::save_checkpoint(net, out_dir / kCheckpointFile, config::to_json(cfg));

  json run = {{"config", config::to_json(cfg)},
              {"emg_stats", stats_json(splits.emg_stats)},
              {"angle_stats", stats_json(splits.angle_stats)},
              {"channel_names", manifest.channel_names},
              {"joint_names", manifest.joint_names},
              {"best_epoch", outcome.fit.best_epoch}};
  write_json(run, out_dir / kRunFile);

  json metrics = metrics_to_json(outcome.test, manifest.joint_names);
  metrics["split"] = "test";
  metrics["config"] = config::to_json(cfg);
  write_json(metrics, out_dir / kMetricsFile);
  if (!log) throw std::runtime_error("write failed for " + (out_dir / kLogFile).string());
  return outcome;
}

LoadedRun load_run(const std::filesystem::path& dir) {
  const std::filesystem::path run_path = dir / kRunFile;
  std::ifstream in(run_path);
  if (!in) throw ParseError("run file not found: " + run_path.string());
  LoadedRun run;
  try {
    const json j = json::parse(in);
    run.config = config::run_config_from_json(j.at("config"));
    run.emg_stats = stats_from_json(j.at("emg_stats"));
    run.angle_stats = stats_from_json(j.at("angle_stats"));
    run.joint_names = j.at("joint_names").get<std::vector<std::string>>();
  } catch (const json::exception& ex) {
    throw ParseError(run_path.string() + ": " + ex.what());
  }
  run.config.validate();
  run.net = std::make_unique<model::SAFENet>(run.config.model, run.config.seed);
  model::load_checkpoint(*run.net, dir / kCheckpointFile);
  return run;
}

dsp::WindowedDataset select_split(const dsp::WindowedDataset& all, const std::string& which, const LoadedRun& run) {
  dsp::WindowedDataset ds;
  if (which == "all") {
    ds = all;
  } else {
    const train::Partition p = train::partition(all);
    if (which == "train") {
      ds = dsp::gather(all, p.train);
    } else if (which == "val") {
      ds = dsp::gather(all, p.val);
    } else if (which == "test") {
      ds = dsp::gather(all, p.test);
    } else {
      throw ContractError("unknown split '" + which + "'; expected train, val, test or all");
    }
  }
  train::standardize(ds, run.emg_stats, run.angle_stats);
  return ds;
}

}  // namespace safenet::pipeline
