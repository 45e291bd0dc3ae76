#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safenet/config.hpp"
#include "safenet/data.hpp"
#include "safenet/dsp.hpp"
#include "safenet/model.hpp"
#include "safenet/train.hpp"

namespace safenet::pipeline {

// File names inside a run directory.
inline constexpr const char* kCheckpointFile = "checkpoint.sfn";
inline constexpr const char* kRunFile = "run.json";
inline constexpr const char* kLogFile = "train.log";
inline constexpr const char* kMetricsFile = "metrics.json";

// Every recording of the manifest, preprocessed and segmented, in manifest
// order. All entries must share one sEMG rate.
dsp::WindowedDataset load_dataset(const data::DatasetManifest& manifest, const dsp::DspConfig& cfg);

// Copies the data-dependent widths (channels, joints, subjects, window length)
// into the model config and validates the result.
config::RunConfig resolve(config::RunConfig cfg, const data::DatasetManifest& manifest);

nlohmann::json metrics_to_json(const train::MetricReport& report, const std::vector<std::string>& joint_names);

struct TrainOutcome {
  train::FitResult fit;
  train::MetricReport test;
};

// dsp, split, fit and test evaluation for a resolved config. Writes the
// checkpoint, run.json, train.log and metrics.json into `out_dir`, which must
// exist. Progress lines go to `progress` when given.
TrainOutcome run_training(const config::RunConfig& cfg, const data::DatasetManifest& manifest,
                          const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

struct LoadedRun {
  config::RunConfig config;
  dsp::ZScoreStats emg_stats, angle_stats;
  std::vector<std::string> joint_names;
  std::unique_ptr<model::SAFENet> net;
};

// Reads run.json and the checkpoint of a run directory.
LoadedRun load_run(const std::filesystem::path& dir);

// Rows of `all` belonging to `which` ("train", "val", "test" or "all"),
// standardized with the run's training statistics.
dsp::WindowedDataset select_split(const dsp::WindowedDataset& all, const std::string& which, const LoadedRun& run);

}  // namespace safenet::pipeline
