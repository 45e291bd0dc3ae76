#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "safenet/data.hpp"
#include "safenet/dsp.hpp"
#include "safenet/model.hpp"
#include "safenet/train.hpp"

namespace safenet::config {

struct ProfileConfig {
  std::size_t batch = 50;
  std::size_t repeats = 20;  // >= 10
  std::size_t warmup = 3;    // >= 3

  void validate() const;
};

// Every tunable of the pipeline. Defaults reproduce the reference setup.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  data::SynthSpec synth;
  dsp::DspConfig dsp;
  model::SAFENetConfig model;
  train::TrainConfig train;
  ProfileConfig profile;

  void validate() const;
};

nlohmann::json to_json(const model::SAFENetConfig& cfg);
nlohmann::json to_json(const RunConfig& cfg);

// Start from `base` and apply the keys present in `j`. Unknown keys and values
// of the wrong type throw ParseError naming the key path.
model::SAFENetConfig model_config_from_json(const nlohmann::json& j, model::SAFENetConfig base = {});
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical single-line JSON text (sorted keys).
std::string echo(const RunConfig& cfg);
std::string echo(const model::SAFENetConfig& cfg);

}  // namespace safenet::config
