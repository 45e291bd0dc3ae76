#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "safenet/dsp.hpp"
#include "safenet/model.hpp"

namespace safenet::data {

struct ManifestEntry {
  std::string path;        // sEMG recording, relative to the manifest directory
  std::string angle_path;  // joint-angle recording, same convention
  int subject_id = 0;
  double fs_emg = 500.0;
  double fs_ang = 500.0;
  std::string condition;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> channel_names;
  std::vector<std::string> joint_names;
  std::filesystem::path base_dir;  // directory the manifest was read from

  std::size_t subject_count() const;
  // Subject ids must be contiguous from 0.
  void validate() const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Parses a delimited-text table whose header must equal `columns`. Errors name
// the file, line and column.
Tensor read_table(const std::filesystem::path& path, const std::vector<std::string>& columns);
// Writes with shortest round-trip formatting.
void write_table(const std::filesystem::path& path, const std::vector<std::string>& columns, const Tensor& values);

dsp::RawRecording load_recording(const DatasetManifest& manifest, const ManifestEntry& entry);

struct SynthSpec {
  std::size_t n_subjects = 4;
  double gait_period_s = 1.0;
  double fs = 500.0;        // sEMG rate
  double fs_angle = 100.0;  // joint-angle rate
  double duration_s = 60.0;
  std::size_t n_channels = 5;
  std::size_t n_joints = 3;
  double noise_level = 0.05;
  double hum_level = 0.2;  // 50 Hz interference amplitude
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticCohort {
  std::vector<dsp::RawRecording> recordings;
  std::vector<Tensor> mixing;  // per subject [c x c]
};

// Angles: phase-shifted first- and second-harmonic mixtures of the gait phase,
// clipped to [-30, 90] degrees. sEMG: 20-150 Hz band-limited noise carriers
// under phase-locked envelopes, mixed by a per-subject matrix, plus sensor
// noise and mains interference.
SyntheticCohort generate_synthetic_cohort(const SynthSpec& spec);

// Writes one sEMG and one angle table per subject plus manifest.json.
DatasetManifest write_cohort(const SyntheticCohort& cohort, const SynthSpec& spec, const std::filesystem::path& dir);

std::vector<std::string> default_channel_names(std::size_t c);
std::vector<std::string> default_joint_names(std::size_t n);

// One row per window: F_k (d values), F_b (d values), subject label.
void export_features(model::SAFENet& net, const dsp::WindowedDataset& ds, const std::filesystem::path& path,
                     const std::string& config_echo = {});

}  // namespace safenet::data
