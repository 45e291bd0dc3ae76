#include "safenet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include "safenet/errors.hpp"
#include "safenet/random.hpp"

namespace safenet::data {

using nlohmann::json;

std::size_t DatasetManifest::subject_count() const {
  int top = -1;
  for (const ManifestEntry& e : entries) top = std::max(top, e.subject_id);
  return static_cast<std::size_t>(top + 1);
}

void DatasetManifest::validate() const {
  if (entries.empty()) throw ParseError("manifest: no entries");
  if (channel_names.empty() || joint_names.empty()) throw ParseError("manifest: channel and joint names required");
  std::vector<bool> seen(subject_count(), false);
  for (const ManifestEntry& e : entries) {
    if (e.subject_id < 0) throw ParseError("manifest: negative subject id");
    if (!(e.fs_emg > 0.0 && e.fs_ang > 0.0)) throw ParseError("manifest: sampling rates must be positive");
    seen[static_cast<std::size_t>(e.subject_id)] = true;
  }
  for (std::size_t s = 0; s < seen.size(); ++s) {
    if (!seen[s]) throw ParseError("manifest: subject ids are not contiguous from 0 (missing " + std::to_string(s) + ")");
  }
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw ParseError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("manifest not found: " + path.string());
  DatasetManifest m;
  try {
    const json j = json::parse(in);
    reject_unknown(j, {"entries", "channel_names", "joint_names"}, path.string());
    m.channel_names = j.at("channel_names").get<std::vector<std::string>>();
    m.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    for (const json& e : j.at("entries")) {
      reject_unknown(e, {"path", "angle_path", "subject_id", "fs_emg", "fs_ang", "condition"}, path.string());
      ManifestEntry entry;
      entry.path = e.at("path").get<std::string>();
      entry.angle_path = e.at("angle_path").get<std::string>();
      entry.subject_id = e.at("subject_id").get<int>();
      entry.fs_emg = e.at("fs_emg").get<double>();
      entry.fs_ang = e.at("fs_ang").get<double>();
      entry.condition = e.value("condition", std::string{});
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& ex) {
    throw ParseError(path.string() + ": " + ex.what());
  }
  m.base_dir = path.parent_path();
  m.validate();
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json j;
  j["channel_names"] = manifest.channel_names;
  j["joint_names"] = manifest.joint_names;
  j["entries"] = json::array();
  for (const ManifestEntry& e : manifest.entries) {
    j["entries"].push_back({{"path", e.path},
                            {"angle_path", e.angle_path},
                            {"subject_id", e.subject_id},
                            {"fs_emg", e.fs_emg},
                            {"fs_ang", e.fs_ang},
                            {"condition", e.condition}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    out.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Tensor read_table(const std::filesystem::path& path, const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) throw ParseError("recording not found: " + path.string());
  const std::string where = path.string();
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    have_header = true;
    break;
  }
  if (!have_header) throw ParseError(where + ": empty file");
  const auto header = split_fields(line);
  for (std::size_t i = 0; i < std::max(header.size(), columns.size()); ++i) {
    const std::string got = i < header.size() ? std::string(header[i]) : "<missing>";
    const std::string want = i < columns.size() ? columns[i] : "<none>";
    if (got != want) {
      throw ParseError(where + ":" + std::to_string(line_no) + ": column " + std::to_string(i + 1) + " is '" + got +
                       "', expected '" + want + "'");
    }
  }
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() != columns.size()) {
      throw ParseError(where + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns.size()) +
                       " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), v);
      if (ec != std::errc() || ptr != fields[i].data() + fields[i].size() || fields[i].empty()) {
        throw ParseError(where + ":" + std::to_string(line_no) + ": column '" + columns[i] + "' holds non-numeric '" +
                         std::string(fields[i]) + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw ParseError(where + ": no data rows");
  return Tensor({rows, columns.size()}, std::move(values));
}

void write_table(const std::filesystem::path& path, const std::vector<std::string>& columns, const Tensor& values) {
  if (values.rank() != 2 || values.dim(1) != columns.size()) throw DimensionError("write_table: column count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  std::string buf;
  for (std::size_t i = 0; i < columns.size(); ++i) buf += (i ? "," : "") + columns[i];
  buf += '\n';
  char num[32];
  for (std::size_t r = 0; r < values.dim(0); ++r) {
    for (std::size_t c = 0; c < values.dim(1); ++c) {
      if (c) buf += ',';
      const auto res = std::to_chars(num, num + sizeof num, values.at(r, c));
      buf.append(num, res.ptr);
    }
    buf += '\n';
  }
  out << buf;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

dsp::RawRecording load_recording(const DatasetManifest& manifest, const ManifestEntry& entry) {
  dsp::RawRecording rec;
  rec.semg = read_table(manifest.base_dir / entry.path, manifest.channel_names);
  rec.angles = read_table(manifest.base_dir / entry.angle_path, manifest.joint_names);
  rec.fs_emg = entry.fs_emg;
  rec.fs_ang = entry.fs_ang;
  rec.subject_id = entry.subject_id;
  rec.condition = entry.condition;
  return rec;
}

void SynthSpec::validate() const {
  if (n_subjects == 0 || n_channels == 0 || n_joints == 0) throw ContractError("synth: counts must be positive");
  if (!(gait_period_s > 0.0 && fs > 0.0 && fs_angle > 0.0 && duration_s > 0.0)) {
    throw ContractError("synth: period, rates and duration must be positive");
  }
  if (!(noise_level >= 0.0 && hum_level >= 0.0)) throw ContractError("synth: noise levels must be >= 0");
  if (!(fs / 2.0 > 150.0)) throw ContractError("synth: sEMG rate must exceed 300 Hz for the 20-150 Hz carrier");
}

std::vector<std::string> default_channel_names(std::size_t c) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < c; ++i) v.push_back("emg" + std::to_string(i));
  return v;
}

std::vector<std::string> default_joint_names(std::size_t n) {
  static const char* kNames[] = {"hip", "knee", "ankle"};
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(i < 3 ? kNames[i] : "joint" + std::to_string(i));
  return v;
}

namespace {

// Hip-, knee- and ankle-like profiles: offset, first-harmonic amplitude and
// phase, second-harmonic amplitude and phase (degrees, radians).
struct JointProfile {
  double offset, amp1, phase1, amp2, phase2;
};
constexpr JointProfile kProfiles[3] = {
    {15.0, 25.0, 0.0, 3.0, 0.0},
    {30.0, 25.0, -1.2, 5.0, 0.5},
    {3.0, 12.0, 2.0, 2.0, 1.0},
};
constexpr double kAngleMin = -30.0;
constexpr double kAngleMax = 90.0;

Tensor mixing_matrix(std::size_t c, Rng& rng) {
  while (true) {
    Tensor m({c, c});
    std::vector<double> gain(c);
    for (double& g : gain) g = rng.uniform(0.5, 2.0);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) m.at(i, j) = gain[i] * ((i == j ? 1.0 : 0.0) + 0.2 * rng.normal());
    }
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(
        m.data(), static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
    if (Eigen::FullPivLU<Eigen::MatrixXd>(view).rank() == static_cast<Eigen::Index>(c)) return m;
  }
}

}  // namespace

SyntheticCohort generate_synthetic_cohort(const SynthSpec& spec) {
  spec.validate();
  const std::size_t c = spec.n_channels;
  const std::size_t n = spec.n_joints;
  const auto t_emg = static_cast<std::size_t>(std::llround(spec.duration_s * spec.fs));
  const auto t_ang = static_cast<std::size_t>(std::llround(spec.duration_s * spec.fs_angle));
  const double two_pi = 2.0 * std::numbers::pi;
  const dsp::BiquadCascade hp = dsp::design_butter_highpass(4, 20.0, spec.fs);
  const dsp::BiquadCascade lp = dsp::design_butter_lowpass(4, 150.0, spec.fs);

  SyntheticCohort cohort;
  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    Rng rng(spec.seed, s);
    std::vector<double> mu(c), depth(c);
    for (std::size_t k = 0; k < c; ++k) {
      mu[k] = two_pi * static_cast<double>(k) / static_cast<double>(c) + rng.uniform(-0.3, 0.3);
    }
    for (double& dv : depth) dv = rng.uniform(0.8, 0.95);

    Tensor carrier({t_emg, c});
    for (double& v : carrier.values()) v = rng.normal();
    carrier = dsp::filt_causal(lp, dsp::filt_causal(hp, carrier));
    const dsp::ZScoreStats carrier_stats = dsp::fit_zscore(carrier);

    Tensor mix = mixing_matrix(c, rng);
    Tensor semg({t_emg, c});
    std::vector<double> raw(c);
    for (std::size_t i = 0; i < t_emg; ++i) {
      const double t = static_cast<double>(i) / spec.fs;
      const double phase = two_pi * t / spec.gait_period_s;
      for (std::size_t k = 0; k < c; ++k) {
        const double envelope = 1.0 + depth[k] * std::cos(phase - mu[k]);
        raw[k] = envelope * carrier.at(i, k) / carrier_stats.std[k];
      }
      const double hum = spec.hum_level * std::sin(two_pi * 50.0 * t);
      for (std::size_t r = 0; r < c; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < c; ++k) acc += mix.at(r, k) * raw[k];
        semg.at(i, r) = acc + hum;
      }
    }
    for (double& v : semg.values()) v += spec.noise_level * rng.normal();

    std::vector<double> amp(n), offset(n);
    for (double& a : amp) a = rng.uniform(0.9, 1.1);
    for (double& o : offset) o = rng.uniform(-0.2, 0.2);
    Tensor angles({t_ang, n});
    for (std::size_t i = 0; i < t_ang; ++i) {
      const double phase = two_pi * (static_cast<double>(i) / spec.fs_angle) / spec.gait_period_s;
      for (std::size_t j = 0; j < n; ++j) {
        const JointProfile& p = kProfiles[j % 3];
        const double extra = 0.9 * static_cast<double>(j / 3);
        const double value = p.offset + p.amp1 * amp[j] * std::sin(phase + p.phase1 + offset[j] + extra) +
                             p.amp2 * std::sin(2.0 * phase + p.phase2 + extra);
        angles.at(i, j) = std::clamp(value, kAngleMin, kAngleMax);
      }
    }

    dsp::RawRecording rec;
    rec.semg = std::move(semg);
    rec.angles = std::move(angles);
    rec.fs_emg = spec.fs;
    rec.fs_ang = spec.fs_angle;
    rec.subject_id = static_cast<int>(s);
    rec.condition = "synthetic";
    cohort.recordings.push_back(std::move(rec));
    cohort.mixing.push_back(std::move(mix));
  }
  return cohort;
}

DatasetManifest write_cohort(const SyntheticCohort& cohort, const SynthSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.channel_names = default_channel_names(spec.n_channels);
  m.joint_names = default_joint_names(spec.n_joints);
  m.base_dir = dir;
  for (const dsp::RawRecording& rec : cohort.recordings) {
    ManifestEntry e;
    e.path = "subject" + std::to_string(rec.subject_id) + "_emg.csv";
    e.angle_path = "subject" + std::to_string(rec.subject_id) + "_angles.csv";
    e.subject_id = rec.subject_id;
    e.fs_emg = rec.fs_emg;
    e.fs_ang = rec.fs_ang;
    e.condition = rec.condition;
    write_table(dir / e.path, m.channel_names, rec.semg);
    write_table(dir / e.angle_path, m.joint_names, rec.angles);
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, dir / "manifest.json");
  return m;
}

void export_features(model::SAFENet& net, const dsp::WindowedDataset& ds, const std::filesystem::path& path,
                     const std::string& config_echo) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::size_t d = net.config().ssa.d_model;
  if (!config_echo.empty()) out << "# config: " << config_echo << '\n';
  for (std::size_t i = 0; i < d; ++i) out << "fk" << i << ',';
  for (std::size_t i = 0; i < d; ++i) out << "fb" << i << ',';
  out << "label\n";
  constexpr std::size_t kChunk = 256;
  char num[32];
  std::string buf;
  for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
    const std::size_t end = std::min(ds.size(), begin + kChunk);
    const dsp::WindowedDataset part = dsp::slice(ds, begin, end);
    Tape tape(false);
    ForwardContext ctx{tape};
    const model::ForwardOutput fo = net.forward(ctx, tape.constant(part.windows));
    const Tensor& fk = fo.parts.f_k.value();
    const Tensor& fb = fo.parts.f_b.value();
    buf.clear();
    for (std::size_t r = 0; r < part.size(); ++r) {
      for (const Tensor* t : {&fk, &fb}) {
        for (std::size_t i = 0; i < d; ++i) {
          const auto res = std::to_chars(num, num + sizeof num, t->at(r, i));
          buf.append(num, res.ptr);
          buf += ',';
        }
      }
      buf += std::to_string(part.labels[r]);
      buf += '\n';
    }
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace safenet::data
