#include "safenet/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"
#include "safenet/errors.hpp"

namespace safenet::dsp {

std::complex<double> BiquadCascade::response(double omega) const {
  const std::complex<double> z1 = std::polar(1.0, -omega);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h{1.0, 0.0};
  for (const Biquad& s : sections) {
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  }
  return h;
}

double BiquadCascade::gain_db(double freq_hz, double fs_hz) const {
  return 20.0 * std::log10(std::abs(response(2.0 * std::numbers::pi * freq_hz / fs_hz)));
}

bool BiquadCascade::stable() const {
  // Jury conditions for z^2 + a1 z + a2.
  return std::all_of(sections.begin(), sections.end(),
                     [](const Biquad& s) { return std::abs(s.a2) < 1.0 && std::abs(s.a1) < 1.0 + s.a2; });
}

namespace {

void require_band(double f_hz, double fs_hz, const char* what) {
  if (!(fs_hz > 0.0)) throw RangeError(std::string(what) + ": sampling rate must be positive");
  if (!(f_hz > 0.0 && f_hz < fs_hz / 2.0)) {
    throw RangeError(std::string(what) + ": frequency " + std::to_string(f_hz) + " Hz outside (0, " +
                     std::to_string(fs_hz / 2.0) + ") Hz");
  }
}

enum class Band { kLow, kHigh };

BiquadCascade design_butter(Band band, int order, double fc_hz, double fs_hz, const char* what) {
  if (order < 2 || order % 2 != 0) {
    throw ContractError(std::string(what) + ": only even orders >= 2 are supported, got " + std::to_string(order));
  }
  require_band(fc_hz, fs_hz, what);
  // Pre-warped analog cutoff with the bilinear constant folded in.
  const double w = std::tan(std::numbers::pi * fc_hz / fs_hz);
  const double w2 = w * w;
  BiquadCascade out;
  for (int k = 0; k < order / 2; ++k) {
    // Conjugate Butterworth pole pair: s^2 + a s + 1 with a = 2 sin(theta).
    const double a = 2.0 * std::sin((2.0 * k + 1.0) * std::numbers::pi / (2.0 * order));
    const double a0 = 1.0 + a * w + w2;
    Biquad s;
    if (band == Band::kHigh) {
      s.b0 = 1.0 / a0;
      s.b1 = -2.0 / a0;
      s.b2 = 1.0 / a0;
    } else {
      s.b0 = w2 / a0;
      s.b1 = 2.0 * w2 / a0;
      s.b2 = w2 / a0;
    }
    s.a1 = (2.0 * w2 - 2.0) / a0;
    s.a2 = (1.0 - a * w + w2) / a0;
    out.sections.push_back(s);
  }
  return out;
}

double dc_gain(const Biquad& s) { return (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2); }

// Transposed direct form II over x[0..n) with stride, in place.
void run_section(const Biquad& s, double* x, std::size_t n, std::size_t stride, double z1, double z2) {
  for (std::size_t i = 0; i < n; ++i) {
    const double in = x[i * stride];
    const double y = s.b0 * in + z1;
    z1 = s.b1 * in - s.a1 * y + z2;
    z2 = s.b2 * in - s.a2 * y;
    x[i * stride] = y;
  }
}

// Runs the cascade starting from the steady state for a constant input equal to x[0].
void run_steady(const BiquadCascade& f, std::vector<double>& x) {
  double level = x.empty() ? 0.0 : x[0];
  for (const Biquad& s : f.sections) {
    const double g = dc_gain(s);
    const double z2 = (s.b2 - s.a2 * g) * level;
    const double z1 = (s.b1 - s.a1 * g) * level + z2;
    run_section(s, x.data(), x.size(), 1, z1, z2);
    level *= g;
  }
}

}  // namespace

BiquadCascade design_notch(double f0_hz, double fs_hz, double q_factor) {
  require_band(f0_hz, fs_hz, "design_notch");
  if (!(q_factor > 0.0)) throw RangeError("design_notch: quality factor must be positive");
  const double w0 = 2.0 * std::numbers::pi * f0_hz / fs_hz;
  const double beta = std::tan(w0 / q_factor / 2.0);
  const double gain = 1.0 / (1.0 + beta);
  Biquad s;
  s.b0 = gain;
  s.b1 = -2.0 * gain * std::cos(w0);
  s.b2 = gain;
  s.a1 = -2.0 * gain * std::cos(w0);
  s.a2 = 2.0 * gain - 1.0;
  return BiquadCascade{{s}};
}

BiquadCascade design_butter_highpass(int order, double fc_hz, double fs_hz) {
  return design_butter(Band::kHigh, order, fc_hz, fs_hz, "design_butter_highpass");
}

BiquadCascade design_butter_lowpass(int order, double fc_hz, double fs_hz) {
  return design_butter(Band::kLow, order, fc_hz, fs_hz, "design_butter_lowpass");
}

Tensor filt_causal(const BiquadCascade& filter, const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("filt_causal: expected [T x c], got " + shape_string(x.shape()));
  Tensor y = x;
  y.set_requires_grad(false);
  const std::size_t t = x.dim(0);
  const std::size_t c = x.dim(1);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (const Biquad& s : filter.sections) run_section(s, y.data() + ch, t, c, 0.0, 0.0);
  }
  return y;
}

Tensor filt_zero_phase(const BiquadCascade& filter, const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("filt_zero_phase: expected [T x c], got " + shape_string(x.shape()));
  const std::size_t t = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t pad = 3 * filter.order();
  if (t <= pad) {
    throw LengthError("filt_zero_phase: signal of " + std::to_string(t) + " samples needs more than " +
                      std::to_string(pad));
  }
  Tensor y({t, c});
  std::vector<double> ext(t + 2 * pad);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double first = x.at(0, ch);
    const double last = x.at(t - 1, ch);
    for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * first - x.at(pad - i, ch);
    for (std::size_t i = 0; i < t; ++i) ext[pad + i] = x.at(i, ch);
    for (std::size_t i = 0; i < pad; ++i) ext[pad + t + i] = 2.0 * last - x.at(t - 2 - i, ch);
    run_steady(filter, ext);
    std::reverse(ext.begin(), ext.end());
    run_steady(filter, ext);
    std::reverse(ext.begin(), ext.end());
    for (std::size_t i = 0; i < t; ++i) y.at(i, ch) = ext[pad + i];
  }
  return y;
}

Tensor resample_linear(const Tensor& x, double fs_in, double fs_out) {
  if (!(fs_in > 0.0 && fs_out > 0.0)) throw RangeError("resample_linear: rates must be positive");
  if (x.rank() != 2) throw DimensionError("resample_linear: expected [T x n], got " + shape_string(x.shape()));
  const std::size_t t = x.dim(0);
  const std::size_t n = x.dim(1);
  if (fs_in == fs_out) {
    Tensor same = x;
    same.set_requires_grad(false);
    return same;
  }
  const auto t_out = static_cast<std::size_t>(std::llround(static_cast<double>(t) * fs_out / fs_in));
  Tensor y({t_out, n});
  if (t == 0) return y;
  for (std::size_t k = 0; k < t_out; ++k) {
    const double pos = static_cast<double>(k) * fs_in / fs_out;
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= t) {
      for (std::size_t j = 0; j < n; ++j) y.at(k, j) = x.at(t - 1, j);
      continue;
    }
    const double frac = pos - static_cast<double>(i);
    for (std::size_t j = 0; j < n; ++j) y.at(k, j) = x.at(i, j) + frac * (x.at(i + 1, j) - x.at(i, j));
  }
  return y;
}

ZScoreStats fit_zscore(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("fit_zscore: scalar input");
  const std::size_t c = x.shape().back();
  const std::size_t rows = c == 0 ? 0 : x.size() / c;
  if (rows == 0) throw LengthError("fit_zscore: no rows");
  ZScoreStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) s.mean[j] += x[r * c + j];
  }
  for (double& m : s.mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double dv = x[r * c + j] - s.mean[j];
      s.std[j] += dv * dv;
    }
  }
  for (double& v : s.std) v = std::sqrt(v / static_cast<double>(rows));
  return s;
}

Tensor zscore(const Tensor& x, const ZScoreStats& stats) {
  const std::size_t c = stats.mean.size();
  if (x.rank() == 0 || x.shape().back() != c) throw DimensionError("zscore: channel count differs from stats");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t j = i % c;
    y[i] = (x[i] - stats.mean[j]) / (stats.std[j] + ZScoreStats::kEps);
  }
  return y;
}

Tensor inverse_zscore(const Tensor& x, const ZScoreStats& stats) {
  const std::size_t c = stats.mean.size();
  if (x.rank() == 0 || x.shape().back() != c) throw DimensionError("inverse_zscore: channel count differs from stats");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t j = i % c;
    y[i] = x[i] * (stats.std[j] + ZScoreStats::kEps) + stats.mean[j];
  }
  return y;
}

std::size_t window_count(std::size_t t, std::size_t length, std::size_t step) {
  if (length == 0 || step == 0) throw RangeError("window_count: length and step must be positive");
  if (t < length) return 0;
  return (t - length) / step + 1;
}

WindowedDataset segment_windows(const Tensor& semg, const Tensor& angles, int label, std::size_t length,
                                std::size_t step) {
  if (semg.rank() != 2 || angles.rank() != 2) throw DimensionError("segment_windows: expected 2-D streams");
  const std::size_t t = semg.dim(0);
  if (angles.dim(0) != t) {
    throw DimensionError("segment_windows: " + std::to_string(t) + " sEMG rows vs " + std::to_string(angles.dim(0)) +
                         " angle rows");
  }
  if (t < length) {
    throw LengthError("segment_windows: signal of " + std::to_string(t) + " samples is shorter than one window of " +
                      std::to_string(length));
  }
  const std::size_t n_win = window_count(t, length, step);
  const std::size_t c = semg.dim(1);
  const std::size_t n = angles.dim(1);
  WindowedDataset ds{Tensor({n_win, length, c}), Tensor({n_win, n}), std::vector<int>(n_win, label), length, step};
  for (std::size_t k = 0; k < n_win; ++k) {
    std::copy_n(semg.data() + k * step * c, length * c, ds.windows.data() + k * length * c);
    std::copy_n(angles.data() + (k * step + length - 1) * n, n, ds.targets.data() + k * n);
  }
  return ds;
}

WindowedDataset concat(const std::vector<WindowedDataset>& parts) {
  if (parts.empty()) throw LengthError("concat: no datasets");
  const WindowedDataset& first = parts.front();
  std::size_t total = 0;
  for (const WindowedDataset& p : parts) {
    if (p.length != first.length || p.step != first.step || p.channels() != first.channels() ||
        p.joints() != first.joints()) {
      throw DimensionError("concat: datasets disagree on window geometry");
    }
    total += p.size();
  }
  const std::size_t l = first.length;
  const std::size_t c = first.channels();
  const std::size_t n = first.joints();
  WindowedDataset out{Tensor({total, l, c}), Tensor({total, n}), {}, l, first.step};
  std::size_t row = 0;
  for (const WindowedDataset& p : parts) {
    std::copy_n(p.windows.data(), p.windows.size(), out.windows.data() + row * l * c);
    std::copy_n(p.targets.data(), p.targets.size(), out.targets.data() + row * n);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    row += p.size();
  }
  return out;
}

WindowedDataset gather(const WindowedDataset& ds, const std::vector<std::size_t>& rows) {
  const std::size_t l = ds.length;
  const std::size_t c = ds.channels();
  const std::size_t n = ds.joints();
  WindowedDataset out{Tensor({rows.size(), l, c}), Tensor({rows.size(), n}), {}, l, ds.step};
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= ds.size()) throw RangeError("gather: row " + std::to_string(r) + " out of range");
    std::copy_n(ds.windows.data() + r * l * c, l * c, out.windows.data() + i * l * c);
    std::copy_n(ds.targets.data() + r * n, n, out.targets.data() + i * n);
    out.labels.push_back(ds.labels[r]);
  }
  return out;
}

WindowedDataset slice(const WindowedDataset& ds, std::size_t begin, std::size_t end) {
  if (begin > end || end > ds.size()) throw RangeError("slice: bad row range");
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return gather(ds, rows);
}

std::size_t DspConfig::window_length(double fs) const {
  return static_cast<std::size_t>(std::llround(window_s * fs));
}

std::size_t DspConfig::window_step(double fs) const { return static_cast<std::size_t>(std::llround(step_s * fs)); }

void DspConfig::validate() const {
  if (!(notch_q > 0.0)) throw ContractError("dsp: notch_q must be positive");
  if (!(window_s > 0.0 && step_s > 0.0)) throw ContractError("dsp: window_s and step_s must be positive");
  if (highpass_order < 2 || highpass_order % 2 != 0) throw ContractError("dsp: highpass_order must be even and >= 2");
}

WindowedDataset preprocess_recording(const RawRecording& rec, const DspConfig& cfg) {
  cfg.validate();
  const Tensor notched = filt_zero_phase(design_notch(cfg.notch_hz, rec.fs_emg, cfg.notch_q), rec.semg);
  Tensor semg = filt_zero_phase(design_butter_highpass(cfg.highpass_order, cfg.highpass_hz, rec.fs_emg), notched);
  Tensor angles = resample_linear(rec.angles, rec.fs_ang, rec.fs_emg);
  const std::size_t t = std::min(semg.dim(0), angles.dim(0));
  if (semg.dim(0) != t) semg = Tensor({t, semg.dim(1)}, std::vector<double>(semg.data(), semg.data() + t * semg.dim(1)));
  if (angles.dim(0) != t) {
    angles = Tensor({t, angles.dim(1)}, std::vector<double>(angles.data(), angles.data() + t * angles.dim(1)));
  }
  const std::size_t length = cfg.window_length(rec.fs_emg);
  const std::size_t step = cfg.window_step(rec.fs_emg);
  if (length == 0 || step == 0) throw RangeError("preprocess: window or step rounds to zero samples");
  return segment_windows(semg, angles, rec.subject_id, length, step);
}

namespace {
constexpr char kMagic[4] = {'S', 'F', 'W', '1'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_sfw1(const WindowedDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  io::write_le<std::uint32_t>(out, kVersion);
  for (std::size_t v : {ds.size(), ds.length, ds.channels(), ds.joints(), ds.step}) {
    io::write_le<std::uint64_t>(out, v);
  }
  for (double v : ds.windows.values()) io::write_le<float>(out, static_cast<float>(v));
  for (double v : ds.targets.values()) io::write_le<float>(out, static_cast<float>(v));
  for (int label : ds.labels) io::write_le<float>(out, static_cast<float>(label));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

WindowedDataset read_sfw1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw ParseError(path.string() + ": not an SFW1 dataset");
  }
  const auto version = io::read_le<std::uint32_t>(in, "version");
  if (version != kVersion) throw ParseError(path.string() + ": unsupported SFW1 version " + std::to_string(version));
  std::size_t h[5];
  for (std::size_t& v : h) v = static_cast<std::size_t>(io::read_le<std::uint64_t>(in, "header"));
  const auto [n_win, l, c, n, step] = h;
  WindowedDataset ds{Tensor({n_win, l, c}), Tensor({n_win, n}), std::vector<int>(n_win), l, step};
  for (double& v : ds.windows.values()) v = io::read_le<float>(in, "windows");
  for (double& v : ds.targets.values()) v = io::read_le<float>(in, "targets");
  for (int& label : ds.labels) label = static_cast<int>(io::read_le<float>(in, "labels"));
  return ds;
}

}  // namespace safenet::dsp
