#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "safenet/tensor.hpp"

namespace safenet::dsp {

struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;  // a0 normalized to 1
};

struct BiquadCascade {
  std::vector<Biquad> sections;

  std::size_t order() const { return 2 * sections.size(); }
  // H(e^{j omega}) with omega in radians per sample.
  std::complex<double> response(double omega) const;
  double gain_db(double freq_hz, double fs_hz) const;
  // True when every section has both poles strictly inside the unit circle.
  bool stable() const;
};

// Second-order notch: w0 = 2 pi f0 / fs, bandwidth w0 / q.
BiquadCascade design_notch(double f0_hz, double fs_hz, double q_factor);
// Butterworth via bilinear transform with pre-warping; order even, >= 2.
BiquadCascade design_butter_highpass(int order, double fc_hz, double fs_hz);
BiquadCascade design_butter_lowpass(int order, double fc_hz, double fs_hz);

// Causal single pass from a zero state, each column of x[T x c] independently.
Tensor filt_causal(const BiquadCascade& filter, const Tensor& x);
// Forward-backward pass with odd reflective padding of 3 * order samples and
// steady-state initial conditions; zero phase, squared magnitude.
Tensor filt_zero_phase(const BiquadCascade& filter, const Tensor& x);

// T' = round(T * fs_out / fs_in) rows by linear interpolation on the original
// grid; samples past the last input are held at its value.
Tensor resample_linear(const Tensor& x, double fs_in, double fs_out);

struct ZScoreStats {
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation
  static constexpr double kEps = 1e-8;
};

// Per-column stats over every row of x[... x c].
ZScoreStats fit_zscore(const Tensor& x);
// (x - mean) / (std + 1e-8) per trailing channel.
Tensor zscore(const Tensor& x, const ZScoreStats& stats);
Tensor inverse_zscore(const Tensor& x, const ZScoreStats& stats);

struct WindowedDataset {
  Tensor windows;           // [N x L x c]
  Tensor targets;           // [N x n]
  std::vector<int> labels;  // [N]
  std::size_t length = 0;   // L
  std::size_t step = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return windows.rank() == 3 ? windows.dim(2) : 0; }
  std::size_t joints() const { return targets.rank() == 2 ? targets.dim(1) : 0; }
};

std::size_t window_count(std::size_t t, std::size_t length, std::size_t step);

// Window k covers rows [k step, k step + L) of semg; its target is angles row
// k step + L - 1. Throws LengthError when T < L.
WindowedDataset segment_windows(const Tensor& semg, const Tensor& angles, int label, std::size_t length,
                                std::size_t step);

// Concatenates datasets sharing L, step, c and n.
WindowedDataset concat(const std::vector<WindowedDataset>& parts);
// Rows [begin, end).
WindowedDataset slice(const WindowedDataset& ds, std::size_t begin, std::size_t end);
WindowedDataset gather(const WindowedDataset& ds, const std::vector<std::size_t>& rows);

struct RawRecording {
  Tensor semg;    // [T_e x c]
  Tensor angles;  // [T_a x n], degrees
  double fs_emg = 500.0;
  double fs_ang = 500.0;
  int subject_id = 0;
  std::string condition;
};

struct DspConfig {
  double notch_hz = 50.0;
  double notch_q = 35.0;
  double highpass_hz = 20.0;
  int highpass_order = 4;
  double window_s = 0.100;
  double step_s = 0.016;

  std::size_t window_length(double fs) const;  // round(window_s * fs)
  std::size_t window_step(double fs) const;    // round(step_s * fs)
  void validate() const;
};

// Notch and high-pass (zero phase) on the sEMG, angles resampled to the sEMG
// rate, both trimmed to the shorter stream, then segmented.
WindowedDataset preprocess_recording(const RawRecording& rec, const DspConfig& cfg);

// "SFW1" container: magic, u32 version, u64 N, L, c, n, u64 step, then
// float32 windows, targets and labels, little-endian.
void write_sfw1(const WindowedDataset& ds, const std::filesystem::path& path);
WindowedDataset read_sfw1(const std::filesystem::path& path);

}  // namespace safenet::dsp
