#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "safenet/dsp.hpp"
#include "safenet/model.hpp"

namespace safenet::train {

struct TrainConfig {
  std::size_t batch_size = 50;
  std::size_t epochs = 6;
  double lr = 1e-4;
  std::size_t patience = 2;  // epochs without val improvement before stopping
  double lr_decay = 0.5;     // applied when the train loss fails to improve
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct SplitSpec {
  std::size_t train = 3;
  std::size_t val = 1;
  std::size_t test = 1;
};

struct Partition {
  std::vector<std::size_t> train, val, test;  // row indices into the source
};

// Per subject, in time order: the first train/(sum) of its windows, then val,
// then test. Throws LengthError for a subject with fewer windows than parts.
Partition partition(const dsp::WindowedDataset& all, const SplitSpec& spec = {});

struct Splits {
  dsp::WindowedDataset train, val, test;  // standardized
  dsp::ZScoreStats emg_stats;             // per channel, training windows only
  dsp::ZScoreStats angle_stats;           // per joint, training targets only
};

void standardize(dsp::WindowedDataset& ds, const dsp::ZScoreStats& emg, const dsp::ZScoreStats& angles);

// partition, then standardize windows and targets with training statistics.
Splits split(const dsp::WindowedDataset& all, const SplitSpec& spec = {});

struct AdamState {
  std::vector<double> m, v;
};

// One bias-corrected Adam update of `param` at step t >= 1.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, std::size_t t, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

class Adam {
 public:
  Adam(std::vector<Tensor*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies the gradients currently stored on the parameters.
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<AdamState> states_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct LossBreakdown {
  double total = 0.0, mse = 0.0, ce = 0.0, orth = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown val;
  double lr = 0.0;  // rate used during the epoch
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// Seeded mini-batch epochs with Adam. After training (or an early stop) the
// weights of the best-validation epoch are restored. Throws NumericError on
// a non-finite loss, naming the epoch and batch.
FitResult fit(model::SAFENet& net, const dsp::WindowedDataset& train, const dsp::WindowedDataset& val,
              const TrainConfig& cfg, std::uint64_t seed,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

// Mean losses over a dataset in eval mode.
LossBreakdown evaluate_loss(model::SAFENet& net, const dsp::WindowedDataset& ds, std::size_t batch_size = 256);

struct Predictions {
  Tensor angles;  // [N x n], model space
  Tensor logits;  // [N x C]
};
Predictions predict(model::SAFENet& net, const dsp::WindowedDataset& ds, std::size_t batch_size = 256);

struct JointMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> pcc;  // missing when either side has zero variance
  std::optional<double> r2;   // missing when the target has zero variance
};

struct MetricReport {
  std::vector<JointMetrics> joints;
  JointMetrics mean;  // average over joints; optional fields over the joints that have them
  double identity_accuracy = 0.0;
  std::size_t windows = 0;
};

// Per-joint metrics over pred/target [N x n] in degrees.
MetricReport compute_metrics(const Tensor& pred, const Tensor& target, const Tensor& logits,
                             std::span<const int> labels);

// Predicts, maps angles back to degrees with `angle_stats`, then scores.
MetricReport evaluate(model::SAFENet& net, const dsp::WindowedDataset& test, const dsp::ZScoreStats& angle_stats);

}  // namespace safenet::train
