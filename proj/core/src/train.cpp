#include "safenet/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "safenet/errors.hpp"
#include "safenet/random.hpp"

namespace safenet::train {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  if (epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (!(lr > 0.0)) throw ContractError("train: lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ContractError("train: lr_decay must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ContractError("train: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ContractError("train: eps must be positive");
}

Partition partition(const dsp::WindowedDataset& all, const SplitSpec& spec) {
  const std::size_t parts = spec.train + spec.val + spec.test;
  if (parts == 0) throw ContractError("split: ratios must not all be zero");
  std::map<int, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < all.size(); ++i) by_subject[all.labels[i]].push_back(i);
  Partition p;
  for (const auto& [subject, rows] : by_subject) {
    const std::size_t n = rows.size();
    if (n < parts) {
      throw LengthError("split: subject " + std::to_string(subject) + " has " + std::to_string(n) +
                        " windows, fewer than " + std::to_string(parts));
    }
    const std::size_t n_train = n * spec.train / parts;
    const std::size_t n_val_end = n * (spec.train + spec.val) / parts;
    p.train.insert(p.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    p.val.insert(p.val.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train),
                 rows.begin() + static_cast<std::ptrdiff_t>(n_val_end));
    p.test.insert(p.test.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val_end), rows.end());
  }
  return p;
}

void standardize(dsp::WindowedDataset& ds, const dsp::ZScoreStats& emg, const dsp::ZScoreStats& angles) {
  ds.windows = dsp::zscore(ds.windows, emg);
  ds.targets = dsp::zscore(ds.targets, angles);
}

Splits split(const dsp::WindowedDataset& all, const SplitSpec& spec) {
  const Partition p = partition(all, spec);
  Splits s;
  s.train = dsp::gather(all, p.train);
  s.val = dsp::gather(all, p.val);
  s.test = dsp::gather(all, p.test);
  s.emg_stats = dsp::fit_zscore(s.train.windows);
  s.angle_stats = dsp::fit_zscore(s.train.targets);
  for (dsp::WindowedDataset* ds : {&s.train, &s.val, &s.test}) standardize(*ds, s.emg_stats, s.angle_stats);
  return s;
}

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, std::size_t t, double lr,
               double beta1, double beta2, double eps) {
  if (t < 1) throw ContractError("adam_step: step counter starts at 1");
  if (param.size() != grad.size()) throw DimensionError("adam_step: parameter and gradient sizes differ");
  if (state.m.size() != param.size()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

Adam::Adam(std::vector<Tensor*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), states_(params_.size()), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    adam_step(p.values(), p.grad(), states_[i], t_, lr_, beta1_, beta2_, eps_);
  }
}

namespace {

struct Batch {
  Tensor windows, targets;
  std::vector<int> labels;
};

Batch make_batch(const dsp::WindowedDataset& ds, std::span<const std::size_t> rows) {
  const std::size_t l = ds.length;
  const std::size_t c = ds.channels();
  const std::size_t n = ds.joints();
  Batch b{Tensor({rows.size(), l, c}), Tensor({rows.size(), n}), std::vector<int>(rows.size())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(ds.windows.data() + rows[i] * l * c, l * c, b.windows.data() + i * l * c);
    std::copy_n(ds.targets.data() + rows[i] * n, n, b.targets.data() + i * n);
    b.labels[i] = ds.labels[rows[i]];
  }
  return b;
}

std::vector<std::vector<double>> snapshot(model::SAFENet& net) {
  std::vector<std::vector<double>> out;
  net.visit([&](const std::string&, Tensor& t, SlotKind) { out.emplace_back(t.values().begin(), t.values().end()); });
  return out;
}

void restore(model::SAFENet& net, const std::vector<std::vector<double>>& snap) {
  std::size_t i = 0;
  net.visit([&](const std::string&, Tensor& t, SlotKind) {
    std::copy(snap[i].begin(), snap[i].end(), t.data());
    ++i;
  });
}

void accumulate(LossBreakdown& acc, const model::LossTerms& terms, double weight) {
  acc.total += weight * terms.total.value()[0];
  acc.mse += weight * terms.mse.value()[0];
  acc.ce += weight * terms.ce.value()[0];
  acc.orth += weight * terms.orth.value()[0];
}

void divide(LossBreakdown& acc, double n) {
  acc.total /= n;
  acc.mse /= n;
  acc.ce /= n;
  acc.orth /= n;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

}  // namespace

LossBreakdown evaluate_loss(model::SAFENet& net, const dsp::WindowedDataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) throw LengthError("evaluate_loss: empty dataset");
  const std::vector<std::size_t> rows = iota_rows(ds.size());
  LossBreakdown acc;
  for (std::size_t begin = 0; begin < rows.size(); begin += batch_size) {
    const std::size_t end = std::min(rows.size(), begin + batch_size);
    Batch b = make_batch(ds, std::span(rows).subspan(begin, end - begin));
    Tape tape(false);
    ForwardContext ctx{tape};
    const model::ForwardOutput out = net.forward(ctx, tape.constant(std::move(b.windows)));
    accumulate(acc, net.loss(ctx, out, tape.constant(std::move(b.targets)), b.labels), static_cast<double>(end - begin));
  }
  divide(acc, static_cast<double>(ds.size()));
  return acc;
}

FitResult fit(model::SAFENet& net, const dsp::WindowedDataset& train, const dsp::WindowedDataset& val,
              const TrainConfig& cfg, std::uint64_t seed, const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw LengthError("fit: train and val splits must be non-empty");
  Adam opt(net.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  Rng rng(seed, 0x5348554646ULL);

  FitResult result;
  double best_val = std::numeric_limits<double>::infinity();
  double prev_train = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::vector<double>> best = snapshot(net);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.lr();
    const std::vector<std::size_t> order = rng.permutation(train.size());
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      Batch b = make_batch(train, std::span(order).subspan(begin, end - begin));
      net.zero_grad();
      Tape tape;
      ForwardContext ctx{tape, true};
      const model::ForwardOutput out = net.forward(ctx, tape.constant(std::move(b.windows)));
      const model::LossTerms terms = net.loss(ctx, out, tape.constant(std::move(b.targets)), b.labels);
      const double loss = terms.total.value()[0];
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      tape.backward(terms.total);
      opt.step();
      accumulate(rec.train, terms, static_cast<double>(end - begin));
    }
    divide(rec.train, static_cast<double>(train.size()));
    rec.val = evaluate_loss(net, val);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val.total < best_val) {
      best_val = rec.val.total;
      result.best_epoch = epoch;
      best = snapshot(net);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
    if (!(rec.train.total < prev_train)) opt.set_lr(opt.lr() * cfg.lr_decay);
    prev_train = rec.train.total;
  }
  restore(net, best);
  return result;
}

Predictions predict(model::SAFENet& net, const dsp::WindowedDataset& ds, std::size_t batch_size) {
  const std::size_t n = net.config().n_joints;
  const std::size_t classes = net.config().n_subjects;
  Predictions p{Tensor({ds.size(), n}), Tensor({ds.size(), classes})};
  const std::vector<std::size_t> rows = iota_rows(ds.size());
  for (std::size_t begin = 0; begin < rows.size(); begin += batch_size) {
    const std::size_t end = std::min(rows.size(), begin + batch_size);
    Batch b = make_batch(ds, std::span(rows).subspan(begin, end - begin));
    Tape tape(false);
    ForwardContext ctx{tape};
    const model::ForwardOutput out = net.forward(ctx, tape.constant(std::move(b.windows)));
    std::copy_n(out.angles.value().data(), (end - begin) * n, p.angles.data() + begin * n);
    std::copy_n(out.logits.value().data(), (end - begin) * classes, p.logits.data() + begin * classes);
  }
  return p;
}

MetricReport compute_metrics(const Tensor& pred, const Tensor& target, const Tensor& logits,
                             std::span<const int> labels) {
  if (pred.rank() != 2 || pred.shape() != target.shape()) throw DimensionError("metrics: prediction/target shapes differ");
  const std::size_t rows = pred.dim(0);
  const std::size_t n = pred.dim(1);
  if (rows == 0) throw LengthError("metrics: empty test set");
  if (logits.rank() != 2 || logits.dim(0) != rows || labels.size() != rows) {
    throw DimensionError("metrics: logits/labels do not match the predictions");
  }
  MetricReport report;
  report.windows = rows;
  const double count = static_cast<double>(rows);
  for (std::size_t j = 0; j < n; ++j) {
    double sq = 0.0, abs_err = 0.0, mean_p = 0.0, mean_t = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double e = pred.at(i, j) - target.at(i, j);
      sq += e * e;
      abs_err += std::abs(e);
      mean_p += pred.at(i, j);
      mean_t += target.at(i, j);
    }
    mean_p /= count;
    mean_t /= count;
    double cov = 0.0, var_p = 0.0, var_t = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double dp = pred.at(i, j) - mean_p;
      const double dt = target.at(i, j) - mean_t;
      cov += dp * dt;
      var_p += dp * dp;
      var_t += dt * dt;
    }
    JointMetrics m;
    m.rmse = std::sqrt(sq / count);
    m.mae = abs_err / count;
    if (var_p > 0.0 && var_t > 0.0) m.pcc = std::clamp(cov / std::sqrt(var_p * var_t), -1.0, 1.0);
    if (var_t > 0.0) m.r2 = 1.0 - sq / var_t;
    report.joints.push_back(m);
  }
  double pcc_sum = 0.0, r2_sum = 0.0;
  std::size_t pcc_n = 0, r2_n = 0;
  for (const JointMetrics& m : report.joints) {
    report.mean.rmse += m.rmse / static_cast<double>(n);
    report.mean.mae += m.mae / static_cast<double>(n);
    if (m.pcc) {
      pcc_sum += *m.pcc;
      ++pcc_n;
    }
    if (m.r2) {
      r2_sum += *m.r2;
      ++r2_n;
    }
  }
  if (pcc_n > 0) report.mean.pcc = pcc_sum / static_cast<double>(pcc_n);
  if (r2_n > 0) report.mean.r2 = r2_sum / static_cast<double>(r2_n);

  const std::size_t classes = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = logits.data() + i * classes;
    const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
    correct += best == labels[i] ? 1 : 0;
  }
  report.identity_accuracy = static_cast<double>(correct) / count;
  return report;
}

MetricReport evaluate(model::SAFENet& net, const dsp::WindowedDataset& test, const dsp::ZScoreStats& angle_stats) {
  if (test.size() == 0) throw LengthError("evaluate: empty test set");
  const Predictions p = predict(net, test);
  return compute_metrics(dsp::inverse_zscore(p.angles, angle_stats), dsp::inverse_zscore(test.targets, angle_stats),
                         p.logits, test.labels);
}

}  // namespace safenet::train
