#include "safenet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "kernels.hpp"
#include "safenet/errors.hpp"

namespace safenet::ops {

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_scalar_shape(const char* op, Var a) {
  if (a.size() != 1) {
    throw DimensionError(std::string(op) + ": expected a scalar, got " + shape_string(a.shape()));
  }
}

// Accumulates `g` into the gradient of node `id` if that node needs one.
template <typename F>
void accumulate(Tape& t, std::size_t id, F&& fill) {
  if (!t.needs_grad(id)) return;
  fill(t.grad_mut(id));
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  auto ov = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    for (std::size_t id : {ia, ib}) {
      accumulate(t, id, [&](std::span<double> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      });
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  auto ov = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    accumulate(t, ia, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
    accumulate(t, ib, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    });
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  auto ov = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    auto av = t.value(ia).values();
    auto bv = t.value(ib).values();
    accumulate(t, ia, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    });
    accumulate(t, ib, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    });
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return a.tape().record(std::move(out), {a}, [ia = a.id(), factor](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    accumulate(t, ia, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
    });
  });
}

Var add_broadcast(Var x, Var y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    throw DimensionError("add_broadcast: " + shape_string(ys) + " is not a trailing shape of " +
                         shape_string(xs));
  }
  const std::size_t inner = y.size();
  Tensor out = x.value();
  auto ov = out.values();
  auto yv = y.value().values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += yv[i % inner];
  return x.tape().record(std::move(out), {x, y}, [ix = x.id(), iy = y.id(), inner](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    accumulate(t, ix, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
    accumulate(t, iy, [&](std::span<double> d) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i % inner] += g[i];
    });
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [ix = x.id()](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    auto xv = t.value(ix).values();
    accumulate(t, ix, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (xv[i] > 0.0) d[i] += g[i];
      }
    });
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return x.tape().record(std::move(out), {x}, [ix = x.id()](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    auto y = t.value(s).values();
    accumulate(t, ix, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  });
}

Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_string(as) + " by " + shape_string(bs));
  }
  return linear(a, b);
}

Var linear(Var x, Var w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
    throw DimensionError("linear: cannot multiply " + shape_string(xs) + " by " + shape_string(ws));
  }
  const std::size_t k = ws[0];
  const std::size_t n = ws[1];
  const std::size_t m = x.size() / k;
  Shape out_shape = xs;
  out_shape.back() = n;
  Tensor out(out_shape);
  kernels::gemm_nn(m, k, n, x.value().data(), k, w.value().data(), n, out.data(), n);
  return x.tape().record(std::move(out), {x, w}, [ix = x.id(), iw = w.id(), m, k, n](Tape& t, std::size_t s) {
    const double* g = t.grad(s).data();
    if (t.needs_grad(ix)) {
      // dX = dY * W^T
      kernels::gemm_nt(m, n, k, g, n, t.value(iw).data(), n, t.grad_mut(ix).data(), k);
    }
    if (t.needs_grad(iw)) {
      // dW = X^T * dY
      kernels::gemm_tn(m, k, n, t.value(ix).data(), k, g, n, t.grad_mut(iw).data(), n);
    }
  });
}

Var conv1d(Var x, Var w, std::size_t dilation, std::size_t pad_left, std::size_t pad_right) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 3 || xs[2] != ws[1]) {
    throw DimensionError("conv1d: input " + shape_string(xs) + " incompatible with kernel " +
                         shape_string(ws));
  }
  if (dilation == 0) throw RangeError("conv1d: dilation must be >= 1");
  const std::size_t batch = xs[0];
  const std::size_t len = xs[1];
  const std::size_t cin = xs[2];
  const std::size_t taps = ws[0];
  const std::size_t cout = ws[2];
  const std::size_t span = dilation * (taps - 1);
  if (len + pad_left + pad_right < span + 1) {
    throw LengthError("conv1d: sequence of length " + std::to_string(len) +
                      " is shorter than the kernel span");
  }
  const std::size_t out_len = len + pad_left + pad_right - span;
  const std::size_t cols = taps * cin;

  // im2col: row (b, t) of `patches` holds the taps of output step t, input
  // row t + tap*dilation - pad_left, zero where that row is out of range.
  auto source_row = [=](std::size_t t, std::size_t tap) -> std::ptrdiff_t {
    const auto r = static_cast<std::ptrdiff_t>(t + tap * dilation) - static_cast<std::ptrdiff_t>(pad_left);
    return r >= 0 && r < static_cast<std::ptrdiff_t>(len) ? r : -1;
  };
  const double* xv = x.value().data();
  std::vector<double> patches(batch * out_len * cols, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double* dst = patches.data() + (b * out_len + t) * cols;
      for (std::size_t tap = 0; tap < taps; ++tap) {
        const std::ptrdiff_t r = source_row(t, tap);
        if (r < 0) continue;
        std::copy_n(xv + (b * len + static_cast<std::size_t>(r)) * cin, cin, dst + tap * cin);
      }
    }
  }

  Tensor out({batch, out_len, cout});
  kernels::gemm_nn(batch * out_len, cols, cout, patches.data(), cols, w.value().data(), cout, out.data(), cout);
  return x.tape().record(
      std::move(out), {x, w},
      [ix = x.id(), iw = w.id(), batch, len, cin, cout, taps, out_len, cols, source_row,
       patches = std::move(patches)](Tape& t, std::size_t s) {
        const double* g = t.grad(s).data();
        const std::size_t rows = batch * out_len;
        if (t.needs_grad(iw)) {
          kernels::gemm_tn(rows, cols, cout, patches.data(), cols, g, cout, t.grad_mut(iw).data(), cout);
        }
        if (t.needs_grad(ix)) {
          std::vector<double> dpatch(rows * cols, 0.0);
          kernels::gemm_nt(rows, cout, cols, g, cout, t.value(iw).data(), cout, dpatch.data(), cols);
          double* dx = t.grad_mut(ix).data();
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t step = 0; step < out_len; ++step) {
              const double* src = dpatch.data() + (b * out_len + step) * cols;
              for (std::size_t tap = 0; tap < taps; ++tap) {
                const std::ptrdiff_t r = source_row(step, tap);
                if (r < 0) continue;
                double* dst = dx + (b * len + static_cast<std::size_t>(r)) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[tap * cin + c];
              }
            }
          }
        }
      });
}

Var softmax(Var x, std::size_t axis) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(xs));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t len = xs[axis];

  Tensor out = x.value();
  double* y = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double* base = y + o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, base[l * inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        base[l * inner] = std::exp(base[l * inner] - mx);
        total += base[l * inner];
      }
      for (std::size_t l = 0; l < len; ++l) base[l * inner] /= total;
    }
  }
  return x.tape().record(std::move(out), {x}, [ix = x.id(), outer, inner, len](Tape& t, std::size_t s) {
    if (!t.needs_grad(ix)) return;
    const double* g = t.grad(s).data();
    const double* y = t.value(s).data();
    double* d = t.grad_mut(ix).data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t i = base + l * inner;
          d[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Var batch_norm(Var x, std::optional<Var> gamma, std::optional<Var> beta, BatchNormStats& stats,
               bool training) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw DimensionError("batch_norm: scalar input");
  const std::size_t d = xs.back();
  const std::size_t rows = x.size() / d;
  if (stats.running_mean.size() != d || (gamma && gamma->size() != d) || (beta && beta->size() != d)) {
    throw DimensionError("batch_norm: feature count " + std::to_string(d) +
                         " does not match the normalization parameters");
  }
  const double* xv = x.value().data();

  std::vector<double> mean(d, 0.0);
  std::vector<double> inv_std(d, 0.0);
  if (training) {
    if (rows == 0) throw LengthError("batch_norm: empty batch");
    std::vector<double> var(d, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) mean[c] += xv[r * d + c];
    }
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = xv[r * d + c] - mean[c];
        var[c] += diff * diff;
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      var[c] /= static_cast<double>(rows);
      inv_std[c] = 1.0 / std::sqrt(var[c] + stats.eps);
      stats.running_mean[c] = stats.momentum * stats.running_mean[c] + (1.0 - stats.momentum) * mean[c];
      stats.running_var[c] = stats.momentum * stats.running_var[c] + (1.0 - stats.momentum) * var[c];
    }
  } else {
    for (std::size_t c = 0; c < d; ++c) {
      mean[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }

  Tensor normalized(xs);
  double* xh = normalized.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) xh[r * d + c] = (xv[r * d + c] - mean[c]) * inv_std[c];
  }
  Tensor out = normalized;
  if (gamma || beta) {
    double* y = out.data();
    const double* gv = gamma ? gamma->value().data() : nullptr;
    const double* bv = beta ? beta->value().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        double v = y[r * d + c];
        if (gv) v *= gv[c];
        if (bv) v += bv[c];
        y[r * d + c] = v;
      }
    }
  }

  Tape& tape = x.tape();
  const std::size_t none = static_cast<std::size_t>(-1);
  const std::size_t ig = gamma ? gamma->id() : none;
  const std::size_t ib = beta ? beta->id() : none;
  auto backward = [ix = x.id(), ig, ib, none, rows, d, training, inv_std,
                   xhat = std::move(normalized)](Tape& t, std::size_t s) {
    const double* g = t.grad(s).data();
    const double* xh = xhat.data();
    const double* gv = ig != none ? t.value(ig).data() : nullptr;
    if (ig != none && t.needs_grad(ig)) {
      double* dg = t.grad_mut(ig).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) dg[c] += g[r * d + c] * xh[r * d + c];
      }
    }
    if (ib != none && t.needs_grad(ib)) {
      double* db = t.grad_mut(ib).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) db[c] += g[r * d + c];
      }
    }
    if (!t.needs_grad(ix)) return;
    double* dx = t.grad_mut(ix).data();
    if (!training) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          dx[r * d + c] += g[r * d + c] * (gv ? gv[c] : 1.0) * inv_std[c];
        }
      }
      return;
    }
    std::vector<double> sum_g(d, 0.0);
    std::vector<double> sum_gx(d, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        const double dxh = g[r * d + c] * (gv ? gv[c] : 1.0);
        sum_g[c] += dxh;
        sum_gx[c] += dxh * xh[r * d + c];
      }
    }
    const double n = static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        const double dxh = g[r * d + c] * (gv ? gv[c] : 1.0);
        dx[r * d + c] += inv_std[c] / n * (n * dxh - sum_g[c] - xh[r * d + c] * sum_gx[c]);
      }
    }
  };
  if (gamma && beta) return tape.record(std::move(out), {x, *gamma, *beta}, std::move(backward));
  if (gamma) return tape.record(std::move(out), {x, *gamma}, std::move(backward));
  if (beta) return tape.record(std::move(out), {x, *beta}, std::move(backward));
  return tape.record(std::move(out), {x}, std::move(backward));
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [ix = x.id()](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    accumulate(t, ix, [&](std::span<double> d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
  });
}

Var mean_axis(Var x, std::size_t axis) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) {
    throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(xs));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t len = xs[axis];
  if (len == 0) throw LengthError("mean_axis: empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i != axis) out_shape.push_back(xs[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const double* xv = x.value().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t in = 0; in < inner; ++in) out[o * inner + in] += xv[(o * len + l) * inner + in];
    }
  }
  const double inv = 1.0 / static_cast<double>(len);
  for (double& v : out.values()) v *= inv;
  return x.tape().record(std::move(out), {x}, [ix = x.id(), outer, inner, len, inv](Tape& t, std::size_t s) {
    auto g = t.grad(s);
    accumulate(t, ix, [&](std::span<double> d) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
          for (std::size_t in = 0; in < inner; ++in) d[(o * len + l) * inner + in] += g[o * inner + in] * inv;
        }
      }
    });
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape().record(Tensor::scalar(total), {x}, [ix = x.id()](Tape& t, std::size_t s) {
    const double g = t.grad(s)[0];
    accumulate(t, ix, [&](std::span<double> d) {
      for (double& v : d) v += g;
    });
  });
}

Var mean(Var x) {
  if (x.size() == 0) throw LengthError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var mse_loss(Var pred, Var target) {
  require_same_shape("mse_loss", pred, target);
  if (pred.size() == 0) throw LengthError("mse_loss: empty input");
  auto p = pred.value().values();
  auto y = target.value().values();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - y[i]) * (p[i] - y[i]);
  const double n = static_cast<double>(p.size());
  return pred.tape().record(Tensor::scalar(total / n), {pred, target},
                            [ip = pred.id(), iy = target.id(), n](Tape& t, std::size_t s) {
                              const double g = t.grad(s)[0];
                              auto p = t.value(ip).values();
                              auto y = t.value(iy).values();
                              accumulate(t, ip, [&](std::span<double> d) {
                                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * 2.0 * (p[i] - y[i]) / n;
                              });
                              accumulate(t, iy, [&](std::span<double> d) {
                                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g * 2.0 * (p[i] - y[i]) / n;
                              });
                            });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2 || ls[0] != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(ls) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = ls[0];
  const std::size_t classes = ls[1];
  if (batch == 0) throw LengthError("cross_entropy: empty batch");
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw RangeError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  const double* z = logits.value().data();
  std::vector<double> probs(batch * classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
    const double log_denom = mx + std::log(denom);
    total += log_denom - row[labels[b]];
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - log_denom);
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor::scalar(total / static_cast<double>(batch)), {logits},
      [il = logits.id(), batch, classes, probs = std::move(probs), owned = std::move(owned)](Tape& t, std::size_t s) {
        const double g = t.grad(s)[0] / static_cast<double>(batch);
        accumulate(t, il, [&](std::span<double> d) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t c = 0; c < classes; ++c) {
              const double onehot = static_cast<int>(c) == owned[b] ? 1.0 : 0.0;
              d[b * classes + c] += g * (probs[b * classes + c] - onehot);
            }
          }
        });
      });
}

Var cosine_sq_loss(Var a, Var b) {
  require_same_shape("cosine_sq_loss", a, b);
  const Shape& s = a.shape();
  const std::size_t d = s.empty() ? 0 : s.back();
  if (d == 0) throw LengthError("cosine_sq_loss: empty feature axis");
  const std::size_t rows = a.size() / d;
  constexpr double kTiny = 1e-24;
  const double* av = a.value().data();
  const double* bv = b.value().data();
  std::vector<double> dots(rows), naa(rows), nbb(rows);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      ab += av[r * d + c] * bv[r * d + c];
      aa += av[r * d + c] * av[r * d + c];
      bb += bv[r * d + c] * bv[r * d + c];
    }
    dots[r] = ab;
    naa[r] = aa + kTiny;
    nbb[r] = bb + kTiny;
    total += ab * ab / (naa[r] * nbb[r]);
  }
  return a.tape().record(
      Tensor::scalar(total / static_cast<double>(rows)), {a, b},
      [ia = a.id(), ib = b.id(), rows, d, dots = std::move(dots), naa = std::move(naa),
       nbb = std::move(nbb)](Tape& t, std::size_t s) {
        const double g = t.grad(s)[0] / static_cast<double>(rows);
        const double* av = t.value(ia).data();
        const double* bv = t.value(ib).data();
        // c2 = (a.b)^2 / (|a|^2 |b|^2);  dc2/da = 2(a.b) b/(|a|^2|b|^2) - 2 c2 a/|a|^2
        for (std::size_t r = 0; r < rows; ++r) {
          const double c2 = dots[r] * dots[r] / (naa[r] * nbb[r]);
          const double k = 2.0 * dots[r] / (naa[r] * nbb[r]);
          if (t.needs_grad(ia)) {
            double* da = t.grad_mut(ia).data() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
              da[c] += g * (k * bv[r * d + c] - 2.0 * c2 * av[r * d + c] / naa[r]);
            }
          }
          if (t.needs_grad(ib)) {
            double* db = t.grad_mut(ib).data() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
              db[c] += g * (k * av[r * d + c] - 2.0 * c2 * bv[r * d + c] / nbb[r]);
            }
          }
        }
      });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw DimensionError("weighted_sum: need one weight per term");
  }
  Var acc;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require_scalar_shape("weighted_sum", terms[i]);
    Var term = scale(terms[i], weights[i]);
    acc = acc.valid() ? add(acc, term) : term;
  }
  return acc;
}

}  // namespace safenet::ops
