#include "safenet/model.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "safenet/config.hpp"
#include "safenet/errors.hpp"

namespace safenet::model {

void TCNConfig::validate() const {
  if (channels == 0) throw ContractError("tcn: channels must be positive");
  if (kernel < 1) throw ContractError("tcn: kernel must be >= 1");
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    if (dilations[i] == 0) throw ContractError("tcn: dilations must be positive");
    if (i > 0 && dilations[i] <= dilations[i - 1]) throw ContractError("tcn: dilations must strictly increase");
  }
}

std::size_t TCNConfig::receptive_field() const {
  std::size_t field = 1;
  for (std::size_t d : dilations) field += 2 * (kernel - 1) * d;
  return field;
}

void SAFDConfig::validate() const {
  if (iterations < 1) throw ContractError("safd: iterations must be >= 1");
  if (weight_hidden < 1) throw ContractError("safd: weight_hidden must be >= 1");
}

void SAFENetConfig::validate() const {
  embed.validate();
  ssa.validate();
  tcn.validate();
  safd.validate();
  if (embed.d_model != ssa.d_model || ssa.d_model != tcn.channels) {
    throw ContractError("safenet: embed, ssa and tcn widths must agree");
  }
  if (window == 0) throw ContractError("safenet: window must be positive");
  if (n_joints == 0 || n_subjects == 0) throw ContractError("safenet: n_joints and n_subjects must be positive");
  if (!(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0)) throw ContractError("safenet: loss weights must be >= 0");
}

namespace {

Var activate(Var x, Activation act) { return act == Activation::kRelu ? ops::relu(x) : x; }

Tensor batched_apply(const Tensor& x, const std::function<Var(ForwardContext&, Var)>& fn) {
  Tape tape(false);
  ForwardContext ctx{tape};
  Shape batched = x.shape();
  batched.insert(batched.begin(), 1);
  return fn(ctx, tape.constant(x.reshaped(batched))).value().reshaped(x.shape());
}

}  // namespace

TCN::TCN(const TCNConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg.channels;
  for (std::size_t i = 0; i < 2 * cfg.dilations.size(); ++i) {
    Conv c{Tensor({cfg.kernel, d, d}), Tensor({d})};
    init_uniform(c.w, cfg.kernel * d, rng);
    init_uniform(c.b, cfg.kernel * d, rng);
    convs_.push_back(std::move(c));
  }
}

Var TCN::forward(ForwardContext& ctx, Var x) {
  if (x.shape().size() != 3 || x.shape()[2] != cfg_.channels) {
    throw DimensionError("tcn: expected [B x t x " + std::to_string(cfg_.channels) + "], got " +
                         shape_string(x.shape()));
  }
  Var h = x;
  for (std::size_t blk = 0; blk < cfg_.dilations.size(); ++blk) {
    const std::size_t dil = cfg_.dilations[blk];
    const std::size_t pad = (cfg_.kernel - 1) * dil;
    Var y = h;
    for (std::size_t j = 0; j < 2; ++j) {
      Conv& c = convs_[2 * blk + j];
      y = ops::conv1d(y, ctx.tape.parameter(c.w), dil, pad, 0);
      y = activate(ops::add_broadcast(y, ctx.tape.parameter(c.b)), cfg_.activation);
    }
    h = cfg_.residual ? ops::add(h, y) : y;
  }
  return h;
}

Tensor TCN::apply(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("tcn: expected [t x d]");
  return batched_apply(x, [this](ForwardContext& ctx, Var v) { return forward(ctx, v); });
}

void TCN::visit(const std::string& prefix, const SlotVisitor& visitor) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    visitor(prefix + "conv" + std::to_string(i) + ".w", convs_[i].w, SlotKind::kParameter);
    visitor(prefix + "conv" + std::to_string(i) + ".b", convs_[i].b, SlotKind::kParameter);
  }
}

WeightModule::WeightModule(std::size_t d, std::size_t hidden, Rng& rng)
    : w1({d, hidden}), b1({hidden}), w2({hidden, d}), b2({d}) {
  init_uniform(w1, d, rng);
  init_uniform(b1, d, rng);
  init_uniform(w2, hidden, rng);
  init_uniform(b2, hidden, rng);
}

Var WeightModule::forward(ForwardContext& ctx, Var p) {
  Tape& t = ctx.tape;
  Var h = ops::relu(ops::add_broadcast(ops::linear(p, t.parameter(w1)), t.parameter(b1)));
  return ops::sigmoid(ops::add_broadcast(ops::linear(h, t.parameter(w2)), t.parameter(b2)));
}

Tensor WeightModule::apply(const Tensor& p) {
  if (p.rank() != 1) throw DimensionError("weight_module: expected [d]");
  return batched_apply(p, [this](ForwardContext& ctx, Var v) { return forward(ctx, v); });
}

void WeightModule::visit(const std::string& prefix, const SlotVisitor& visitor) {
  visitor(prefix + "fc1.w", w1, SlotKind::kParameter);
  visitor(prefix + "fc1.b", b1, SlotKind::kParameter);
  visitor(prefix + "fc2.w", w2, SlotKind::kParameter);
  visitor(prefix + "fc2.b", b2, SlotKind::kParameter);
}

SAFD::SAFD(const SAFDConfig& cfg, const attention::SSAConfig& ssa, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t s = 0; s < cfg.iterations; ++s) {
    ssa_.emplace_back(ssa, rng);
    weights_.emplace_back(ssa.d_model, cfg.weight_hidden, rng);
  }
}

DecompositionVars SAFD::forward(ForwardContext& ctx, Var x1) {
  const Shape& xs = x1.shape();
  if (xs.size() != 2) throw DimensionError("safd: expected [B x d], got " + shape_string(xs));
  DecompositionVars out;
  Var x = x1;
  for (std::size_t s = 0; s < cfg_.iterations; ++s) {
    Var p = ops::reshape(ssa_[s].forward(ctx, ops::reshape(x, {xs[0], 1, xs[1]})), xs);
    Var q = ops::mul(weights_[s].forward(ctx, p), p);
    Var r = ops::sub(x, q);
    out.f_k = out.f_k.valid() ? ops::add(out.f_k, q) : q;
    out.q_list.push_back(q);
    out.r_list.push_back(r);
    x = r;
  }
  out.f_b = x;
  return out;
}

DecompositionOutput SAFD::decompose(const Tensor& x1) {
  if (x1.rank() != 1) throw DimensionError("safd_decompose: expected [d]");
  Tape tape(false);
  ForwardContext ctx{tape};
  DecompositionVars v = forward(ctx, tape.constant(x1.reshaped({1, x1.dim(0)})));
  DecompositionOutput out;
  out.f_k = v.f_k.value().reshaped(x1.shape());
  out.f_b = v.f_b.value().reshaped(x1.shape());
  for (const Var& q : v.q_list) out.q_list.push_back(q.value().reshaped(x1.shape()));
  for (const Var& r : v.r_list) out.r_list.push_back(r.value().reshaped(x1.shape()));
  return out;
}

void SAFD::visit(const std::string& prefix, const SlotVisitor& visitor) {
  for (std::size_t s = 0; s < ssa_.size(); ++s) {
    ssa_[s].visit(prefix + std::to_string(s) + ".ssa.", visitor);
    weights_[s].visit(prefix + std::to_string(s) + ".w.", visitor);
  }
}

namespace {

std::vector<attention::SSABlock> make_attention(const SAFENetConfig& cfg, Rng& rng) {
  std::vector<attention::SSABlock> v;
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) v.emplace_back(cfg.ssa, rng);
  return v;
}

std::vector<TCN> make_tcn(const SAFENetConfig& cfg, Rng& rng) {
  std::vector<TCN> v;
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) v.emplace_back(cfg.tcn, rng);
  return v;
}

const SAFENetConfig& validated(const SAFENetConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

SAFENet::SAFENet(const SAFENetConfig& cfg, std::uint64_t seed)
    : cfg_(validated(cfg)),
      rng_(seed),
      embed_(cfg.embed, rng_),
      enc_ssa_(make_attention(cfg, rng_)),
      enc_tcn_(make_tcn(cfg, rng_)),
      pooled_stats_(cfg.ssa.d_model),
      safd_(cfg.safd, cfg.ssa, rng_),
      reg_w_({cfg.ssa.d_model, cfg.n_joints}),
      reg_b_({cfg.n_joints}),
      cls_w_({cfg.ssa.d_model, cfg.n_subjects}),
      cls_b_({cfg.n_subjects}) {
  const std::size_t d = cfg.ssa.d_model;
  init_uniform(reg_w_, d, rng_);
  init_uniform(reg_b_, d, rng_);
  init_uniform(cls_w_, d, rng_);
  init_uniform(cls_b_, d, rng_);
}

Var SAFENet::encode(ForwardContext& ctx, Var windows) {
  const Shape& ws = windows.shape();
  if (ws.size() != 3 || ws[2] != cfg_.embed.c_in) {
    throw DimensionError("encode: expected [B x t x " + std::to_string(cfg_.embed.c_in) + "], got " +
                         shape_string(ws));
  }
  Var e = embed_.forward(ctx, windows);
  for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
    e = enc_tcn_[l].forward(ctx, enc_ssa_[l].forward(ctx, e));
  }
  Var x1 = ops::mean_axis(e, 1);
  if (cfg_.pooled_norm) x1 = ops::batch_norm(x1, std::nullopt, std::nullopt, pooled_stats_, ctx.training);
  return x1;
}

ForwardOutput SAFENet::forward(ForwardContext& ctx, Var windows) {
  ForwardOutput out;
  out.x1 = encode(ctx, windows);
  if (cfg_.safd_enabled) {
    out.parts = safd_.forward(ctx, out.x1);
  } else {
    out.parts.f_k = out.x1;
    out.parts.f_b = out.x1;
  }
  Tape& t = ctx.tape;
  out.angles = ops::add_broadcast(ops::linear(out.parts.f_k, t.parameter(reg_w_)), t.parameter(reg_b_));
  out.logits = ops::add_broadcast(ops::linear(out.parts.f_b, t.parameter(cls_w_)), t.parameter(cls_b_));
  return out;
}

LossTerms SAFENet::loss(ForwardContext& ctx, const ForwardOutput& out, Var targets, std::span<const int> labels) {
  LossTerms terms;
  terms.mse = loss_mse(out.angles, targets);
  terms.ce = loss_ce(out.logits, labels);
  if (cfg_.safd_enabled) {
    terms.orth = loss_orth(out.parts.f_k, out.parts.f_b, cfg_.orth_form);
    terms.total = loss_total(terms.mse, terms.ce, terms.orth, cfg_.alpha, cfg_.beta, cfg_.gamma);
  } else {
    terms.orth = ctx.tape.constant(Tensor::scalar(0.0));
    const Var parts[] = {terms.mse, terms.ce};
    const double weights[] = {cfg_.alpha, cfg_.beta};
    terms.total = ops::weighted_sum(parts, weights);
  }
  return terms;
}

Tensor SAFENet::encode(const Tensor& window) {
  if (window.rank() != 2) throw DimensionError("encode: expected [t x c]");
  Tape tape(false);
  ForwardContext ctx{tape};
  Var x1 = encode(ctx, tape.constant(window.reshaped({1, window.dim(0), window.dim(1)})));
  return x1.value().reshaped({cfg_.ssa.d_model});
}

DecompositionOutput SAFENet::safd_decompose(const Tensor& x1) { return safd_.decompose(x1); }

std::pair<Tensor, Tensor> SAFENet::heads(const Tensor& f_k, const Tensor& f_b) {
  const std::size_t d = cfg_.ssa.d_model;
  if (f_k.shape() != Shape{d} || f_b.shape() != Shape{d}) throw DimensionError("heads: features must be [d]");
  Tensor angles = reg_b_;
  Tensor logits = cls_b_;
  for (std::size_t j = 0; j < cfg_.n_joints; ++j) {
    for (std::size_t i = 0; i < d; ++i) angles[j] += f_k[i] * reg_w_.at(i, j);
  }
  for (std::size_t c = 0; c < cfg_.n_subjects; ++c) {
    for (std::size_t i = 0; i < d; ++i) logits[c] += f_b[i] * cls_w_.at(i, c);
  }
  angles.set_requires_grad(false);
  logits.set_requires_grad(false);
  return {std::move(angles), std::move(logits)};
}

void SAFENet::visit(const SlotVisitor& visitor) {
  embed_.visit("embed.", visitor);
  for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
    enc_ssa_[l].visit("encoder." + std::to_string(l) + ".ssa.", visitor);
    enc_tcn_[l].visit("encoder." + std::to_string(l) + ".tcn.", visitor);
  }
  visitor("pool.bn_mean", pooled_stats_.running_mean, SlotKind::kBuffer);
  visitor("pool.bn_var", pooled_stats_.running_var, SlotKind::kBuffer);
  safd_.visit("safd.", visitor);
  visitor("head.reg.w", reg_w_, SlotKind::kParameter);
  visitor("head.reg.b", reg_b_, SlotKind::kParameter);
  visitor("head.cls.w", cls_w_, SlotKind::kParameter);
  visitor("head.cls.b", cls_b_, SlotKind::kParameter);
}

std::vector<Tensor*> SAFENet::parameters() {
  std::vector<Tensor*> out;
  visit([&](const std::string&, Tensor& t, SlotKind kind) {
    if (kind == SlotKind::kParameter) out.push_back(&t);
  });
  return out;
}

std::size_t SAFENet::parameter_count() {
  std::size_t n = 0;
  for (Tensor* t : parameters()) n += t->size();
  return n;
}

void SAFENet::zero_grad() {
  for (Tensor* t : parameters()) t->zero_grad();
}

Var loss_mse(Var pred, Var target) { return ops::mse_loss(pred, target); }

Var loss_ce(Var logits, std::span<const int> labels) { return ops::cross_entropy(logits, labels); }

Var loss_orth(Var f_k, Var f_b, OrthForm form) {
  if (form == OrthForm::kSquaredCosine) return ops::cosine_sq_loss(f_k, f_b);
  if (f_k.shape() != f_b.shape() || f_k.shape().size() != 2) {
    throw DimensionError("loss_orth: expected matching [B x d] features");
  }
  const double d = static_cast<double>(f_k.shape()[1]);
  Var inner = ops::scale(ops::mean_axis(ops::mul(f_k, f_b), 1), d);
  return ops::mean(ops::mul(inner, inner));
}

Var loss_total(Var l_re, Var l_cls, Var l_orth, double alpha, double beta, double gamma) {
  const Var terms[] = {l_re, l_cls, l_orth};
  const double weights[] = {alpha, beta, gamma};
  return ops::weighted_sum(terms, weights);
}

double loss_total(double l_re, double l_cls, double l_orth, double alpha, double beta, double gamma) {
  return alpha * l_re + beta * l_cls + gamma * l_orth;
}

namespace {

constexpr char kMagic[4] = {'S', 'F', 'N', '1'};
constexpr std::uint32_t kVersion = 1;

struct Blob {
  Shape shape;
  std::vector<double> values;
};

std::string read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError(path.string() + ": not an SFN1 checkpoint");
  }
  const auto version = io::read_le<std::uint32_t>(in, "version");
  if (version != kVersion) throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = io::read_le<std::uint64_t>(in, "config length");
  return io::read_bytes(in, static_cast<std::size_t>(len), "config echo");
}


nlohmann::json parse_header(const std::string& text, const std::filesystem::path& path) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object() || !j.contains("model")) throw ParseError(path.string() + ": checkpoint header lacks a model config");
    return j;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(path.string() + ": malformed checkpoint header: " + ex.what());
  }
}

void write_checkpoint(SAFENet& net, std::ostream& out, const nlohmann::json& run_config) {
  nlohmann::json header = {{"model", config::to_json(net.config())}};
  if (!run_config.is_null()) header["run"] = run_config;
  const std::string text = header.dump();
  out.write(kMagic, 4);
  io::write_le<std::uint32_t>(out, kVersion);
  io::write_le<std::uint64_t>(out, text.size());
  io::write_bytes(out, text);
  std::uint64_t count = 0;
  net.visit([&](const std::string&, Tensor&, SlotKind) { ++count; });
  io::write_le<std::uint64_t>(out, count);
  net.visit([&](const std::string& name, Tensor& t, SlotKind) {
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    io::write_bytes(out, name);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) io::write_le<std::uint64_t>(out, d);
    for (double v : t.values()) io::write_le<double>(out, v);
  });
}

}  // namespace

void save_checkpoint(SAFENet& net, const std::filesystem::path& path, const nlohmann::json& run_config) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(net, out, run_config);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::size_t checkpoint_size(SAFENet& net, const nlohmann::json& run_config) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(net, out, run_config);
  return out.str().size();
}

SAFENetConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return config::model_config_from_json(parse_header(read_header(in, path), path).at("model"));
}

void load_checkpoint(SAFENet& net, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const nlohmann::json header = parse_header(read_header(in, path), path);
  if (header.at("model") != config::to_json(net.config())) {
    throw ContractError(path.string() + ": checkpoint config does not match the runtime config");
  }
  const auto count = io::read_le<std::uint64_t>(in, "blob count");
  std::map<std::string, Blob> blobs;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = io::read_le<std::uint32_t>(in, "name length");
    std::string name = io::read_bytes(in, name_len, "blob name");
    const auto rank = io::read_le<std::uint32_t>(in, "rank");
    Blob b;
    for (std::uint32_t r = 0; r < rank; ++r) {
      b.shape.push_back(static_cast<std::size_t>(io::read_le<std::uint64_t>(in, "dimension")));
    }
    b.values.resize(numel(b.shape));
    for (double& v : b.values) v = io::read_le<double>(in, "payload");
    blobs.emplace(std::move(name), std::move(b));
  }
  std::size_t matched = 0;
  net.visit([&](const std::string& name, Tensor& t, SlotKind) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw ParseError(path.string() + ": missing blob " + name);
    if (it->second.shape != t.shape()) {
      throw ParseError(path.string() + ": blob " + name + " has shape " + shape_string(it->second.shape) +
                       ", expected " + shape_string(t.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(), t.data());
    ++matched;
  });
  if (matched != blobs.size()) throw ParseError(path.string() + ": checkpoint holds unknown blobs");
}

}  // namespace safenet::model
