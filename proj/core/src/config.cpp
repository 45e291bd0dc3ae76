#include "safenet/config.hpp"

#include <fstream>
#include <set>

#include "safenet/errors.hpp"

namespace safenet::config {

using nlohmann::json;

void ProfileConfig::validate() const {
  if (batch < 1) throw ContractError("profile: batch must be >= 1");
  if (repeats < 10) throw ContractError("profile: repeats must be >= 10");
  if (warmup < 3) throw ContractError("profile: warmup must be >= 3");
}

void RunConfig::validate() const {
  if (threads < 1) throw ContractError("threads must be >= 1");
  synth.validate();
  dsp.validate();
  model.validate();
  train.validate();
  profile.validate();
}

namespace {

// Reads the members of one JSON object, remembering which keys were consumed
// so that leftovers can be reported.
bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParseError(label() + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    const std::string where = label(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ParseError(where + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ParseError(where + ": expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!non_negative_integer(v)) throw ParseError(where + ": expected a non-negative integer");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ParseError(where + ": expected an integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ParseError(where + ": expected a number");
      out = v.get<T>();
    } else {
      static_assert(std::is_same_v<T, std::vector<std::size_t>>);
      if (!v.is_array()) throw ParseError(where + ": expected an array");
      out.clear();
      for (const json& e : v) {
        if (!non_negative_integer(e)) throw ParseError(where + ": expected non-negative integers");
        out.push_back(e.get<std::size_t>());
      }
    }
  }

  // Nested object, or nullptr when absent.
  const json* child(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string label(const char* key = nullptr) const {
    std::string s = path_.empty() ? "config" : path_;
    if (key != nullptr) s += (path_.empty() ? ": " : ".") + std::string(key);
    return s;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!known_.count(it.key())) throw ParseError(label() + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

const char* activation_name(model::Activation a) { return a == model::Activation::kRelu ? "relu" : "identity"; }

const char* orth_name(model::OrthForm f) {
  return f == model::OrthForm::kSquaredCosine ? "squared_cosine" : "squared_inner";
}

json lif_json(const snn::LIFConfig& c) {
  return {{"tau", c.tau},
          {"v_threshold", c.v_threshold},
          {"v_rest", c.v_rest},
          {"v_reset", c.v_reset},
          {"surrogate_alpha", c.surrogate_alpha}};
}

void read_lif(const json& j, const std::string& path, snn::LIFConfig& c) {
  ObjectReader r(j, path);
  r.read("tau", c.tau);
  r.read("v_threshold", c.v_threshold);
  r.read("v_rest", c.v_rest);
  r.read("v_reset", c.v_reset);
  r.read("surrogate_alpha", c.surrogate_alpha);
  r.finish();
}

}  // namespace

json to_json(const model::SAFENetConfig& c) {
  return {
      {"embed", {{"c_in", c.embed.c_in}, {"d_model", c.embed.d_model}, {"conv_kernel", c.embed.conv_kernel}}},
      {"ssa",
       {{"d_model", c.ssa.d_model},
        {"n_heads", c.ssa.n_heads},
        {"sampling_factor", c.ssa.sampling_factor},
        {"lif", lif_json(c.ssa.lif)}}},
      {"tcn",
       {{"channels", c.tcn.channels},
        {"kernel", c.tcn.kernel},
        {"dilations", c.tcn.dilations},
        {"residual", c.tcn.residual},
        {"activation", activation_name(c.tcn.activation)}}},
      {"safd", {{"iterations", c.safd.iterations}, {"weight_hidden", c.safd.weight_hidden}}},
      {"window", c.window},
      {"encoder_layers", c.encoder_layers},
      {"n_joints", c.n_joints},
      {"n_subjects", c.n_subjects},
      {"alpha", c.alpha},
      {"beta", c.beta},
      {"gamma", c.gamma},
      {"orth_form", orth_name(c.orth_form)},
      {"safd_enabled", c.safd_enabled},
      {"pooled_norm", c.pooled_norm},
  };
}

model::SAFENetConfig model_config_from_json(const json& j, model::SAFENetConfig c) {
  ObjectReader r(j, "model");
  if (const json* e = r.child("embed")) {
    ObjectReader er(*e, "model.embed");
    er.read("c_in", c.embed.c_in);
    er.read("d_model", c.embed.d_model);
    er.read("conv_kernel", c.embed.conv_kernel);
    er.finish();
  }
  if (const json* s = r.child("ssa")) {
    ObjectReader sr(*s, "model.ssa");
    sr.read("d_model", c.ssa.d_model);
    sr.read("n_heads", c.ssa.n_heads);
    sr.read("sampling_factor", c.ssa.sampling_factor);
    if (const json* l = sr.child("lif")) read_lif(*l, "model.ssa.lif", c.ssa.lif);
    sr.finish();
  }
  if (const json* t = r.child("tcn")) {
    ObjectReader tr(*t, "model.tcn");
    tr.read("channels", c.tcn.channels);
    tr.read("kernel", c.tcn.kernel);
    tr.read("dilations", c.tcn.dilations);
    tr.read("residual", c.tcn.residual);
    std::string act = activation_name(c.tcn.activation);
    tr.read("activation", act);
    if (act == "relu") {
      c.tcn.activation = model::Activation::kRelu;
    } else if (act == "identity") {
      c.tcn.activation = model::Activation::kIdentity;
    } else {
      throw ParseError("model.tcn.activation: expected 'relu' or 'identity', got '" + act + "'");
    }
    tr.finish();
  }
  if (const json* s = r.child("safd")) {
    ObjectReader sr(*s, "model.safd");
    sr.read("iterations", c.safd.iterations);
    sr.read("weight_hidden", c.safd.weight_hidden);
    sr.finish();
  }
  r.read("window", c.window);
  r.read("encoder_layers", c.encoder_layers);
  r.read("n_joints", c.n_joints);
  r.read("n_subjects", c.n_subjects);
  r.read("alpha", c.alpha);
  r.read("beta", c.beta);
  r.read("gamma", c.gamma);
  std::string orth = orth_name(c.orth_form);
  r.read("orth_form", orth);
  if (orth == "squared_cosine") {
    c.orth_form = model::OrthForm::kSquaredCosine;
  } else if (orth == "squared_inner") {
    c.orth_form = model::OrthForm::kSquaredInner;
  } else {
    throw ParseError("model.orth_form: expected 'squared_cosine' or 'squared_inner', got '" + orth + "'");
  }
  r.read("safd_enabled", c.safd_enabled);
  r.read("pooled_norm", c.pooled_norm);
  r.finish();
  return c;
}

json to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"threads", c.threads},
      {"synth",
       {{"n_subjects", c.synth.n_subjects},
        {"gait_period_s", c.synth.gait_period_s},
        {"fs", c.synth.fs},
        {"fs_angle", c.synth.fs_angle},
        {"duration_s", c.synth.duration_s},
        {"n_channels", c.synth.n_channels},
        {"n_joints", c.synth.n_joints},
        {"noise_level", c.synth.noise_level},
        {"hum_level", c.synth.hum_level},
        {"seed", c.synth.seed}}},
      {"dsp",
       {{"notch_hz", c.dsp.notch_hz},
        {"notch_q", c.dsp.notch_q},
        {"highpass_hz", c.dsp.highpass_hz},
        {"highpass_order", c.dsp.highpass_order},
        {"window_s", c.dsp.window_s},
        {"step_s", c.dsp.step_s}}},
      {"model", to_json(c.model)},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"lr", c.train.lr},
        {"patience", c.train.patience},
        {"lr_decay", c.train.lr_decay},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps}}},
      {"profile", {{"batch", c.profile.batch}, {"repeats", c.profile.repeats}, {"warmup", c.profile.warmup}}},
  };
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  ObjectReader r(j, "");
  r.read("seed", c.seed);
  r.read("threads", c.threads);
  if (const json* s = r.child("synth")) {
    ObjectReader sr(*s, "synth");
    sr.read("n_subjects", c.synth.n_subjects);
    sr.read("gait_period_s", c.synth.gait_period_s);
    sr.read("fs", c.synth.fs);
    sr.read("fs_angle", c.synth.fs_angle);
    sr.read("duration_s", c.synth.duration_s);
    sr.read("n_channels", c.synth.n_channels);
    sr.read("n_joints", c.synth.n_joints);
    sr.read("noise_level", c.synth.noise_level);
    sr.read("hum_level", c.synth.hum_level);
    sr.read("seed", c.synth.seed);
    sr.finish();
  }
  if (const json* d = r.child("dsp")) {
    ObjectReader dr(*d, "dsp");
    dr.read("notch_hz", c.dsp.notch_hz);
    dr.read("notch_q", c.dsp.notch_q);
    dr.read("highpass_hz", c.dsp.highpass_hz);
    dr.read("highpass_order", c.dsp.highpass_order);
    dr.read("window_s", c.dsp.window_s);
    dr.read("step_s", c.dsp.step_s);
    dr.finish();
  }
  if (const json* m = r.child("model")) c.model = model_config_from_json(*m, c.model);
  if (const json* t = r.child("train")) {
    ObjectReader tr(*t, "train");
    tr.read("batch_size", c.train.batch_size);
    tr.read("epochs", c.train.epochs);
    tr.read("lr", c.train.lr);
    tr.read("patience", c.train.patience);
    tr.read("lr_decay", c.train.lr_decay);
    tr.read("beta1", c.train.beta1);
    tr.read("beta2", c.train.beta2);
    tr.read("eps", c.train.eps);
    tr.finish();
  }
  if (const json* p = r.child("profile")) {
    ObjectReader pr(*p, "profile");
    pr.read("batch", c.profile.batch);
    pr.read("repeats", c.profile.repeats);
    pr.read("warmup", c.profile.warmup);
    pr.finish();
  }
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("config not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw ParseError(path.string() + ": " + ex.what());
  }
  return run_config_from_json(j);
}

std::string echo(const RunConfig& cfg) { return to_json(cfg).dump(); }

std::string echo(const model::SAFENetConfig& cfg) { return to_json(cfg).dump(); }

}  // namespace safenet::config
