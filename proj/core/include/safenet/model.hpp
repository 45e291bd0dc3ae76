#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "safenet/attention.hpp"
#include "safenet/layer.hpp"
#include "safenet/ops.hpp"

namespace safenet::model {

enum class Activation { kRelu, kIdentity };

struct TCNConfig {
  std::size_t channels = 64;
  std::size_t kernel = 3;
  std::vector<std::size_t> dilations{1, 2};  // strictly increasing, one block each
  bool residual = true;
  Activation activation = Activation::kRelu;

  void validate() const;
  // Each block holds two causal convolutions of the block's dilation.
  std::size_t receptive_field() const;
};

struct SAFDConfig {
  std::size_t iterations = 2;
  std::size_t weight_hidden = 32;

  void validate() const;
};

enum class OrthForm {
  kSquaredCosine,  // mean_b cos^2(F_k, F_b)
  kSquaredInner,   // mean_b (F_k . F_b)^2
};

struct SAFENetConfig {
  attention::EmbedConfig embed;
  attention::SSAConfig ssa;
  TCNConfig tcn;
  SAFDConfig safd;
  std::size_t window = 50;
  std::size_t encoder_layers = 2;
  std::size_t n_joints = 3;
  std::size_t n_subjects = 4;
  double alpha = 0.1;  // regression
  double beta = 1.0;   // classification
  double gamma = 0.5;  // orthogonality
  OrthForm orth_form = OrthForm::kSquaredCosine;
  // Without SAFD both heads read x1 and the orthogonality term is dropped.
  bool safd_enabled = true;
  // Non-affine batch normalization of the pooled feature before decomposition.
  bool pooled_norm = true;

  void validate() const;
};

class TCN {
 public:
  TCN(const TCNConfig& cfg, Rng& rng);

  const TCNConfig& config() const { return cfg_; }
  // x[B x t x d] -> [B x t x d]; output step tau reads inputs 0..tau only.
  Var forward(ForwardContext& ctx, Var x);
  Tensor apply(const Tensor& x);  // [t x d]

  struct Conv {
    Tensor w;  // [K x d x d]; tap K-1 reads the current step
    Tensor b;  // [d]
  };
  std::vector<Conv>& convs() { return convs_; }  // two per block
  void visit(const std::string& prefix, const SlotVisitor& visitor);

 private:
  TCNConfig cfg_;
  std::vector<Conv> convs_;
};

// w = sigmoid(FC2(relu(FC1(p)))), a per-dimension gate in (0, 1).
class WeightModule {
 public:
  WeightModule(std::size_t d, std::size_t hidden, Rng& rng);

  Var forward(ForwardContext& ctx, Var p);  // [B x d]
  Tensor apply(const Tensor& p);            // [d]

  Tensor w1, b1, w2, b2;
  void visit(const std::string& prefix, const SlotVisitor& visitor);
};

struct DecompositionOutput {
  Tensor f_k;
  Tensor f_b;
  std::vector<Tensor> q_list;
  std::vector<Tensor> r_list;
};

struct DecompositionVars {
  Var f_k, f_b;
  std::vector<Var> q_list, r_list;
};

class SAFD {
 public:
  SAFD(const SAFDConfig& cfg, const attention::SSAConfig& ssa, Rng& rng);

  const SAFDConfig& config() const { return cfg_; }
  // x1[B x d]; p_s = SSA(x_s), q_s = W(p_s) * p_s, r_s = x_s - q_s, x_{s+1} = r_s.
  DecompositionVars forward(ForwardContext& ctx, Var x1);
  DecompositionOutput decompose(const Tensor& x1);  // [d]

  std::vector<attention::SSABlock>& attention_blocks() { return ssa_; }
  std::vector<WeightModule>& weight_modules() { return weights_; }
  void visit(const std::string& prefix, const SlotVisitor& visitor);

 private:
  SAFDConfig cfg_;
  std::vector<attention::SSABlock> ssa_;
  std::vector<WeightModule> weights_;
};

struct ForwardOutput {
  Var angles;  // [B x n]
  Var logits;  // [B x C]
  Var x1;      // [B x d]
  DecompositionVars parts;
};

struct LossTerms {
  Var total, mse, ce, orth;
};

class SAFENet {
 public:
  SAFENet(const SAFENetConfig& cfg, std::uint64_t seed);

  const SAFENetConfig& config() const { return cfg_; }

  // windows[B x t x c] -> x1[B x d].
  Var encode(ForwardContext& ctx, Var windows);
  ForwardOutput forward(ForwardContext& ctx, Var windows);
  LossTerms loss(ForwardContext& ctx, const ForwardOutput& out, Var targets, std::span<const int> labels);

  // Single-window inference in eval mode.
  Tensor encode(const Tensor& window);  // [t x c] -> [d]
  DecompositionOutput safd_decompose(const Tensor& x1);
  // (angles_hat[n], logits[C]) from decomposed features.
  std::pair<Tensor, Tensor> heads(const Tensor& f_k, const Tensor& f_b);

  attention::DataEmbedding& embedding() { return embed_; }
  std::vector<attention::SSABlock>& encoder_attention() { return enc_ssa_; }
  std::vector<TCN>& encoder_tcn() { return enc_tcn_; }
  SAFD& safd() { return safd_; }
  Tensor& reg_w() { return reg_w_; }
  Tensor& reg_b() { return reg_b_; }
  Tensor& cls_w() { return cls_w_; }
  Tensor& cls_b() { return cls_b_; }

  // Every named tensor in a stable order.
  void visit(const SlotVisitor& visitor);
  std::vector<Tensor*> parameters();
  std::size_t parameter_count();
  void zero_grad();

 private:
  SAFENetConfig cfg_;
  Rng rng_;
  attention::DataEmbedding embed_;
  std::vector<attention::SSABlock> enc_ssa_;
  std::vector<TCN> enc_tcn_;
  ops::BatchNormStats pooled_stats_;
  SAFD safd_;
  Tensor reg_w_, reg_b_, cls_w_, cls_b_;
};

// Scalar losses over batches.
Var loss_mse(Var pred, Var target);
Var loss_ce(Var logits, std::span<const int> labels);
Var loss_orth(Var f_k, Var f_b, OrthForm form = OrthForm::kSquaredCosine);
Var loss_total(Var l_re, Var l_cls, Var l_orth, double alpha, double beta, double gamma);
double loss_total(double l_re, double l_cls, double l_orth, double alpha, double beta, double gamma);

// Checkpoint container: "SFN1", format version, a JSON header holding the
// model config (and the run config when given), then named float64 blobs;
// all integers little-endian.
void save_checkpoint(SAFENet& net, const std::filesystem::path& path, const nlohmann::json& run_config = {});
// Bytes save_checkpoint would write.
std::size_t checkpoint_size(SAFENet& net, const nlohmann::json& run_config = {});
// Restores weights and buffers into `net`. Throws ContractError when the stored
// config differs from net.config() and ParseError on a malformed file.
void load_checkpoint(SAFENet& net, const std::filesystem::path& path);
// Model config stored in a checkpoint.
SAFENetConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace safenet::model
