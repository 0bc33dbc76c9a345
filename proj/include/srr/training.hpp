#pragma once

#include "srr/autodiff.hpp"
#include "srr/data.hpp"
#include "srr/model.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace srr {

enum class RegMode
{
  None,
  AllLayers,
  FixedLayer,
  RandomLayer
};

struct TrainConfig
{
  int          batch_size = 128;
  double       lr_init = 1e-4;
  int          epochs = 200;
  int          max_steps = 0; ///< 0 = no step limit
  double       eta_reg = 0.0;
  RegMode      reg_mode = RegMode::None;
  int          reg_layer = 0;         ///< 1-based, FixedLayer only
  double       reg_lambda = 0.1;      ///< λ inside the regularizer's SRR measure
  double       stop_criterion = 0.01; ///< stop once eval-mode train CE ≤ this; ≤ 0 disables
  AugmentFlags augment;
  int          probe_samples = 0; ///< >0 records mean per-layer probes each epoch
  std::uint64_t seed = 0;

  /// Throws ConfigError; depth is needed to range-check reg_layer.
  void validate(int depth) const;
};

/// Parses "none", "all", "layer:K" or "random".
void parse_reg_mode(std::string const &s, TrainConfig &cfg);

/// lr_init·(1 + cos(π·epoch/epochs))/2, epoch clamped to [0, epochs].
double cosine_lr(double lr_init, int epoch, int epochs);

/// Autodiff handles for every model tensor, aligned with parameters().
struct ParamVars
{
  struct Layer
  {
    ad::Var U, W, D, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  };
  ad::Var            embed, pos, cls;
  std::vector<Layer> layers;
  ad::Var            head, head_bias;
  std::vector<ad::Var> all; ///< same order as parameters(weights, variant)
};

/// Trainable tensors become variables, frozen ones (CRATE_FIX's W) constants.
ParamVars make_param_vars(ModelWeights const &w, AttentionVariant variant);

/// Differentiable twin of layer_forward().
ad::Var layer_forward_ad(ad::Var const &z, ParamVars::Layer const &layer, ModelConfig const &config,
                         std::function<MatrixXd(Index, Index)> const &dropout_mask = {});

/// Differentiable λ·l0 + Rᶜ(Z;U) − R(Z); the l0 count enters as a constant.
ad::Var srr_measure_ad(ad::Var const &z, ad::Var const &U, ModelConfig const &config, double lambda_sparsity);

struct LossParts
{
  ad::Var             total;
  ad::Var             regularizer; ///< mean selected SRR term before η; empty without regularization
  double              ce = 0;
  double              reg = 0; ///< mean of the selected per-layer SRR measures (before η)
  std::vector<int>    reg_layers; ///< 1-based layers regularized in this step
  std::vector<double> layer_terms; ///< per selected layer, mean over the batch
};

/// CE + η·mean_{ℓ∈S} µ_SRR^ℓ(wˡ; f_{wˡ}(StopGrad(Z^{ℓ−1}))). The regularizer for
/// layer ℓ re-applies layer ℓ to a detached copy of its input, so its gradient
/// reaches only layer ℓ's parameters.
LossParts srr_regularized_loss(ParamVars const &vars, ModelConfig const &config, std::vector<MatrixXd const *> const &inputs,
                               std::vector<int> const &labels, TrainConfig const &cfg, std::vector<int> const &reg_layers,
                               Rng *dropout_rng = nullptr);

/// Layers regularized this step for the configured mode.
std::vector<int> select_reg_layers(TrainConfig const &cfg, int depth, Rng &layer_rng);

struct GradientSet
{
  double                          loss = 0;
  std::map<std::string, MatrixXd> grads; ///< trainable parameters only
};

/// Gradients of the (regularized) batch loss with respect to every trainable parameter.
GradientSet gradients(Model const &model, std::vector<MatrixXd const *> const &inputs, std::vector<int> const &labels,
                      TrainConfig const &cfg, std::vector<int> const &reg_layers, Rng *dropout_rng = nullptr);

class Adam
{
public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
    : beta1_{beta1}
    , beta2_{beta2}
    , eps_{eps}
  {}

  /// One update of every trainable tensor in w from grads (aligned with parameters()).
  void step(ModelWeights &w, AttentionVariant variant, std::vector<MatrixXd> const &grads, double lr);

private:
  double                beta1_, beta2_, eps_;
  long                  t_ = 0;
  std::vector<MatrixXd> m_, v_;
};

struct Evaluation
{
  double ce = 0;
  double accuracy = 0;
};

Evaluation evaluate(Model const &model, Dataset const &data, bool bypass_layernorm = false);

struct EpochRecord
{
  int    epoch = 0;
  double train_ce = 0, train_acc = 0;
  double val_ce = 0, val_acc = 0;
  double lr = 0;
  double wall_time = 0;
  double reg_value = 0; ///< mean regularizer value over the epoch's steps
  std::vector<ProbeRecord> probes;
};

struct TrainResult
{
  std::vector<EpochRecord> trace;
  bool                     converged = false;
  bool                     diverged = false;
  std::string              failure;
  long                     steps = 0;
  Evaluation               final_train, final_val;
};

inline constexpr char const *kTraceHeader = "epoch,train_ce,train_acc,val_ce,val_acc,lr,wall_time,reg_value";
std::string trace_csv_row(EpochRecord const &r);

/// Adam + cosine decay until the stop criterion, epoch budget or step budget.
/// A non-finite loss marks the run diverged instead of throwing.
TrainResult train(Model &model, Dataset const &train_set, Dataset const *val_set, TrainConfig const &cfg,
                  std::function<void(EpochRecord const &)> const &on_epoch = {});

} // namespace srr
