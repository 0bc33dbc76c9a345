#pragma once

#include "srr/coding_rate.hpp"
#include "srr/layers.hpp"
#include "srr/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace srr {

struct ModelConfig
{
  int              depth = 12;
  int              width = 384;
  int              heads = 6;
  double           alpha = 1.0;
  double           beta = 0.1;
  double           gamma = 1.0;  ///< attention step scale; αγ² multiplies the head output
  double           eps_sq = 0.5; ///< quantization ε² for probes and the SRR measure
  double           lambda_sparsity = 0.1;
  AttentionVariant variant = AttentionVariant::CrateC;
  double           dropout = 0.0;
  int              patch = 4;
  int              image_size = 32;
  int              channels = 3;
  int              input_dim = 0; ///< token input size; 0 derives patch²·channels
  int              seq_len = 0;   ///< patch tokens; 0 derives (image_size/patch)²
  int              num_classes = 10;
  std::uint64_t    seed = 0;

  int head_width() const { return width / heads; }
  int patch_dim() const { return input_dim > 0 ? input_dim : patch * patch * channels; }
  int num_patches() const { return seq_len > 0 ? seq_len : (image_size / patch) * (image_size / patch); }
  int num_tokens() const { return num_patches() + 1; }

  /// Throws ConfigError on the first violated invariant.
  void validate() const;
};

struct ProbeRecord
{
  int          layer = 0; ///< 1-based
  double       r = 0;
  double       rc = 0;
  std::int64_t l0 = 0;
  double       srr = 0;
};

struct ModelWeights
{
  MatrixXd                         embed; ///< d × patch_dim
  MatrixXd                         pos;   ///< d × (1 + patches)
  VectorXd                         cls;   ///< d
  std::vector<LayerParams<double>> layers;
  MatrixXd                         head;      ///< classes × d
  VectorXd                         head_bias; ///< classes
};

/// A named tensor inside ModelWeights. Vectors are exposed as n×1.
template <typename T> struct BasicParamRef
{
  std::string name;
  T          *data = nullptr;
  Index       rows = 0, cols = 0;
  bool        trainable = true;
  bool        tracked = false; ///< weight matrix counted by the norm/spectral measures

  Index size() const { return rows * cols; }
  auto  map() const
  {
    if constexpr (std::is_const_v<T>) {
      return Eigen::Map<MatrixXd const>(data, rows, cols);
    } else {
      return Eigen::Map<MatrixXd>(data, rows, cols);
    }
  }
};
using ParamRef = BasicParamRef<double>;
using ConstParamRef = BasicParamRef<double const>;

/// Every tensor in a fixed order (embedding, positional, CLS, layers, head).
/// CRATE_FIX's W is listed with trainable = false.
std::vector<ParamRef>      parameters(ModelWeights &w, AttentionVariant variant);
std::vector<ConstParamRef> parameters(ModelWeights const &w, AttentionVariant variant);

struct Model
{
  ModelConfig  config;
  ModelWeights weights;
  ModelWeights initial; ///< snapshot taken at init; used by distance-to-init measures
};

/// Allocates and samples all weights from streams split off config.seed.
Model init_model(ModelConfig const &config);

/// Exact trainable-parameter count.
std::int64_t param_count(ModelConfig const &config);

struct ForwardOptions
{
  bool   train = false; ///< dropout active only when set and dropout_rng is non-null
  bool   probe = false;
  bool   bypass_layernorm = false;
  double probe_lambda = 0.1;
  Rng   *dropout_rng = nullptr;
};

struct ForwardResult
{
  VectorXd                 logits;
  std::vector<ProbeRecord> probes;
};

/// Inverted dropout: each entry zeroed with probability p, survivors scaled by
/// 1/(1−p). Draws one Bernoulli per entry, column-major.
void apply_dropout(MatrixXd &m, double p, Rng &rng);

/// Rate configuration used by probes: d, K and ε² from the model, N = live tokens.
RateConfig probe_rate_config(ModelConfig const &config, double lambda_sparsity);

/// One layer: Zˡ = ISTA(LN₂(attention_update(LN₁(Z^{ℓ−1})))).
MatrixXd layer_forward(MatrixXd const &z, LayerParams<double> const &layer, ModelConfig const &config,
                       bool bypass_layernorm = false, DropoutFn<double> const &dropout = {});

/// Embedding: [cls, embed·patches] + pos, followed by dropout when given.
MatrixXd embed_input(ModelWeights const &w, MatrixXd const &patches, DropoutFn<double> const &dropout = {});

ForwardResult forward(Model const &model, MatrixXd const &patches, ForwardOptions const &opts = {});

/// Same as forward() but on an explicit weight set sharing the model's config.
ForwardResult forward(ModelConfig const &config, ModelWeights const &weights, MatrixXd const &patches,
                      ForwardOptions const &opts = {});

} // namespace srr
