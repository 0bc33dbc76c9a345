#include "srr/model.hpp"

#include <cmath>

namespace srr {

void ModelConfig::validate() const
{
  if (depth < 1) { throw ConfigError("depth must be >= 1"); }
  if (width < 1 || heads < 1 || width % heads != 0) { throw ConfigError("width must be a positive multiple of heads"); }
  if (!(dropout >= 0.0 && dropout < 1.0)) { throw ConfigError("dropout must lie in [0, 1)"); }
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma > 0.0)) { throw ConfigError("step sizes must be non-negative, gamma positive"); }
  if (!(eps_sq > 0.0)) { throw ConfigError("eps_sq must be positive"); }
  if (num_classes < 2) { throw ConfigError("num_classes must be >= 2"); }
  if (input_dim <= 0) {
    if (patch < 1 || channels < 1 || image_size % patch != 0) { throw ConfigError("image_size must be divisible by patch"); }
  }
  if (num_patches() < 1 || patch_dim() < 1) { throw ConfigError("empty token input"); }
}

namespace {

template <typename W, typename Ref> std::vector<Ref> enumerate(W &w, AttentionVariant variant)
{
  std::vector<Ref> out;
  auto add = [&](std::string name, auto &m, bool trainable, bool tracked) {
    out.push_back(Ref{std::move(name), m.data(), m.rows(), m.cols(), trainable, tracked});
  };
  add("embed", w.embed, true, true);
  add("pos", w.pos, true, false);
  add("cls", w.cls, true, false);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto       &layer = w.layers[l];
    std::string pre = "layer" + std::to_string(l + 1) + ".";
    add(pre + "U", layer.U.matrix(), true, true);
    if (layer.W) { add(pre + "W", *layer.W, variant != AttentionVariant::CrateFix, true); }
    add(pre + "D", layer.D, true, true);
    add(pre + "ln1_gain", layer.ln1_gain, true, false);
    add(pre + "ln1_bias", layer.ln1_bias, true, false);
    add(pre + "ln2_gain", layer.ln2_gain, true, false);
    add(pre + "ln2_bias", layer.ln2_bias, true, false);
  }
  add("head", w.head, true, true);
  add("head_bias", w.head_bias, true, false);
  return out;
}

} // namespace

std::vector<ParamRef> parameters(ModelWeights &w, AttentionVariant variant)
{
  return enumerate<ModelWeights, ParamRef>(w, variant);
}

std::vector<ConstParamRef> parameters(ModelWeights const &w, AttentionVariant variant)
{
  return enumerate<ModelWeights const, ConstParamRef>(w, variant);
}

Model init_model(ModelConfig const &config)
{
  config.validate();
  Index const d = config.width;
  Rng const   root(config.seed);
  Model       model;
  model.config = config;
  auto &w = model.weights;

  Rng embed_rng = root.split("embed");
  w.embed = gaussian_matrix(d, config.patch_dim(), 1.0 / std::sqrt(double(config.patch_dim())), embed_rng);
  Rng pos_rng = root.split("pos");
  w.pos = gaussian_matrix(d, config.num_tokens(), 1.0, pos_rng);
  Rng cls_rng = root.split("cls");
  w.cls = gaussian_matrix(d, 1, 1.0, cls_rng);

  double const layer_std = 1.0 / std::sqrt(double(d));
  for (int l = 0; l < config.depth; ++l) {
    Rng                 lr = root.split("layer").split(std::uint64_t(l));
    Rng                 u_rng = lr.split("U"), d_rng = lr.split("D"), w_rng = lr.split("W");
    LayerParams<double> layer;
    layer.U = SubspaceBasis<double>(gaussian_matrix(d, d, layer_std, u_rng), config.heads);
    layer.D = gaussian_matrix(d, d, layer_std, d_rng);
    if (has_output_matrix(config.variant)) { layer.W = gaussian_matrix(d, d, layer_std, w_rng); }
    layer.ln1_gain = VectorXd::Ones(d);
    layer.ln1_bias = VectorXd::Zero(d);
    layer.ln2_gain = VectorXd::Ones(d);
    layer.ln2_bias = VectorXd::Zero(d);
    layer.alpha = config.alpha;
    layer.beta = config.beta;
    w.layers.push_back(std::move(layer));
  }
  Rng head_rng = root.split("head");
  w.head = gaussian_matrix(config.num_classes, d, layer_std, head_rng);
  w.head_bias = VectorXd::Zero(config.num_classes);

  model.initial = model.weights;
  return model;
}

std::int64_t param_count(ModelConfig const &config)
{
  config.validate();
  std::int64_t const d = config.width;
  std::int64_t const kp = std::int64_t(config.heads) * config.head_width();
  std::int64_t       per_layer = d * kp /* U */ + d * d /* D */ + 4 * d /* two LayerNorms */;
  if (config.variant == AttentionVariant::Crate) { per_layer += d * kp; }
  return d * config.patch_dim() + d * config.num_tokens() + d + config.depth * per_layer +
         std::int64_t(config.num_classes) * d + config.num_classes;
}

void apply_dropout(MatrixXd &m, double p, Rng &rng)
{
  if (p <= 0.0) { return; }
  double const keep = 1.0 / (1.0 - p);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.bernoulli(p) ? 0.0 : m.data()[i] * keep;
  }
}

RateConfig probe_rate_config(ModelConfig const &config, double lambda_sparsity)
{
  return RateConfig::make(config.width, config.num_tokens(), config.heads, config.eps_sq, lambda_sparsity);
}

MatrixXd layer_forward(MatrixXd const &z, LayerParams<double> const &layer, ModelConfig const &config,
                       bool bypass_layernorm, DropoutFn<double> const &dropout)
{
  MatrixXd const zn = bypass_layernorm ? z : layer_norm(z, layer.ln1_gain, layer.ln1_bias);
  MatrixXd const y = attention_update(zn, layer, config.variant, config.gamma, dropout);
  MatrixXd const yn = bypass_layernorm ? y : layer_norm(y, layer.ln2_gain, layer.ln2_bias);
  return ista_step(yn, layer.D, layer.beta, config.lambda_sparsity);
}

MatrixXd embed_input(ModelWeights const &w, MatrixXd const &patches, DropoutFn<double> const &dropout)
{
  MatrixXd z = embed_patches(patches, w.embed, w.pos, w.cls);
  if (dropout) { dropout(z); }
  return z;
}

ForwardResult forward(ModelConfig const &config, ModelWeights const &w, MatrixXd const &patches,
                      ForwardOptions const &opts)
{
  DropoutFn<double> dropout;
  if (opts.train && opts.dropout_rng && config.dropout > 0.0) {
    dropout = [p = config.dropout, rng = opts.dropout_rng](MatrixXd &m) { apply_dropout(m, p, *rng); };
  }
  ForwardResult result;
  MatrixXd      z = embed_input(w, patches, dropout);
  RateConfig    rate;
  if (opts.probe) { rate = probe_rate_config(config, opts.probe_lambda); }
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    z = layer_forward(z, w.layers[l], config, opts.bypass_layernorm, dropout);
    if (opts.probe) {
      auto const c = srr_components(z, w.layers[l].U, rate);
      result.probes.push_back(ProbeRecord{int(l) + 1, c.r, c.rc, c.l0, c.srr});
    }
  }
  result.logits = w.head * z.col(0) + w.head_bias;
  return result;
}

ForwardResult forward(Model const &model, MatrixXd const &patches, ForwardOptions const &opts)
{
  return forward(model.config, model.weights, patches, opts);
}

} // namespace srr
