#include "srr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

namespace srr {

void TrainConfig::validate(int depth) const
{
  if (batch_size < 1) { throw ConfigError("batch_size must be >= 1"); }
  if (!(lr_init > 0)) { throw ConfigError("lr_init must be positive"); }
  if (epochs < 1) { throw ConfigError("epochs must be >= 1"); }
  if (eta_reg < 0) { throw ConfigError("eta_reg must be >= 0"); }
  if ((eta_reg == 0.0) != (reg_mode == RegMode::None)) {
    throw ConfigError("eta_reg must be zero exactly when the regularizer mode is none");
  }
  if (reg_mode == RegMode::FixedLayer && (reg_layer < 1 || reg_layer > depth)) {
    throw ConfigError("reg layer " + std::to_string(reg_layer) + " outside [1, " + std::to_string(depth) + "]");
  }
}

void parse_reg_mode(std::string const &s, TrainConfig &cfg)
{
  if (s == "none") {
    cfg.reg_mode = RegMode::None;
  } else if (s == "all") {
    cfg.reg_mode = RegMode::AllLayers;
  } else if (s == "random") {
    cfg.reg_mode = RegMode::RandomLayer;
  } else if (s.rfind("layer:", 0) == 0) {
    cfg.reg_mode = RegMode::FixedLayer;
    try {
      cfg.reg_layer = std::stoi(s.substr(6));
    } catch (std::exception const &) {
      throw ConfigError("bad regularizer layer in '" + s + "'");
    }
  } else {
    throw ConfigError("unknown regularizer mode '" + s + "' (none|all|layer:K|random)");
  }
}

double cosine_lr(double lr_init, int epoch, int epochs)
{
  double const t = double(std::clamp(epoch, 0, epochs)) / double(std::max(epochs, 1));
  return lr_init * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

ParamVars make_param_vars(ModelWeights const &w, AttentionVariant variant)
{
  ParamVars pv;
  for (auto const &p : parameters(w, variant)) {
    MatrixXd m = p.map();
    pv.all.push_back(p.trainable ? ad::variable(std::move(m)) : ad::constant(std::move(m)));
  }
  std::size_t i = 0;
  pv.embed = pv.all[i++];
  pv.pos = pv.all[i++];
  pv.cls = pv.all[i++];
  for (auto const &layer : w.layers) {
    ParamVars::Layer l;
    l.U = pv.all[i++];
    if (layer.W) { l.W = pv.all[i++]; }
    l.D = pv.all[i++];
    l.ln1_gain = pv.all[i++];
    l.ln1_bias = pv.all[i++];
    l.ln2_gain = pv.all[i++];
    l.ln2_bias = pv.all[i++];
    pv.layers.push_back(l);
  }
  pv.head = pv.all[i++];
  pv.head_bias = pv.all[i++];
  return pv;
}

ad::Var layer_forward_ad(ad::Var const &z, ParamVars::Layer const &layer, ModelConfig const &config,
                         std::function<MatrixXd(Index, Index)> const &dropout_mask)
{
  Index const p = config.head_width();
  ad::Var     zn = ad::layer_norm(z, layer.ln1_gain, layer.ln1_bias);

  std::vector<ad::Var> heads;
  for (Index k = 0; k < config.heads; ++k) {
    ad::Var const u = ad::middle_cols(layer.U, k * p, p);
    ad::Var const a = ad::matmul(ad::transpose(u), zn);
    ad::Var       attn = ad::softmax_columns(ad::matmul(ad::transpose(a), a));
    if (dropout_mask) { attn = ad::mask_mul(attn, dropout_mask(attn.rows(), attn.cols())); }
    heads.push_back(ad::matmul(a, attn));
  }
  ad::Var const stack = ad::vcat(heads);
  ad::Var       delta;
  switch (config.variant) {
  case AttentionVariant::CrateC:
  case AttentionVariant::CrateN: delta = ad::matmul(layer.U, stack); break;
  case AttentionVariant::CrateT: delta = ad::matmul(ad::transpose(layer.U), stack); break;
  case AttentionVariant::Crate:
  case AttentionVariant::CrateFix:
    if (!layer.W.node()) { throw ConfigError("variant requires an output matrix W"); }
    delta = ad::matmul(layer.W, stack);
    break;
  case AttentionVariant::CrateIdentity: delta = stack; break;
  }
  if (dropout_mask) { delta = ad::mask_mul(delta, dropout_mask(delta.rows(), delta.cols())); }
  double const  step = config.alpha * config.gamma * config.gamma;
  ad::Var const y = config.variant == AttentionVariant::CrateN ? ad::sub(zn, ad::scale(delta, step))
                                                               : ad::add(zn, ad::scale(delta, step));
  ad::Var const yn = ad::layer_norm(y, layer.ln2_gain, layer.ln2_bias);
  ad::Var const residual = ad::sub(yn, ad::matmul(layer.D, yn));
  ad::Var const pre = ad::add(yn, ad::scale(ad::matmul(ad::transpose(layer.D), residual), config.beta));
  return ad::relu(ad::add_scalar(pre, -config.beta * config.lambda_sparsity));
}

ad::Var srr_measure_ad(ad::Var const &z, ad::Var const &U, ModelConfig const &config, double lambda_sparsity)
{
  RateConfig const rate = RateConfig::make(config.width, z.cols(), config.heads, config.eps_sq, lambda_sparsity);
  Index const      p = rate.p;
  ad::Var          rc;
  for (Index k = 0; k < rate.K; ++k) {
    ad::Var const a = ad::matmul(ad::transpose(ad::middle_cols(U, k * p, p)), z);
    ad::Var const term = ad::coding_rate(a, rate.gamma());
    rc = k == 0 ? term : ad::add(rc, term);
  }
  ad::Var const r = ad::coding_rate(z, rate.full_scale());
  double const  l0 = double(sparsity_l0(z.value(), rate.l0_tol));
  return ad::add_scalar(ad::sub(rc, r), lambda_sparsity * l0);
}

namespace {

std::function<MatrixXd(Index, Index)> mask_source(double p, Rng *rng)
{
  if (!rng || p <= 0.0) { return {}; }
  return [p, rng](Index rows, Index cols) {
    MatrixXd m = MatrixXd::Ones(rows, cols);
    apply_dropout(m, p, *rng);
    return m;
  };
}

bool needs_regularizer(TrainConfig const &cfg)
{
  return cfg.reg_mode != RegMode::None && cfg.eta_reg > 0.0;
}

} // namespace

LossParts srr_regularized_loss(ParamVars const &vars, ModelConfig const &config, std::vector<MatrixXd const *> const &inputs,
                               std::vector<int> const &labels, TrainConfig const &cfg, std::vector<int> const &reg_layers,
                               Rng *dropout_rng)
{
  if (inputs.size() != labels.size() || inputs.empty()) { throw DimensionError("srr_regularized_loss: empty or ragged batch"); }
  auto const masks = mask_source(config.dropout, dropout_rng);
  bool const use_reg = needs_regularizer(cfg) && !reg_layers.empty();

  std::vector<ad::Var> logits;
  std::vector<ad::Var> reg_sums(reg_layers.size());
  for (auto const *x : inputs) {
    ad::Var z = ad::add(ad::hcat({vars.cls, ad::matmul(vars.embed, ad::constant(*x))}), vars.pos);
    if (masks) { z = ad::mask_mul(z, masks(z.rows(), z.cols())); }
    for (std::size_t l = 0; l < vars.layers.size(); ++l) {
      ad::Var const prev = z;
      try {
        z = layer_forward_ad(prev, vars.layers[l], config, masks);
      } catch (NumericError const &e) {
        throw NumericError("layer " + std::to_string(l + 1) + ": " + e.what());
      }
      if (!z.value().allFinite()) { throw NumericError("non-finite activation at layer " + std::to_string(l + 1)); }
      if (!use_reg) { continue; }
      for (std::size_t s = 0; s < reg_layers.size(); ++s) {
        if (reg_layers[s] != int(l) + 1) { continue; }
        ad::Var const zsg = layer_forward_ad(ad::detach(prev), vars.layers[l], config, masks);
        ad::Var const term = srr_measure_ad(zsg, vars.layers[l].U, config, cfg.reg_lambda);
        reg_sums[s] = reg_sums[s].node() ? ad::add(reg_sums[s], term) : term;
      }
    }
    logits.push_back(ad::add(ad::matmul(vars.head, ad::middle_cols(z, 0, 1)), vars.head_bias));
  }

  LossParts parts;
  ad::Var const ce = ad::cross_entropy(ad::hcat(logits), labels);
  parts.ce = ce.scalar();
  if (!std::isfinite(parts.ce)) { throw NumericError("non-finite cross-entropy"); }
  parts.total = ce;
  if (use_reg) {
    double const inv_batch = 1.0 / double(inputs.size());
    ad::Var      reg_mean;
    for (std::size_t s = 0; s < reg_layers.size(); ++s) {
      ad::Var const layer_mean = ad::scale(reg_sums[s], inv_batch);
      parts.layer_terms.push_back(layer_mean.scalar());
      reg_mean = s == 0 ? layer_mean : ad::add(reg_mean, layer_mean);
    }
    reg_mean = ad::scale(reg_mean, 1.0 / double(reg_layers.size()));
    parts.regularizer = reg_mean;
    parts.reg = reg_mean.scalar();
    parts.reg_layers = reg_layers;
    if (!std::isfinite(parts.reg)) { throw NumericError("non-finite regularizer"); }
    parts.total = ad::add(ce, ad::scale(reg_mean, cfg.eta_reg));
  }
  return parts;
}

std::vector<int> select_reg_layers(TrainConfig const &cfg, int depth, Rng &layer_rng)
{
  switch (cfg.reg_mode) {
  case RegMode::None: return {};
  case RegMode::AllLayers: {
    std::vector<int> all(static_cast<std::size_t>(depth));
    std::iota(all.begin(), all.end(), 1);
    return all;
  }
  case RegMode::FixedLayer: return {cfg.reg_layer};
  case RegMode::RandomLayer: return {int(layer_rng.index(std::size_t(depth))) + 1};
  }
  return {};
}

GradientSet gradients(Model const &model, std::vector<MatrixXd const *> const &inputs, std::vector<int> const &labels,
                      TrainConfig const &cfg, std::vector<int> const &reg_layers, Rng *dropout_rng)
{
  ParamVars const vars = make_param_vars(model.weights, model.config.variant);
  LossParts const parts = srr_regularized_loss(vars, model.config, inputs, labels, cfg, reg_layers, dropout_rng);
  ad::backward(parts.total);
  GradientSet out;
  out.loss = parts.total.scalar();
  auto const refs = parameters(model.weights, model.config.variant);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].trainable) { out.grads[refs[i].name] = vars.all[i].grad(); }
  }
  return out;
}

void Adam::step(ModelWeights &w, AttentionVariant variant, std::vector<MatrixXd> const &grads, double lr)
{
  auto refs = parameters(w, variant);
  if (grads.size() != refs.size()) { throw DimensionError("Adam::step: gradient count mismatch"); }
  if (m_.empty()) {
    for (auto const &r : refs) {
      m_.push_back(MatrixXd::Zero(r.rows, r.cols));
      v_.push_back(MatrixXd::Zero(r.rows, r.cols));
    }
  }
  ++t_;
  double const bc1 = 1.0 - std::pow(beta1_, double(t_));
  double const bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!refs[i].trainable) { continue; }
    auto const &g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    auto param = refs[i].map();
    param.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

Evaluation evaluate(Model const &model, Dataset const &data, bool bypass_layernorm)
{
  Evaluation e;
  if (data.empty()) { return e; }
  ForwardOptions opts;
  opts.bypass_layernorm = bypass_layernorm;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    VectorXd const logits = forward(model, data.inputs[i], opts).logits;
    double const   mx = logits.maxCoeff();
    double const   lse = mx + std::log((logits.array() - mx).exp().sum());
    e.ce += lse - logits(data.labels[i]);
    Index arg = 0;
    logits.maxCoeff(&arg);
    correct += arg == data.labels[i] ? 1 : 0;
  }
  e.ce /= double(data.size());
  e.accuracy = double(correct) / double(data.size());
  return e;
}

std::string trace_csv_row(EpochRecord const &r)
{
  std::ostringstream ss;
  ss << std::setprecision(10) << r.epoch << ',' << r.train_ce << ',' << r.train_acc << ',' << r.val_ce << ',' << r.val_acc
     << ',' << r.lr << ',' << std::setprecision(6) << r.wall_time << ',' << std::setprecision(10) << r.reg_value;
  return ss.str();
}

namespace {

std::vector<ProbeRecord> mean_probes(Model const &model, Dataset const &data, int samples, double lambda)
{
  std::vector<ProbeRecord> mean;
  std::size_t const        n = std::min<std::size_t>(std::size_t(samples), data.size());
  ForwardOptions           opts;
  opts.probe = true;
  opts.probe_lambda = lambda;
  for (std::size_t i = 0; i < n; ++i) {
    auto const probes = forward(model, data.inputs[i], opts).probes;
    if (mean.empty()) {
      mean = probes;
      for (auto &p : mean) {
        p = ProbeRecord{p.layer, 0, 0, 0, 0};
      }
    }
    for (std::size_t l = 0; l < probes.size(); ++l) {
      mean[l].r += probes[l].r / double(n);
      mean[l].rc += probes[l].rc / double(n);
      mean[l].srr += probes[l].srr / double(n);
      mean[l].l0 += probes[l].l0;
    }
  }
  for (auto &p : mean) {
    p.l0 = std::int64_t(std::llround(double(p.l0) / double(std::max<std::size_t>(n, 1))));
  }
  return mean;
}

} // namespace

TrainResult train(Model &model, Dataset const &train_set, Dataset const *val_set, TrainConfig const &cfg,
                  std::function<void(EpochRecord const &)> const &on_epoch)
{
  cfg.validate(model.config.depth);
  if (train_set.empty()) { throw ConfigError("train: empty dataset"); }

  Rng const  root(cfg.seed);
  Rng        dropout_rng = root.split("dropout");
  Rng        layer_rng = root.split("reg_layer");
  Rng        augment_rng = root.split("augment");
  Adam       adam;
  TrainResult result;
  auto const start = std::chrono::steady_clock::now();
  bool const augmenting = cfg.augment.any() && !train_set.images.empty();

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double const lr = cosine_lr(cfg.lr_init, epoch, cfg.epochs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = root.split("shuffle").split(std::uint64_t(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double reg_total = 0;
    long   reg_steps = 0;
    bool   budget_hit = false;
    for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch_size)) {
      std::size_t const           end = std::min(order.size(), b + std::size_t(cfg.batch_size));
      std::vector<MatrixXd>       augmented;
      std::vector<MatrixXd const *> inputs;
      std::vector<int>            labels;
      augmented.reserve(end - b);
      for (std::size_t i = b; i < end; ++i) {
        std::size_t const idx = order[i];
        if (augmenting) {
          augmented.push_back(extract_patches(augment(train_set.images[idx], cfg.augment, augment_rng), train_set.patch));
          inputs.push_back(&augmented.back());
        } else {
          inputs.push_back(&train_set.inputs[idx]);
        }
        labels.push_back(train_set.labels[idx]);
      }
      std::vector<int> const reg_layers = select_reg_layers(cfg, model.config.depth, layer_rng);
      try {
        ParamVars const vars = make_param_vars(model.weights, model.config.variant);
        LossParts const parts =
          srr_regularized_loss(vars, model.config, inputs, labels, cfg, reg_layers,
                               model.config.dropout > 0.0 ? &dropout_rng : nullptr);
        ad::backward(parts.total);
        std::vector<MatrixXd> grads;
        grads.reserve(vars.all.size());
        for (auto const &v : vars.all) {
          grads.push_back(v.grad());
        }
        adam.step(model.weights, model.config.variant, grads, lr);
        if (!reg_layers.empty() && cfg.eta_reg > 0.0) {
          reg_total += parts.reg;
          ++reg_steps;
        }
      } catch (NumericError const &e) {
        result.diverged = true;
        result.failure = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
        return result;
      }
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        budget_hit = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.reg_value = reg_steps > 0 ? reg_total / double(reg_steps) : 0.0;
    result.final_train = evaluate(model, train_set);
    rec.train_ce = result.final_train.ce;
    rec.train_acc = result.final_train.accuracy;
    if (val_set && !val_set->empty()) {
      result.final_val = evaluate(model, *val_set);
      rec.val_ce = result.final_val.ce;
      rec.val_acc = result.final_val.accuracy;
    }
    if (cfg.probe_samples > 0) { rec.probes = mean_probes(model, train_set, cfg.probe_samples, cfg.reg_lambda); }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.train_ce)) {
      result.diverged = true;
      result.failure = "epoch " + std::to_string(epoch) + ": non-finite training loss";
      result.trace.push_back(rec);
      return result;
    }
    result.trace.push_back(rec);
    if (on_epoch) { on_epoch(rec); }
    if (cfg.stop_criterion > 0 && rec.train_ce <= cfg.stop_criterion) {
      result.converged = true;
      break;
    }
    if (budget_hit) { break; }
  }
  return result;
}

} // namespace srr
