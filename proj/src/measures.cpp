#include "srr/measures.hpp"

#include "srr/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace srr {

std::vector<std::string> measure_names()
{
  return {"l2_norm",
          "l2_norm_init",
          "num_params",
          "inv_margin",
          "sum_of_spec",
          "prod_of_spec",
          "sum_of_spec_over_margin",
          "prod_of_spec_over_margin",
          "fro_over_spec",
          "spec_init_main",
          "spec_orig_main",
          "sum_of_fro",
          "prod_of_fro",
          "sum_of_fro_over_margin",
          "prod_of_fro_over_margin",
          "fro_distance",
          "spec_distance",
          "param_norm",
          "path_norm",
          "pac_bayes_init",
          "pac_bayes_orig",
          "pac_bayes_flatness_inv_sigma",
          "srr"};
}

std::vector<std::pair<std::string, double>> MeasureVector::columns() const
{
  double const nan = std::numeric_limits<double>::quiet_NaN();
  auto         opt = [nan](std::optional<double> const &v) { return v.value_or(nan); };
  std::vector<double> const values{l2_norm,
                                   opt(l2_norm_init),
                                   num_params,
                                   inv_margin,
                                   sum_of_spec,
                                   prod_of_spec,
                                   sum_of_spec_over_margin,
                                   prod_of_spec_over_margin,
                                   fro_over_spec,
                                   opt(spec_init_main),
                                   spec_orig_main,
                                   sum_of_fro,
                                   prod_of_fro,
                                   sum_of_fro_over_margin,
                                   prod_of_fro_over_margin,
                                   opt(fro_distance),
                                   opt(spec_distance),
                                   param_norm,
                                   path_norm,
                                   opt(pac_bayes_init),
                                   pac_bayes_orig,
                                   pac_bayes_flatness_inv_sigma,
                                   srr};
  auto const names = measure_names();
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    out.emplace_back(names[i], values[i]);
  }
  return out;
}

double margin_quantile(std::vector<VectorXd> const &logits, std::vector<int> const &labels, double q)
{
  if (logits.empty() || logits.size() != labels.size()) { throw DimensionError("margin_quantile: empty dataset"); }
  if (!(q > 0 && q < 100)) { throw ConfigError("margin_quantile: q must lie in (0, 100)"); }
  std::vector<double> margins;
  margins.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    VectorXd const &f = logits[i];
    int const       y = labels[i];
    double          other = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < f.size(); ++j) {
      if (j != y) { other = std::max(other, f(j)); }
    }
    margins.push_back(f(y) - other);
  }
  std::sort(margins.begin(), margins.end());
  double const      pos = q / 100.0 * double(margins.size() - 1);
  std::size_t const lo = std::size_t(std::floor(pos));
  std::size_t const hi = std::min(lo + 1, margins.size() - 1);
  double const      frac = pos - double(lo);
  return margins[lo] + frac * (margins[hi] - margins[lo]);
}

double margin_quantile(Model const &model, Dataset const &data, double q, bool bypass_layernorm)
{
  ForwardOptions opts;
  opts.bypass_layernorm = bypass_layernorm;
  std::vector<VectorXd> logits;
  for (auto const &x : data.inputs) {
    logits.push_back(forward(model, x, opts).logits);
  }
  return margin_quantile(logits, data.labels, q);
}

SigmaSearch flatness_sigma(std::function<double(VectorXd const &)> const &loss, VectorXd const &w,
                           SigmaSearchOptions const &opts)
{
  if (!(opts.target_increase > 0)) { throw ConfigError("flatness_sigma: target increase must be positive"); }
  if (opts.mc_samples < 1) { throw ConfigError("flatness_sigma: need at least one Monte-Carlo sample"); }
  double const base = loss(w);
  Rng const    root(opts.seed);
  auto         increase = [&](double sigma) {
    double total = 0;
    for (int s = 0; s < opts.mc_samples; ++s) {
      Rng      rng = root.split(std::uint64_t(s));
      VectorXd perturbed = w;
      for (Index i = 0; i < perturbed.size(); ++i) {
        perturbed(i) += sigma * rng.normal();
      }
      total += loss(perturbed);
    }
    double const inc = total / double(opts.mc_samples) - base;
    return std::isfinite(inc) ? inc : std::numeric_limits<double>::infinity();
  };

  SigmaSearch out;
  if (increase(opts.upper) <= opts.target_increase) {
    out.sigma = opts.upper;
    out.hit_upper = true;
    return out;
  }
  if (increase(opts.lower) > opts.target_increase) {
    out.sigma = opts.lower;
    out.hit_lower = true;
    return out;
  }
  double lo = opts.lower, hi = opts.upper;
  for (int it = 0; it < opts.iterations; ++it) {
    double const mid = 0.5 * (lo + hi);
    (increase(mid) <= opts.target_increase ? lo : hi) = mid;
  }
  out.sigma = lo;
  return out;
}

namespace {

VectorXd flatten_trainable(ModelWeights const &w, AttentionVariant variant)
{
  Index n = 0;
  for (auto const &p : parameters(w, variant)) {
    if (p.trainable) { n += p.size(); }
  }
  VectorXd out(n);
  Index    at = 0;
  for (auto const &p : parameters(w, variant)) {
    if (!p.trainable) { continue; }
    out.segment(at, p.size()) = Eigen::Map<VectorXd const>(p.data, p.size());
    at += p.size();
  }
  return out;
}

void unflatten_trainable(VectorXd const &v, ModelWeights &w, AttentionVariant variant)
{
  Index at = 0;
  for (auto &p : parameters(w, variant)) {
    if (!p.trainable) { continue; }
    Eigen::Map<VectorXd>(p.data, p.size()) = v.segment(at, p.size());
    at += p.size();
  }
}

double dataset_ce(ModelConfig const &config, ModelWeights const &w, Dataset const &data, bool bypass)
{
  ForwardOptions opts;
  opts.bypass_layernorm = bypass;
  double total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    VectorXd const logits = forward(config, w, data.inputs[i], opts).logits;
    double const   mx = logits.maxCoeff();
    total += mx + std::log((logits.array() - mx).exp().sum()) - logits(data.labels[i]);
  }
  return total / double(data.size());
}

} // namespace

SigmaSearch pac_bayes_sigma(Model const &model, Dataset const &data, SigmaSearchOptions const &opts, bool bypass)
{
  if (data.empty()) { throw DimensionError("pac_bayes_sigma: empty dataset"); }
  VectorXd const w0 = flatten_trainable(model.weights, model.config.variant);
  ModelWeights   scratch = model.weights;
  auto           loss = [&](VectorXd const &v) {
    unflatten_trainable(v, scratch, model.config.variant);
    return dataset_ce(model.config, scratch, data, bypass);
  };
  return flatness_sigma(loss, w0, opts);
}

double path_norm(Model const &model, bool bypass)
{
  ModelWeights squared = model.weights;
  for (auto &p : parameters(squared, model.config.variant)) {
    p.map() = p.map().cwiseAbs2();
  }
  MatrixXd const ones = MatrixXd::Ones(model.config.patch_dim(), model.config.num_patches());
  ForwardOptions opts;
  opts.bypass_layernorm = bypass;
  return forward(model.config, squared, ones, opts).logits.sum();
}

double srr_measure(Model const &model, Dataset const &data, int samples, double lambda, bool bypass)
{
  std::size_t const n = std::min<std::size_t>(std::size_t(std::max(samples, 1)), data.size());
  if (n == 0) { throw DimensionError("srr_measure: empty probe set"); }
  ForwardOptions opts;
  opts.probe = true;
  opts.probe_lambda = lambda;
  opts.bypass_layernorm = bypass;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto const &p : forward(model, data.inputs[i], opts).probes) {
      total += p.srr;
      ++count;
    }
  }
  return total / double(count);
}

MeasureVector measure_vector(Model const &model, ModelWeights const *init, Dataset const &data, MeasureOptions const &opts)
{
  if (data.empty()) { throw DimensionError("measure_vector: empty dataset"); }
  MeasureVector m;
  auto const    variant = model.config.variant;
  auto const    refs = parameters(model.weights, variant);
  std::vector<ConstParamRef> init_refs;
  if (init) {
    init_refs = parameters(*init, variant);
    bool ok = init_refs.size() == refs.size();
    for (std::size_t i = 0; ok && i < refs.size(); ++i) {
      ok = init_refs[i].rows == refs[i].rows && init_refs[i].cols == refs[i].cols;
    }
    if (!ok) { throw DimensionError("measure_vector: init snapshot does not match the model"); }
  }

  double l2 = 0, l2_init = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!refs[i].trainable) { continue; }
    l2 += refs[i].map().squaredNorm();
    if (init) { l2_init += (refs[i].map() - init_refs[i].map()).squaredNorm(); }
  }
  m.l2_norm = l2;
  m.num_params = double(param_count(model.config));

  // Spectral / Frobenius families over the tracked weight matrices, in log
  // space so that long products neither overflow nor underflow.
  double      log_prod_spec = 0, log_prod_fro = 0, fro_over_spec = 0, dist_over_spec = 0;
  double      fro_dist = 0, spec_dist = 0, param_norm = 0;
  std::size_t tracked = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!refs[i].tracked) { continue; }
    auto const   w = refs[i].map();
    double const spec = spectral_norm(w);
    double const spec_sq = spec * spec;
    double const fro_sq = w.squaredNorm();
    log_prod_spec += std::log(spec_sq);
    log_prod_fro += std::log(fro_sq);
    fro_over_spec += fro_sq / spec_sq;
    param_norm += fro_sq;
    if (init) {
      MatrixXd const delta = w - init_refs[i].map();
      double const   ds = spectral_norm(delta);
      fro_dist += delta.squaredNorm();
      spec_dist += ds * ds;
      dist_over_spec += delta.squaredNorm() / spec_sq;
    }
    ++tracked;
  }
  double const M = double(tracked);
  m.prod_of_spec = std::exp(log_prod_spec);
  m.sum_of_spec = M * std::exp(log_prod_spec / M);
  m.prod_of_fro = std::exp(log_prod_fro);
  m.sum_of_fro = M * std::exp(log_prod_fro / M);
  m.fro_over_spec = fro_over_spec;
  m.param_norm = param_norm;

  m.margin = margin_quantile(model, data, opts.margin_percentile, opts.bypass_layernorm);
  if (!(m.margin > 0)) { m.errors.push_back("margin: non-positive 10th-percentile margin, floored at 1e-12"); }
  double const margin_sq = std::pow(std::max(m.margin, 1e-12), 2);
  m.inv_margin = 1.0 / margin_sq;
  m.sum_of_spec_over_margin = m.sum_of_spec / margin_sq;
  m.prod_of_spec_over_margin = m.prod_of_spec / margin_sq;
  m.sum_of_fro_over_margin = m.sum_of_fro / margin_sq;
  m.prod_of_fro_over_margin = m.prod_of_fro / margin_sq;
  m.spec_orig_main = m.prod_of_spec * fro_over_spec / margin_sq;

  m.path_norm = path_norm(model, opts.bypass_layernorm);

  auto const sigma = pac_bayes_sigma(model, data, opts.sigma, opts.bypass_layernorm);
  m.sigma = sigma.sigma;
  if (sigma.hit_lower) { m.errors.push_back("pac_bayes_sigma: lower bracket exceeded the target increase"); }
  double const four_sigma_sq = 4.0 * sigma.sigma * sigma.sigma;
  m.pac_bayes_orig = l2 / four_sigma_sq;
  m.pac_bayes_flatness_inv_sigma = 1.0 / sigma.sigma;

  if (init) {
    m.l2_norm_init = l2_init;
    m.fro_distance = fro_dist;
    m.spec_distance = spec_dist;
    m.spec_init_main = m.prod_of_spec * dist_over_spec / margin_sq;
    m.pac_bayes_init = l2_init / four_sigma_sq;
  } else {
    for (char const *name : {"l2_norm_init", "spec_init_main", "fro_distance", "spec_distance", "pac_bayes_init"}) {
      m.errors.push_back(std::string(name) + ": no init snapshot");
    }
  }

  m.srr = srr_measure(model, data, opts.probe_samples, opts.lambda_sparsity, opts.bypass_layernorm);
  return m;
}

std::string measure_csv_header()
{
  std::string out;
  for (auto const &n : measure_names()) {
    out += (out.empty() ? "" : ",") + n;
  }
  return out;
}

std::string measure_csv_row(MeasureVector const &m)
{
  std::ostringstream ss;
  ss << std::setprecision(17);
  bool first = true;
  for (auto const &[name, v] : m.columns()) {
    if (!first) { ss << ','; }
    first = false;
    if (std::isnan(v)) {
      ss << "NA";
    } else {
      ss << v;
    }
  }
  return ss.str();
}

std::vector<std::pair<std::string, double>> parse_measure_csv(std::string const &text)
{
  std::istringstream in(text);
  std::string        header, row;
  std::getline(in, header);
  std::getline(in, row);
  std::vector<std::string> names, values;
  auto split = [](std::string const &line_text, std::vector<std::string> &cells) {
    std::istringstream line(line_text);
    std::string        cell;
    while (std::getline(line, cell, ',')) {
      cells.push_back(cell);
    }
  };
  split(header, names);
  split(row, values);
  if (names.empty() || names.size() != values.size()) { throw FormatError("measure csv: header/row length mismatch"); }
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    double const v = values[i] == "NA" ? std::numeric_limits<double>::quiet_NaN() : std::stod(values[i]);
    out.emplace_back(names[i], v);
  }
  return out;
}

} // namespace srr
