#pragma once

#include "srr/data.hpp"
#include "srr/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace srr {

/// Complexity measures of a trained model. Fields relative to the
/// initialization are empty when no init snapshot was supplied.
struct MeasureVector
{
  double                l2_norm = 0;
  std::optional<double> l2_norm_init;
  double                num_params = 0;
  double                inv_margin = 0;
  double                sum_of_spec = 0;
  double                prod_of_spec = 0;
  double                sum_of_spec_over_margin = 0;
  double                prod_of_spec_over_margin = 0;
  double                fro_over_spec = 0;
  std::optional<double> spec_init_main;
  double                spec_orig_main = 0;
  double                sum_of_fro = 0;
  double                prod_of_fro = 0;
  double                sum_of_fro_over_margin = 0;
  double                prod_of_fro_over_margin = 0;
  std::optional<double> fro_distance;
  std::optional<double> spec_distance;
  double                param_norm = 0;
  double                path_norm = 0;
  std::optional<double> pac_bayes_init;
  double                pac_bayes_orig = 0;
  double                pac_bayes_flatness_inv_sigma = 0;
  double                srr = 0;

  double                   margin = 0; ///< 10th-percentile margin (not a column)
  double                   sigma = 0;  ///< flatness σ (not a column)
  std::vector<std::string> errors;     ///< fields that could not be computed

  /// (name, value) in the fixed column order; empty optionals yield NaN.
  std::vector<std::pair<std::string, double>> columns() const;
};

/// Column names in the fixed order used by measure CSV rows.
std::vector<std::string> measure_names();

/// q-th percentile (linear interpolation between order statistics) of
/// f(x)_y − max_{j≠y} f(x)_j over the given logits.
double margin_quantile(std::vector<VectorXd> const &logits, std::vector<int> const &labels, double q);
double margin_quantile(Model const &model, Dataset const &data, double q, bool bypass_layernorm = true);

struct SigmaSearch
{
  double sigma = 0;
  bool   hit_lower = false; ///< even the lower bracket exceeded the target
  bool   hit_upper = false;
};

struct SigmaSearchOptions
{
  double        target_increase = 0.1;
  int           mc_samples = 8;
  double        lower = 1e-5;
  double        upper = 10.0;
  int           iterations = 20;
  std::uint64_t seed = 0;
};

/// Largest σ in [lower, upper] whose Monte-Carlo loss increase
/// mean_s loss(w + σε_s) − loss(w) stays within the target, by bisection. The
/// same ε_s are reused for every σ, so the estimate is deterministic per seed.
SigmaSearch flatness_sigma(std::function<double(VectorXd const &)> const &loss, VectorXd const &w,
                           SigmaSearchOptions const &opts);

/// flatness_sigma on training cross-entropy with all trainable parameters perturbed.
SigmaSearch pac_bayes_sigma(Model const &model, Dataset const &data, SigmaSearchOptions const &opts,
                            bool bypass_layernorm = true);

/// Σ of the logits produced by the all-ones input with every parameter squared.
double path_norm(Model const &model, bool bypass_layernorm = true);

/// Mean of per-layer SRR measures over layers and the first `samples` inputs.
double srr_measure(Model const &model, Dataset const &data, int samples, double lambda_sparsity,
                   bool bypass_layernorm = true);

struct MeasureOptions
{
  double             margin_percentile = 10.0;
  SigmaSearchOptions sigma;
  int                probe_samples = 32;
  double             lambda_sparsity = 0.1;
  bool               bypass_layernorm = true;
};

MeasureVector measure_vector(Model const &model, ModelWeights const *init_snapshot, Dataset const &data,
                             MeasureOptions const &opts = {});

std::string measure_csv_header();
std::string measure_csv_row(MeasureVector const &m);
/// Parses a header + row pair written by measure_csv_*; returns name→value.
std::vector<std::pair<std::string, double>> parse_measure_csv(std::string const &text);

} // namespace srr
