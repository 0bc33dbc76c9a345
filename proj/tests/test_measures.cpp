#include "doctest.h"
#include "oracles.hpp"

#include "srr/measures.hpp"

using namespace srr;

namespace {

ModelConfig tiny()
{
  ModelConfig c;
  c.depth = 2;
  c.width = 8;
  c.heads = 2;
  c.input_dim = 8;
  c.seq_len = 3;
  c.num_classes = 8;
  c.seed = 3;
  return c;
}

Dataset small_data(int n, int classes, std::uint64_t seed)
{
  SynthParams p;
  p.classes = classes;
  p.tokens = 3;
  p.input_dim = 8;
  p.train_size = n;
  p.val_size = 0;
  return synth_dataset(p, seed).train;
}

MeasureOptions fast_options()
{
  MeasureOptions o;
  o.sigma.mc_samples = 2;
  o.sigma.iterations = 8;
  o.probe_samples = 4;
  return o;
}

} // namespace

TEST_CASE("margin_quantile fixtures")
{
  std::vector<VectorXd> same(4, VectorXd::Constant(3, 1.5));
  CHECK(margin_quantile(same, {0, 1, 2, 0}, 10) == 0.0);

  VectorXd a(2), b(2);
  a << 3, 1;
  b << 0, 2;
  for (double q : {1.0, 10.0, 50.0, 99.0}) {
    CHECK(margin_quantile({a, b}, {0, 1}, q) == 2.0);
  }

  // Ten samples with margins −4.5, −3.5, … , 4.5 in shuffled order.
  std::vector<VectorXd> logits;
  std::vector<int>      labels;
  std::vector<double>   margins;
  for (int i : {3, 7, 0, 9, 1, 5, 8, 2, 6, 4}) {
    double const m = double(i) - 4.5;
    VectorXd     f(3);
    f << 0.25, m + 0.25, -1.0;
    logits.push_back(f);
    labels.push_back(1);
    margins.push_back(m);
  }
  std::sort(margins.begin(), margins.end());
  double const pos = 0.1 * 9;
  double const expected = margins[0] + (pos - 0) * (margins[1] - margins[0]);
  CHECK(margin_quantile(logits, labels, 10) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(margin_quantile(logits, labels, 50) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_THROWS(margin_quantile(std::vector<VectorXd>{}, {}, 10));
  CHECK_THROWS(margin_quantile(logits, labels, 0));
}

TEST_CASE("flatness sigma")
{
  SigmaSearchOptions opts;
  opts.mc_samples = 4000;
  opts.iterations = 30;
  opts.seed = 1;
  VectorXd const w = VectorXd::Zero(1);
  auto const     quad = flatness_sigma([](VectorXd const &v) { return v.squaredNorm(); }, w, opts);
  CHECK(quad.sigma == doctest::Approx(std::sqrt(0.1)).epsilon(0.05));
  CHECK_FALSE(quad.hit_lower);
  CHECK_FALSE(quad.hit_upper);

  auto const flat = flatness_sigma([](VectorXd const &) { return 2.0; }, w, opts);
  CHECK(flat.sigma == 10.0);
  CHECK(flat.hit_upper);

  auto const steep = flatness_sigma([](VectorXd const &v) { return 1e12 * v.squaredNorm(); }, w, opts);
  CHECK(steep.sigma == 1e-5);
  CHECK(steep.hit_lower);

  SigmaSearchOptions few;
  few.seed = 9;
  auto const f = [](VectorXd const &v) { return v.squaredNorm() + v.sum(); };
  CHECK(flatness_sigma(f, VectorXd::Ones(3), few).sigma == flatness_sigma(f, VectorXd::Ones(3), few).sigma);
}

TEST_CASE("measures of an untrained model")
{
  auto const     m = init_model(tiny());
  Dataset const  data = small_data(12, 8, 4);
  auto const     mv = measure_vector(m, &m.initial, data, fast_options());
  CHECK(*mv.fro_distance == 0.0);
  CHECK(*mv.spec_distance == 0.0);
  CHECK(*mv.l2_norm_init == 0.0);
  CHECK(*mv.pac_bayes_init == 0.0);
  CHECK(mv.num_params == double(param_count(m.config)));
  for (auto const &[name, v] : mv.columns()) {
    INFO(name);
    CHECK(std::isfinite(v));
  }
  auto const again = measure_vector(m, &m.initial, data, fast_options());
  CHECK(measure_csv_row(again) == measure_csv_row(mv));
}

TEST_CASE("identity weight matrices")
{
  auto m = init_model(tiny());
  MatrixXd const I = MatrixXd::Identity(8, 8);
  m.weights.embed = I;
  m.weights.head = I;
  for (auto &l : m.weights.layers) {
    l.U.matrix() = I;
    l.D = I;
  }
  auto const mv = measure_vector(m, nullptr, small_data(8, 8, 5), fast_options());
  CHECK(mv.prod_of_spec == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(mv.prod_of_fro == doctest::Approx(std::pow(8.0, 6)).epsilon(1e-10));
  CHECK(mv.fro_over_spec == doctest::Approx(6 * 8.0).epsilon(1e-10));
  CHECK(mv.sum_of_spec == doctest::Approx(6.0).epsilon(1e-10));
  CHECK(mv.param_norm == doctest::Approx(48.0).epsilon(1e-12));
  CHECK_FALSE(mv.fro_distance.has_value());
  CHECK_FALSE(mv.spec_init_main.has_value());
  CHECK(mv.errors.size() >= 5);
}

TEST_CASE("norm identities")
{
  auto m = init_model(tiny());
  Rng  rng(6);
  for (auto &p : parameters(m.weights, m.config.variant)) {
    p.map() += gaussian_matrix(p.rows, p.cols, 0.05, rng);
  }
  auto const mv = measure_vector(m, &m.initial, small_data(12, 8, 6), fast_options());

  double l2 = 0, dist = 0, spec_prod_log = 0, fro_dist = 0;
  int    M = 0;
  auto const live = parameters(m.weights, m.config.variant), init = parameters(m.initial, m.config.variant);
  for (std::size_t i = 0; i < live.size(); ++i) {
    l2 += live[i].map().squaredNorm();
    dist += (live[i].map() - init[i].map()).squaredNorm();
    if (live[i].tracked) {
      spec_prod_log += 2 * std::log(oracle::spectral(live[i].map()));
      fro_dist += (live[i].map() - init[i].map()).squaredNorm();
      ++M;
    }
  }
  CHECK(mv.l2_norm == doctest::Approx(l2).epsilon(1e-12));
  CHECK(*mv.l2_norm_init == doctest::Approx(dist).epsilon(1e-12));
  CHECK(*mv.fro_distance == doctest::Approx(fro_dist).epsilon(1e-12));
  CHECK(std::log(mv.prod_of_spec) == doctest::Approx(spec_prod_log).epsilon(1e-8));
  CHECK(mv.sum_of_spec == doctest::Approx(M * std::exp(spec_prod_log / M)).epsilon(1e-8));
  CHECK(mv.pac_bayes_orig == doctest::Approx(l2 / (4 * mv.sigma * mv.sigma)).epsilon(1e-12));
  CHECK(mv.pac_bayes_flatness_inv_sigma == doctest::Approx(1 / mv.sigma).epsilon(1e-12));
  double const msq = mv.margin > 0 ? mv.margin * mv.margin : 1e-24;
  CHECK(mv.inv_margin == doctest::Approx(1 / msq).epsilon(1e-12));
  CHECK(mv.spec_orig_main == doctest::Approx(mv.prod_of_spec * mv.fro_over_spec / msq).epsilon(1e-12));
}

TEST_CASE("srr field is the mean of the probes")
{
  auto const    m = init_model(tiny());
  Dataset const data = small_data(6, 8, 7);
  auto const    opts = fast_options();
  double        total = 0;
  int           count = 0;
  ForwardOptions f;
  f.probe = true;
  f.bypass_layernorm = true;
  for (int i = 0; i < opts.probe_samples; ++i) {
    for (auto const &p : forward(m, data.inputs[i], f).probes) {
      total += p.srr;
      ++count;
    }
  }
  CHECK(std::abs(srr_measure(m, data, opts.probe_samples, 0.1) - total / count) < 1e-10);
}

TEST_CASE("path norm")
{
  auto m = init_model(tiny());
  m.weights.head.setZero();
  CHECK(path_norm(m) == doctest::Approx(m.weights.head_bias.squaredNorm()).epsilon(1e-12));

  auto         n = init_model(tiny());
  double const base = path_norm(n) - n.weights.head_bias.squaredNorm();
  n.weights.head *= 3.0;
  CHECK(path_norm(n) - n.weights.head_bias.squaredNorm() == doctest::Approx(9.0 * base).epsilon(1e-10));
}

TEST_CASE("measure CSV round trip")
{
  auto const m = init_model(tiny());
  auto const mv = measure_vector(m, nullptr, small_data(6, 8, 8), fast_options());
  auto const header = measure_csv_header();
  auto const row = measure_csv_row(mv);
  auto const parsed = parse_measure_csv(header + "\n" + row + "\n");
  auto const cols = mv.columns();
  REQUIRE(parsed.size() == cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    CHECK(parsed[i].first == cols[i].first);
    if (std::isnan(cols[i].second)) {
      CHECK(std::isnan(parsed[i].second));
    } else {
      CHECK(parsed[i].second == cols[i].second);
    }
  }
  CHECK(measure_names().size() == 23);
  CHECK(measure_names().back() == "srr");
}
