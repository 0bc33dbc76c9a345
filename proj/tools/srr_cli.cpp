#include "srr/toy_dynamics.hpp"
#include "srr/zoo.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace srr;

namespace {

void write_output(std::string const &out, std::string const &text)
{
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    if (auto parent = fs::path(out).parent_path(); !parent.empty()) { fs::create_directories(parent); }
    write_file_atomic(out, text);
  }
}

Json read_json(std::string const &path)
{
  try {
    return Json::parse(read_file(path));
  } catch (Json::exception const &e) {
    throw ConfigError(path + ": " + e.what());
  }
}

struct DataArgs
{
  std::string   config;
  std::string   source;
  std::string   path;
  std::uint64_t seed = 0;
  bool          seed_set = false;
};

void add_data_options(CLI::App *cmd, DataArgs &a)
{
  cmd->add_option("--config", a.config, "JSON config whose \"data\" block describes the dataset");
  cmd->add_option("--data", a.source, "Dataset source")->check(CLI::IsMember({"cifar10", "cifar100", "synthetic"}));
  cmd->add_option("--data-path", a.path, "CIFAR binary directory");
  cmd->add_option_function<std::uint64_t>(
    "--data-seed",
    [&a](std::uint64_t s) {
      a.seed = s;
      a.seed_set = true;
    },
    "Synthetic data seed");
}

/// Dataset spec for a checkpoint: config file first, then flags; synthetic
/// shapes default to the model's input geometry.
DataSpec resolve_data(DataArgs const &a, ModelConfig const &model)
{
  DataSpec d;
  if (!a.config.empty()) {
    d = run_config_from_json(read_json(a.config)).data;
  } else {
    d.synth.input_dim = model.patch_dim();
    d.synth.tokens = model.num_patches();
    d.synth.classes = model.num_classes;
  }
  if (!a.source.empty()) { d.source = a.source; }
  if (!a.path.empty()) { d.path = a.path; }
  if (a.seed_set) { d.seed = a.seed; }
  return d;
}

int cmd_toy(std::string const &rule, bool paper_scale, std::uint64_t seed, std::string const &out)
{
  std::vector<DynamicsRule> rules;
  if (rule == "all") {
    for (char const *r : {"a", "b", "c", "d", "e", "n"}) {
      rules.push_back(parse_rule(r));
    }
  } else {
    rules.push_back(parse_rule(rule));
  }
  DynamicsSetup const setup = paper_scale ? DynamicsSetup::paper_scale(seed) : DynamicsSetup{.seed = seed};
  std::string         csv;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    auto const trace = run_dynamics(rules[i], setup);
    csv += dynamics_csv(trace, i == 0);
    if (trace.truncated) {
      std::cerr << "rule " << rule_letter(rules[i]) << ": non-finite state at layer " << trace.overflow_layer
                << ", trace truncated\n";
    }
  }
  write_output(out, csv);
  return 0;
}

int cmd_train(std::string const &config_path, std::string const &source, std::string const &data_path,
              std::string const &reg, std::optional<double> eta, int epochs, int max_steps, std::string const &out_dir)
{
  RunConfig rc = config_path.empty() ? RunConfig{} : run_config_from_json(read_json(config_path));
  if (!source.empty()) { rc.data.source = source; }
  if (!data_path.empty()) { rc.data.path = data_path; }
  if (!reg.empty()) { parse_reg_mode(reg, rc.train); }
  if (eta) {
    rc.train.eta_reg = *eta;
  } else if (rc.train.reg_mode != RegMode::None && rc.train.eta_reg == 0) {
    rc.train.eta_reg = 0.001;
  }
  if (epochs > 0) { rc.train.epochs = epochs; }
  if (max_steps > 0) { rc.train.max_steps = max_steps; }
  fit_model_to_data(rc.model, rc.data);
  rc.train.validate(rc.model.depth);

  auto  data = load_data(rc.data, rc.model.patch);
  Model model = init_model(rc.model);
  std::cerr << "parameters: " << param_count(rc.model) << "\n";

  fs::create_directories(out_dir);
  std::string trace = std::string(kTraceHeader) + "\n";
  auto        result = train(model, data.train, &data.val, rc.train, [&](EpochRecord const &r) {
    trace += trace_csv_row(r) + "\n";
    write_file_atomic(fs::path(out_dir) / "trace.csv", trace);
    std::cerr << "epoch " << r.epoch << " train_ce " << r.train_ce << " val_acc " << r.val_acc << "\n";
  });
  write_file_atomic(fs::path(out_dir) / "trace.csv", trace);
  save_checkpoint(model, fs::path(out_dir) / "checkpoint.json");
  write_file_atomic(fs::path(out_dir) / "config.json", to_json(rc).dump(2) + "\n");

  std::cout << "converged " << (result.converged ? "yes" : "no") << ", steps " << result.steps << ", train_ce "
            << result.final_train.ce << ", val_acc " << result.final_val.accuracy << "\n";
  if (result.diverged) {
    std::cerr << "diverged: " << result.failure << "\n";
    return 2;
  }
  return 0;
}

int cmd_probe(std::string const &ckpt, DataArgs const &da, double lambda, int samples, bool use_val,
              std::string const &out)
{
  Model const model = load_checkpoint(ckpt);
  auto        data = load_data(resolve_data(da, model.config), model.config.patch);
  auto const &set = use_val ? data.val : data.train;
  int const   n = std::min<int>(samples, int(set.size()));
  if (n < 1) { throw ConfigError("probe: dataset is empty"); }

  int const           L = model.config.depth;
  std::vector<double> r(L), rc(L), l0(L), srr(L);
  ForwardOptions      opts;
  opts.probe = true;
  opts.probe_lambda = lambda;
  for (int i = 0; i < n; ++i) {
    auto const res = forward(model, set.inputs[i], opts);
    for (auto const &p : res.probes) {
      r[p.layer - 1] += p.r / n;
      rc[p.layer - 1] += p.rc / n;
      l0[p.layer - 1] += double(p.l0) / n;
      srr[p.layer - 1] += p.srr / n;
    }
  }
  std::ostringstream ss;
  ss.precision(17);
  ss << "layer,r,rc,l0,srr\n";
  for (int l = 0; l < L; ++l) {
    ss << l + 1 << ',' << r[l] << ',' << rc[l] << ',' << l0[l] << ',' << srr[l] << '\n';
  }
  write_output(out, ss.str());
  return 0;
}

int cmd_measure(std::string const &ckpt, std::string const &init_path, DataArgs const &da, int mc_samples,
                std::uint64_t sigma_seed, std::string const &out)
{
  Model const model = load_checkpoint(ckpt);
  auto        data = load_data(resolve_data(da, model.config), model.config.patch);
  ModelWeights init = model.initial;
  if (!init_path.empty()) {
    Model const snap = load_checkpoint(init_path);
    if (param_count(snap.config) != param_count(model.config) || snap.config.variant != model.config.variant) {
      throw ConfigError("init snapshot does not match the checkpoint architecture");
    }
    init = snap.weights;
  }
  MeasureOptions mo;
  mo.sigma.mc_samples = mc_samples;
  mo.sigma.seed = sigma_seed;
  auto const mv = measure_vector(model, &init, data.train, mo);
  for (auto const &e : mv.errors) {
    std::cerr << "warning: " << e << "\n";
  }
  write_output(out, measure_csv_header() + "\n" + measure_csv_row(mv) + "\n");
  return 0;
}

int cmd_correlate(std::string const &zoo_dir, std::optional<int> width, std::vector<std::string> measures,
                  std::string const &out)
{
  auto const records = load_zoo_records(zoo_dir);
  if (measures.empty()) { measures = measure_names(); }
  auto const report = correlation_report(records, measures, width);
  write_output(out, report_csv(report));
  std::cout << report_text(report);
  return 0;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Sparse rate reduction: CRATE models, toy dynamics, complexity measures"};
  app.require_subcommand(1);

  auto       *toy = app.add_subcommand("toy", "Layer-wise coding-rate dynamics of the update rules");
  std::string toy_rule = "all", toy_out;
  bool        toy_paper = false;
  std::uint64_t toy_seed = 0;
  toy->add_option("--rule", toy_rule, "a, b, c, d, e, n or all")->check(CLI::IsMember({"a", "b", "c", "d", "e", "n", "all"}));
  toy->add_flag("--paper-scale", toy_paper, "N=196, d=384, K=6, L=12");
  toy->add_option("--seed", toy_seed);
  toy->add_option("--out", toy_out, "CSV path (stdout if omitted)");

  auto       *tr = app.add_subcommand("train", "Train one model");
  std::string tr_config, tr_data, tr_path, tr_reg, tr_out = "run";
  double      tr_eta = 0;
  int         tr_epochs = 0, tr_steps = 0;
  tr->add_option("--config", tr_config, "JSON run config");
  tr->add_option("--data", tr_data)->check(CLI::IsMember({"cifar10", "cifar100", "synthetic"}));
  tr->add_option("--data-path", tr_path, "CIFAR binary directory");
  tr->add_option("--reg", tr_reg, "none, all, layer:K or random");
  auto *eta_opt = tr->add_option("--eta", tr_eta, "Regularizer weight");
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--max-steps", tr_steps);
  tr->add_option("--out-dir", tr_out, "Output directory for checkpoint.json and trace.csv");

  auto       *pr = app.add_subcommand("probe", "Per-layer coding rates and sparsity of a checkpoint");
  std::string pr_ckpt, pr_out;
  DataArgs    pr_data;
  double      pr_lambda = 0.1;
  int         pr_samples = 32;
  bool        pr_val = false;
  pr->add_option("--checkpoint", pr_ckpt)->required();
  add_data_options(pr, pr_data);
  pr->add_option("--lambda", pr_lambda);
  pr->add_option("--samples", pr_samples);
  pr->add_flag("--val", pr_val, "Probe the validation split");
  pr->add_option("--out", pr_out);

  auto       *zoo = app.add_subcommand("zoo", "Train and measure a hyperparameter grid of models");
  std::string zoo_grid, zoo_out;
  int         zoo_workers = 0;
  zoo->add_option("--grid", zoo_grid, "JSON zoo spec")->required();
  zoo->add_option("--out", zoo_out, "Zoo directory")->required();
  zoo->add_option("--workers", zoo_workers);

  auto       *me = app.add_subcommand("measure", "Complexity measures of a checkpoint");
  std::string me_ckpt, me_init, me_out;
  DataArgs    me_data;
  int         me_mc = 8;
  std::uint64_t me_seed = 0;
  me->add_option("--checkpoint", me_ckpt)->required();
  me->add_option("--init-snapshot", me_init, "Checkpoint whose weights are the initialization");
  add_data_options(me, me_data);
  me->add_option("--mc-samples", me_mc);
  me->add_option("--sigma-seed", me_seed);
  me->add_option("--out", me_out);

  auto                    *co = app.add_subcommand("correlate", "Rank correlation report over a zoo");
  std::string              co_zoo, co_out;
  std::optional<int>       co_width;
  std::vector<std::string> co_measures;
  co->add_option("--zoo", co_zoo)->required();
  co->add_option("--width-filter", co_width);
  co->add_option("--measures", co_measures, "Subset of measure columns");
  co->add_option("--out", co_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) { return cmd_toy(toy_rule, toy_paper, toy_seed, toy_out); }
    if (*tr) {
      return cmd_train(tr_config, tr_data, tr_path, tr_reg, eta_opt->count() ? std::optional(tr_eta) : std::nullopt,
                       tr_epochs, tr_steps, tr_out);
    }
    if (*pr) { return cmd_probe(pr_ckpt, pr_data, pr_lambda, pr_samples, pr_val, pr_out); }
    if (*zoo) {
      auto spec = zoo_spec_from_json(read_json(zoo_grid));
      if (zoo_workers > 0) { spec.workers = zoo_workers; }
      auto const m = run_zoo(spec, zoo_out, [](CellEntry const &c) {
        std::cerr << c.id << ": " << c.status << (c.converged ? " converged" : " not converged") << " gap " << c.gap
                  << (c.error.empty() ? "" : " (" + c.error + ")") << "\n";
      });
      int done = 0;
      for (auto const &c : m.cells) {
        done += c.status == "done";
      }
      std::cout << done << "/" << m.cells.size() << " cells done\n";
      return 0;
    }
    if (*me) { return cmd_measure(me_ckpt, me_init, me_data, me_mc, me_seed, me_out); }
    if (*co) { return cmd_correlate(co_zoo, co_width, co_measures, co_out); }
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
