#include "srr/zoo.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace srr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- data specs

DatasetSplit load_data(DataSpec const &spec, int patch)
{
  if (spec.source == "synthetic") { return synth_dataset(spec.synth, spec.seed); }
  if (spec.source == "cifar10") { return load_cifar_split(spec.path, 10, patch); }
  if (spec.source == "cifar100") { return load_cifar_split(spec.path, 100, patch); }
  throw ConfigError("unknown data source '" + spec.source + "' (cifar10|cifar100|synthetic)");
}

void fit_model_to_data(ModelConfig &config, DataSpec const &spec)
{
  if (spec.source == "synthetic") {
    config.input_dim = spec.synth.input_dim;
    config.seq_len = spec.synth.tokens;
    config.num_classes = spec.synth.classes;
    return;
  }
  config.input_dim = 0;
  config.seq_len = 0;
  config.image_size = 32;
  config.channels = 3;
  config.num_classes = spec.source == "cifar100" ? 100 : 10;
}

namespace {

template <typename T> void read_opt(Json const &j, char const *key, T &out)
{
  if (j.contains(key)) { out = j.at(key).get<T>(); }
}

std::string reg_mode_string(TrainConfig const &c)
{
  switch (c.reg_mode) {
  case RegMode::None: return "none";
  case RegMode::AllLayers: return "all";
  case RegMode::FixedLayer: return "layer:" + std::to_string(c.reg_layer);
  case RegMode::RandomLayer: return "random";
  }
  return "none";
}

} // namespace

TrainConfig train_config_from_json(Json const &j, TrainConfig c)
{
  try {
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "lr_init", c.lr_init);
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "max_steps", c.max_steps);
    read_opt(j, "eta_reg", c.eta_reg);
    if (j.contains("reg_mode")) { parse_reg_mode(j.at("reg_mode").get<std::string>(), c); }
    read_opt(j, "reg_lambda", c.reg_lambda);
    read_opt(j, "stop_criterion", c.stop_criterion);
    read_opt(j, "probe_samples", c.probe_samples);
    read_opt(j, "seed", c.seed);
    if (j.contains("augment")) {
      read_opt(j.at("augment"), "random_resize_crop", c.augment.random_resize_crop);
      read_opt(j.at("augment"), "horizontal_flip", c.augment.horizontal_flip);
    }
  } catch (Json::exception const &e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

Json to_json(TrainConfig const &c)
{
  return Json{{"batch_size", c.batch_size},
              {"lr_init", c.lr_init},
              {"epochs", c.epochs},
              {"max_steps", c.max_steps},
              {"eta_reg", c.eta_reg},
              {"reg_mode", reg_mode_string(c)},
              {"reg_lambda", c.reg_lambda},
              {"stop_criterion", c.stop_criterion},
              {"probe_samples", c.probe_samples},
              {"seed", c.seed},
              {"augment", {{"random_resize_crop", c.augment.random_resize_crop}, {"horizontal_flip", c.augment.horizontal_flip}}}};
}

DataSpec data_spec_from_json(Json const &j, DataSpec d)
{
  try {
    read_opt(j, "source", d.source);
    if (j.contains("path")) { d.path = j.at("path").get<std::string>(); }
    read_opt(j, "seed", d.seed);
    if (j.contains("synthetic")) {
      auto const &s = j.at("synthetic");
      read_opt(s, "classes", d.synth.classes);
      read_opt(s, "tokens", d.synth.tokens);
      read_opt(s, "input_dim", d.synth.input_dim);
      read_opt(s, "subspace_dim", d.synth.subspace_dim);
      read_opt(s, "separation", d.synth.separation);
      read_opt(s, "noise", d.synth.noise);
      read_opt(s, "train_size", d.synth.train_size);
      read_opt(s, "val_size", d.synth.val_size);
      read_opt(s, "label_noise", d.synth.label_noise);
    }
    if (j.contains("augment")) {
      read_opt(j.at("augment"), "random_resize_crop", d.augment.random_resize_crop);
      read_opt(j.at("augment"), "horizontal_flip", d.augment.horizontal_flip);
    }
  } catch (Json::exception const &e) {
    throw ConfigError(std::string("data config: ") + e.what());
  }
  return d;
}

Json to_json(DataSpec const &d)
{
  auto const &s = d.synth;
  return Json{{"source", d.source},
              {"path", d.path.string()},
              {"seed", d.seed},
              {"synthetic",
               {{"classes", s.classes},
                {"tokens", s.tokens},
                {"input_dim", s.input_dim},
                {"subspace_dim", s.subspace_dim},
                {"separation", s.separation},
                {"noise", s.noise},
                {"train_size", s.train_size},
                {"val_size", s.val_size},
                {"label_noise", s.label_noise}}},
              {"augment", {{"random_resize_crop", d.augment.random_resize_crop}, {"horizontal_flip", d.augment.horizontal_flip}}}};
}

RunConfig run_config_from_json(Json const &j)
{
  RunConfig c;
  try {
    if (j.contains("model")) { c.model = model_config_from_json(j.at("model")); }
  } catch (Json::exception const &e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (j.contains("train")) { c.train = train_config_from_json(j.at("train")); }
  if (j.contains("data")) { c.data = data_spec_from_json(j.at("data")); }
  // Augmentation lives on the data block in files; training reads it from TrainConfig.
  if (c.data.augment.any()) { c.train.augment = c.data.augment; }
  return c;
}

Json to_json(RunConfig const &c)
{
  return Json{{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"data", to_json(c.data)}};
}

// ---------------------------------------------------------------- grid

std::size_t GridSpec::cardinality() const
{
  return batch_sizes.size() * lrs.size() * widths.size() * dropouts.size() * variants.size();
}

std::vector<HyperPoint> GridSpec::cells() const
{
  std::vector<HyperPoint> out;
  out.reserve(cardinality());
  for (int b : batch_sizes) {
    for (double lr : lrs) {
      for (int w : widths) {
        for (double p : dropouts) {
          for (auto v : variants) {
            out.push_back({b, lr, w, p, v});
          }
        }
      }
    }
  }
  return out;
}

namespace {

std::uint64_t bits(double x)
{
  std::uint64_t u;
  std::memcpy(&u, &x, sizeof u);
  return u;
}

std::string short_double(double x)
{
  std::ostringstream ss;
  ss << x;
  return ss.str();
}

} // namespace

std::uint64_t cell_seed(std::uint64_t global_seed, HyperPoint const &t)
{
  std::uint64_t h = hash_combine(global_seed, std::uint64_t(t.batch_size));
  h = hash_combine(h, bits(t.lr_init));
  h = hash_combine(h, std::uint64_t(t.width));
  h = hash_combine(h, bits(t.dropout));
  return hash_combine(h, hash_tag(to_string(t.model_variant)));
}

std::string cell_id(HyperPoint const &t)
{
  return "b" + std::to_string(t.batch_size) + "_lr" + short_double(t.lr_init) + "_w" + std::to_string(t.width) + "_p" +
         short_double(t.dropout) + "_" + std::string(to_string(t.model_variant));
}

namespace {

Json grid_to_json(GridSpec const &g)
{
  std::vector<std::string> variants;
  for (auto v : g.variants) {
    variants.emplace_back(to_string(v));
  }
  return Json{{"batch_sizes", g.batch_sizes}, {"lrs", g.lrs},   {"widths", g.widths},
              {"dropouts", g.dropouts},       {"variants", variants}, {"seed", g.seed}};
}

GridSpec grid_from_json(Json const &j)
{
  GridSpec g;
  read_opt(j, "batch_sizes", g.batch_sizes);
  read_opt(j, "lrs", g.lrs);
  read_opt(j, "widths", g.widths);
  read_opt(j, "dropouts", g.dropouts);
  read_opt(j, "seed", g.seed);
  if (j.contains("variants")) {
    g.variants.clear();
    for (auto const &v : j.at("variants")) {
      g.variants.push_back(parse_variant(v.get<std::string>()));
    }
  }
  if (g.cardinality() == 0) { throw ConfigError("grid has no cells"); }
  return g;
}

} // namespace

ZooSpec zoo_spec_from_json(Json const &j)
{
  ZooSpec z;
  try {
    if (j.contains("grid")) { z.grid = grid_from_json(j.at("grid")); }
    z.base = run_config_from_json(j);
    read_opt(j, "workers", z.workers);
    if (j.contains("measure")) {
      auto const &m = j.at("measure");
      read_opt(m, "margin_percentile", z.measure.margin_percentile);
      read_opt(m, "probe_samples", z.measure.probe_samples);
      read_opt(m, "lambda", z.measure.lambda_sparsity);
      read_opt(m, "bypass_layernorm", z.measure.bypass_layernorm);
      read_opt(m, "mc_samples", z.measure.sigma.mc_samples);
      read_opt(m, "target_increase", z.measure.sigma.target_increase);
      read_opt(m, "sigma_iterations", z.measure.sigma.iterations);
    }
  } catch (Json::exception const &e) {
    throw ConfigError(std::string("zoo spec: ") + e.what());
  }
  if (z.workers < 1) { throw ConfigError("workers must be ≥ 1"); }
  return z;
}

Json to_json(ZooSpec const &z)
{
  Json j = to_json(z.base);
  j["grid"] = grid_to_json(z.grid);
  j["workers"] = z.workers;
  j["measure"] = Json{{"margin_percentile", z.measure.margin_percentile},
                      {"probe_samples", z.measure.probe_samples},
                      {"lambda", z.measure.lambda_sparsity},
                      {"bypass_layernorm", z.measure.bypass_layernorm},
                      {"mc_samples", z.measure.sigma.mc_samples},
                      {"target_increase", z.measure.sigma.target_increase},
                      {"sigma_iterations", z.measure.sigma.iterations}};
  return j;
}

// ---------------------------------------------------------------- manifest

Json to_json(Manifest const &m)
{
  Json cells = Json::array();
  for (auto const &c : m.cells) {
    cells.push_back(Json{{"id", c.id},
                         {"batch_size", c.theta.batch_size},
                         {"lr_init", c.theta.lr_init},
                         {"width", c.theta.width},
                         {"dropout", c.theta.dropout},
                         {"variant", std::string(to_string(c.theta.model_variant))},
                         {"seed", c.seed},
                         {"status", c.status},
                         {"converged", c.converged},
                         {"train_ce", c.train_ce},
                         {"val_ce", c.val_ce},
                         {"gap", c.gap},
                         {"steps", c.steps},
                         {"error", c.error},
                         {"checkpoint", c.checkpoint},
                         {"trace", c.trace},
                         {"measures", c.measures}});
  }
  return Json{{"format", "srr-zoo-manifest"}, {"version", 1}, {"spec", m.spec}, {"cells", cells}};
}

Manifest manifest_from_json(Json const &j)
{
  Manifest m;
  try {
    if (j.value("format", "") != "srr-zoo-manifest") { throw FormatError("not a zoo manifest"); }
    m.spec = j.at("spec");
    for (auto const &c : j.at("cells")) {
      CellEntry e;
      e.id = c.at("id").get<std::string>();
      e.theta = {c.at("batch_size").get<int>(), c.at("lr_init").get<double>(), c.at("width").get<int>(),
                 c.at("dropout").get<double>(), parse_variant(c.at("variant").get<std::string>())};
      e.seed = c.at("seed").get<std::uint64_t>();
      e.status = c.at("status").get<std::string>();
      e.converged = c.at("converged").get<bool>();
      // NaN is serialized as null.
      auto num = [&](char const *k) { return c.at(k).is_null() ? std::nan("") : c.at(k).get<double>(); };
      e.train_ce = num("train_ce");
      e.val_ce = num("val_ce");
      e.gap = num("gap");
      e.steps = c.at("steps").get<long>();
      e.error = c.at("error").get<std::string>();
      e.checkpoint = c.at("checkpoint").get<std::string>();
      e.trace = c.at("trace").get<std::string>();
      e.measures = c.at("measures").get<std::string>();
      m.cells.push_back(std::move(e));
    }
  } catch (Json::exception const &e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

Manifest load_manifest(fs::path const &dir)
{
  try {
    return manifest_from_json(Json::parse(read_file(dir / "manifest.json")));
  } catch (Json::exception const &e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

namespace {

void run_cell(ZooSpec const &spec, DatasetSplit const &data, fs::path const &dir, CellEntry &cell)
{
  ModelConfig mc = spec.base.model;
  fit_model_to_data(mc, spec.base.data);
  mc.width = cell.theta.width;
  mc.dropout = cell.theta.dropout;
  mc.variant = cell.theta.model_variant;
  mc.seed = cell.seed;

  TrainConfig tc = spec.base.train;
  tc.batch_size = cell.theta.batch_size;
  tc.lr_init = cell.theta.lr_init;
  tc.seed = hash_combine(cell.seed, hash_tag("train"));
  tc.augment = {};

  Model model = init_model(mc);
  auto  result = train(model, data.train, &data.val, tc);

  fs::path const cell_dir = dir / cell.id;
  fs::create_directories(cell_dir);
  std::string trace = std::string(kTraceHeader) + "\n";
  for (auto const &r : result.trace) {
    trace += trace_csv_row(r) + "\n";
  }
  write_file_atomic(cell_dir / "trace.csv", trace);
  save_checkpoint(model, cell_dir / "checkpoint.json");
  cell.trace = cell.id + "/trace.csv";
  cell.checkpoint = cell.id + "/checkpoint.json";

  cell.converged = result.converged && !result.diverged;
  cell.train_ce = result.final_train.ce;
  cell.val_ce = result.final_val.ce;
  cell.gap = result.final_val.ce - result.final_train.ce;
  cell.steps = result.steps;
  cell.error = result.failure;

  if (!result.diverged) {
    MeasureOptions mo = spec.measure;
    mo.sigma.seed = hash_combine(cell.seed, hash_tag("sigma"));
    auto const mv = measure_vector(model, &model.initial, data.train, mo);
    write_file_atomic(cell_dir / "measures.csv", measure_csv_header() + "\n" + measure_csv_row(mv) + "\n");
    cell.measures = cell.id + "/measures.csv";
  }
  cell.status = "done";
}

} // namespace

Manifest run_zoo(ZooSpec const &spec, fs::path const &out_dir, std::function<void(CellEntry const &)> const &on_cell)
{
  fs::create_directories(out_dir);
  Manifest manifest;
  manifest.spec = to_json(spec);

  std::map<std::string, CellEntry> previous;
  if (fs::exists(out_dir / "manifest.json")) {
    auto old = load_manifest(out_dir);
    if (old.spec != manifest.spec) {
      throw ConfigError(out_dir.string() + " holds a zoo with a different specification");
    }
    for (auto &c : old.cells) {
      previous.emplace(c.id, std::move(c));
    }
  }

  std::vector<std::size_t> todo;
  for (auto const &theta : spec.grid.cells()) {
    CellEntry e;
    e.id = cell_id(theta);
    e.theta = theta;
    e.seed = cell_seed(spec.grid.seed, theta);
    auto it = previous.find(e.id);
    if (it != previous.end() && (it->second.status == "done" || it->second.status == "failed")) {
      e = it->second;
    } else {
      todo.push_back(manifest.cells.size());
    }
    manifest.cells.push_back(std::move(e));
  }

  std::mutex mu;
  auto       flush = [&] { write_file_atomic(out_dir / "manifest.json", to_json(manifest).dump(2) + "\n"); };
  flush();
  if (todo.empty()) { return manifest; }

  DatasetSplit const data = load_data(spec.base.data, spec.base.model.patch);

  std::atomic<std::size_t> next{0};
  auto                     worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      CellEntry cell;
      {
        std::lock_guard lock(mu);
        cell = manifest.cells[todo[i]];
      }
      try {
        run_cell(spec, data, out_dir, cell);
      } catch (std::exception const &e) {
        cell.status = "failed";
        cell.converged = false;
        cell.error = e.what();
      }
      std::lock_guard lock(mu);
      manifest.cells[todo[i]] = cell;
      flush();
      if (on_cell) { on_cell(cell); }
    }
  };
  int const                n_threads = std::min<int>(spec.workers, int(todo.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) {
    pool.emplace_back(worker);
  }
  worker();
  for (auto &t : pool) {
    t.join();
  }
  return manifest;
}

std::vector<ZooRecord> load_zoo_records(fs::path const &dir)
{
  auto const             manifest = load_manifest(dir);
  std::vector<ZooRecord> out;
  for (auto const &c : manifest.cells) {
    ZooRecord r;
    r.theta = c.theta;
    r.gap = c.gap;
    r.converged = c.status == "done" && c.converged;
    if (!c.measures.empty() && fs::exists(dir / c.measures)) {
      for (auto const &[name, value] : parse_measure_csv(read_file(dir / c.measures))) {
        r.measures[name] = value;
      }
    } else {
      r.converged = false;
    }
    out.push_back(std::move(r));
  }
  return out;
}

} // namespace srr
