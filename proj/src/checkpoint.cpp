#include "srr/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace srr {

Json to_json(ModelConfig const &c)
{
  return Json{{"depth", c.depth},
              {"width", c.width},
              {"heads", c.heads},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"gamma", c.gamma},
              {"eps_sq", c.eps_sq},
              {"lambda_sparsity", c.lambda_sparsity},
              {"variant", std::string(to_string(c.variant))},
              {"dropout", c.dropout},
              {"patch", c.patch},
              {"image_size", c.image_size},
              {"channels", c.channels},
              {"input_dim", c.input_dim},
              {"seq_len", c.seq_len},
              {"num_classes", c.num_classes},
              {"seed", c.seed}};
}

ModelConfig model_config_from_json(Json const &j, ModelConfig c)
{
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.gamma = j.value("gamma", c.gamma);
  c.eps_sq = j.value("eps_sq", c.eps_sq);
  c.lambda_sparsity = j.value("lambda_sparsity", c.lambda_sparsity);
  if (j.contains("variant")) { c.variant = parse_variant(j.at("variant").get<std::string>()); }
  c.dropout = j.value("dropout", c.dropout);
  c.patch = j.value("patch", c.patch);
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.input_dim = j.value("input_dim", c.input_dim);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

Json params_to_json(ModelWeights const &w, AttentionVariant variant)
{
  Json out = Json::object();
  for (auto const &p : parameters(w, variant)) {
    out[p.name] = Json{{"rows", p.rows}, {"cols", p.cols}, {"data", std::vector<double>(p.data, p.data + p.size())}};
  }
  return out;
}

void params_from_json(Json const &j, ModelWeights &w, AttentionVariant variant)
{
  for (auto &p : parameters(w, variant)) {
    if (!j.contains(p.name)) { throw FormatError("checkpoint: missing parameter " + p.name); }
    auto const &t = j.at(p.name);
    if (t.at("rows").get<Index>() != p.rows || t.at("cols").get<Index>() != p.cols) {
      throw FormatError("checkpoint: shape mismatch for " + p.name);
    }
    auto const data = t.at("data").get<std::vector<double>>();
    if (Index(data.size()) != p.size()) { throw FormatError("checkpoint: data length mismatch for " + p.name); }
    std::copy(data.begin(), data.end(), p.data);
  }
}

} // namespace

Json checkpoint_to_json(Model const &model)
{
  return Json{{"format", "srr-checkpoint"},
              {"version", kCheckpointVersion},
              {"config", to_json(model.config)},
              {"params", params_to_json(model.weights, model.config.variant)},
              {"initial", params_to_json(model.initial, model.config.variant)}};
}

Model checkpoint_from_json(Json const &j)
{
  if (j.value("format", "") != "srr-checkpoint") { throw FormatError("not an srr checkpoint"); }
  if (j.value("version", 0) != kCheckpointVersion) { throw FormatError("unsupported checkpoint version"); }
  // Allocate shapes via init, then overwrite every tensor.
  Model model = init_model(model_config_from_json(j.at("config")));
  params_from_json(j.at("params"), model.weights, model.config.variant);
  if (j.contains("initial")) {
    params_from_json(j.at("initial"), model.initial, model.config.variant);
  } else {
    model.initial = model.weights;
  }
  return model;
}

void write_file_atomic(std::filesystem::path const &path, std::string const &content)
{
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) { throw std::runtime_error("cannot write " + tmp.string()); }
    out << content;
    if (!out) { throw std::runtime_error("write failed: " + tmp.string()); }
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw std::runtime_error("cannot open " + path.string()); }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(Model const &model, std::filesystem::path const &path)
{
  write_file_atomic(path, checkpoint_to_json(model).dump());
}

Model load_checkpoint(std::filesystem::path const &path)
{
  try {
    return checkpoint_from_json(Json::parse(read_file(path)));
  } catch (Json::exception const &e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
}

} // namespace srr
