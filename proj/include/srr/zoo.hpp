#pragma once

#include "srr/analysis.hpp"
#include "srr/checkpoint.hpp"
#include "srr/data.hpp"
#include "srr/measures.hpp"
#include "srr/training.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace srr {

struct DataSpec
{
  std::string           source = "synthetic"; ///< cifar10, cifar100 or synthetic
  std::filesystem::path path;                 ///< CIFAR directory
  SynthParams           synth;
  std::uint64_t         seed = 0;
  AugmentFlags          augment;
};

DatasetSplit load_data(DataSpec const &spec, int patch);

/// Sets input_dim / seq_len / num_classes (and image geometry for CIFAR) so
/// the model accepts the dataset's samples.
void fit_model_to_data(ModelConfig &config, DataSpec const &spec);

/// Full experiment configuration as read from a JSON file:
///   { "model": {...}, "train": {...}, "data": {...} }
/// Missing keys keep their defaults.
struct RunConfig
{
  ModelConfig model;
  TrainConfig train;
  DataSpec    data;
};

RunConfig   run_config_from_json(Json const &j);
Json        to_json(RunConfig const &c);
TrainConfig train_config_from_json(Json const &j, TrainConfig defaults = {});
Json        to_json(TrainConfig const &c);
DataSpec    data_spec_from_json(Json const &j, DataSpec defaults = {});
Json        to_json(DataSpec const &d);

struct GridSpec
{
  std::vector<int>              batch_sizes{64, 128};
  std::vector<double>           lrs{2e-5, 1e-4};
  std::vector<int>              widths{384, 768};
  std::vector<double>           dropouts{0.0, 0.1};
  std::vector<AttentionVariant> variants{AttentionVariant::CrateC, AttentionVariant::CrateN, AttentionVariant::CrateT,
                                         AttentionVariant::Crate};
  std::uint64_t                 seed = 0;

  std::size_t             cardinality() const;
  std::vector<HyperPoint> cells() const; ///< batch-major, variant fastest
};

/// Cell seed = hash(global seed, cell coordinates).
std::uint64_t cell_seed(std::uint64_t global_seed, HyperPoint const &theta);
std::string   cell_id(HyperPoint const &theta);

/// Zoo file:
///   { "grid": {...GridSpec...}, "model": {...}, "train": {...}, "data": {...},
///     "workers": 1, "measure": {"probe_samples": 32, "mc_samples": 8, ...} }
struct ZooSpec
{
  GridSpec       grid;
  RunConfig      base;
  MeasureOptions measure;
  int            workers = 1;
};

ZooSpec zoo_spec_from_json(Json const &j);
Json    to_json(ZooSpec const &z);

struct CellEntry
{
  std::string id;
  HyperPoint  theta;
  std::uint64_t seed = 0;
  std::string status = "pending"; ///< pending, done or failed
  bool        converged = false;
  double      train_ce = 0, val_ce = 0, gap = 0;
  long        steps = 0;
  std::string error;
  std::string checkpoint, trace, measures; ///< relative to the zoo directory
};

struct Manifest
{
  Json                   spec;
  std::vector<CellEntry> cells;
};

Json     to_json(Manifest const &m);
Manifest manifest_from_json(Json const &j);
Manifest load_manifest(std::filesystem::path const &dir);

/// Trains, checkpoints and measures every cell. Augmentation is forced off.
/// Cells already marked done or failed in an existing manifest are skipped;
/// a failing cell is recorded and the zoo continues.
Manifest run_zoo(ZooSpec const &spec, std::filesystem::path const &out_dir,
                 std::function<void(CellEntry const &)> const &on_cell = {});

/// Records for correlate: manifest cells joined with their measures.csv.
std::vector<ZooRecord> load_zoo_records(std::filesystem::path const &dir);

} // namespace srr
