#include "srr/data.hpp"

#include "srr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace srr {

namespace {

constexpr std::size_t kPixelBytes = 32 * 32 * 3;

std::size_t record_size(int variant)
{
  if (variant == 10) { return 1 + kPixelBytes; }
  if (variant == 100) { return 2 + kPixelBytes; }
  throw ConfigError("CIFAR variant must be 10 or 100, got " + std::to_string(variant));
}

} // namespace

LabeledImages parse_cifar(std::vector<unsigned char> const &bytes, int variant)
{
  std::size_t const rec = record_size(variant);
  std::size_t const label_offset = variant == 10 ? 0 : 1;
  if (bytes.empty()) { throw FormatError("CIFAR: empty input"); }
  if (bytes.size() % rec != 0) {
    std::size_t const index = bytes.size() / rec;
    throw FormatError("CIFAR-" + std::to_string(variant) + ": truncated record " + std::to_string(index) +
                      " at byte offset " + std::to_string(index * rec) + " (" + std::to_string(bytes.size() - index * rec) +
                      " of " + std::to_string(rec) + " bytes)");
  }
  LabeledImages out;
  out.num_classes = variant;
  std::size_t const n = bytes.size() / rec;
  out.images.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t const base = i * rec;
    int const        label = bytes[base + label_offset];
    if (label >= variant) {
      throw FormatError("CIFAR-" + std::to_string(variant) + ": record " + std::to_string(i) + " label " +
                        std::to_string(label) + " out of range at byte offset " + std::to_string(base + label_offset));
    }
    Image img(32, 32, 3);
    auto  first = bytes.begin() + static_cast<std::ptrdiff_t>(base + rec - kPixelBytes);
    std::transform(first, first + kPixelBytes, img.data.begin(), [](unsigned char b) { return b / 255.0; });
    out.images.push_back(std::move(img));
    out.labels.push_back(label);
  }
  return out;
}

LabeledImages load_cifar(std::filesystem::path const &path, int variant)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw FormatError("cannot open " + path.string()); }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_cifar(bytes, variant);
  } catch (FormatError const &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Dataset to_dataset(LabeledImages const &data, int patch)
{
  Dataset ds;
  ds.num_classes = data.num_classes;
  ds.patch = patch;
  ds.labels = data.labels;
  ds.images = data.images;
  ds.inputs.reserve(data.images.size());
  for (auto const &img : data.images) {
    ds.inputs.push_back(extract_patches(img, patch));
  }
  return ds;
}

DatasetSplit load_cifar_split(std::filesystem::path const &dir, int variant, int patch)
{
  std::vector<std::string> train_files, val_files;
  if (variant == 10) {
    for (int i = 1; i <= 5; ++i) {
      train_files.push_back("data_batch_" + std::to_string(i) + ".bin");
    }
    val_files = {"test_batch.bin"};
  } else {
    record_size(variant);
    train_files = {"train.bin"};
    val_files = {"test.bin"};
  }
  auto gather = [&](std::vector<std::string> const &files) {
    LabeledImages all;
    all.num_classes = variant;
    for (auto const &f : files) {
      auto part = load_cifar(dir / f, variant);
      std::move(part.images.begin(), part.images.end(), std::back_inserter(all.images));
      all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    }
    return to_dataset(all, patch);
  };
  return {gather(train_files), gather(val_files)};
}

DatasetSplit synth_dataset(SynthParams const &p, std::uint64_t seed)
{
  if (p.classes < 2) { throw ConfigError("synthetic data needs at least 2 classes"); }
  if (p.tokens < 1 || p.input_dim < 1 || p.subspace_dim < 0 || p.train_size < 0 || p.val_size < 0) {
    throw ConfigError("synthetic data: sizes must be positive");
  }
  Rng        root(seed);
  Rng        class_rng = root.split("classes");
  double const scale = p.separation * p.noise;

  // Both the mean offset and the class subspace scale with separation, so
  // separation 0 leaves pure shared noise.
  std::vector<VectorXd> means;
  std::vector<MatrixXd> bases;
  for (int c = 0; c < p.classes; ++c) {
    VectorXd mu = gaussian_matrix(p.input_dim, 1, 1.0, class_rng);
    mu /= std::max(mu.norm(), 1e-12);
    means.push_back(scale * mu);
    bases.push_back(gaussian_matrix(p.input_dim, p.subspace_dim, 0.5 * scale / std::sqrt(double(p.input_dim)), class_rng));
  }

  auto draw = [&](int n, Rng rng, Dataset &ds) {
    ds.num_classes = p.classes;
    for (int i = 0; i < n; ++i) {
      int const label = i % p.classes;
      MatrixXd  x = gaussian_matrix(p.input_dim, p.tokens, p.noise, rng);
      MatrixXd  s = gaussian_matrix(p.subspace_dim, p.tokens, 1.0, rng);
      x.colwise() += means[label];
      if (p.subspace_dim > 0) { x += bases[label] * s; }
      ds.inputs.push_back(std::move(x));
      ds.labels.push_back(label);
    }
  };
  DatasetSplit out;
  draw(p.train_size, root.split("train"), out.train);
  draw(p.val_size, root.split("val"), out.val);
  if (p.label_noise > 0) {
    Rng noise_rng = root.split("label_noise");
    for (auto &y : out.train.labels) {
      if (noise_rng.bernoulli(p.label_noise)) { y = static_cast<int>(noise_rng.index(p.classes)); }
    }
  }
  return out;
}

Image horizontal_flip(Image const &img)
{
  Image out(img.height, img.width, img.channels);
  for (Index c = 0; c < img.channels; ++c) {
    for (Index y = 0; y < img.height; ++y) {
      for (Index x = 0; x < img.width; ++x) {
        out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
      }
    }
  }
  return out;
}

Image random_resize_crop(Image const &img, Rng &rng)
{
  Index const side_max = std::min(img.height, img.width);
  double const area = rng.uniform(0.5, 1.0);
  Index const  side = std::clamp<Index>(Index(std::lround(std::sqrt(area) * double(side_max))), 1, side_max);
  Index const  top = Index(rng.index(std::size_t(img.height - side + 1)));
  Index const  left = Index(rng.index(std::size_t(img.width - side + 1)));

  Image out(img.height, img.width, img.channels);
  double const sy = double(side) / double(img.height), sx = double(side) / double(img.width);
  for (Index y = 0; y < img.height; ++y) {
    double const fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(side - 1));
    Index const  y0 = Index(fy), y1 = std::min(y0 + 1, side - 1);
    double const wy = fy - double(y0);
    for (Index x = 0; x < img.width; ++x) {
      double const fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(side - 1));
      Index const  x0 = Index(fx), x1 = std::min(x0 + 1, side - 1);
      double const wx = fx - double(x0);
      for (Index c = 0; c < img.channels; ++c) {
        auto px = [&](Index yy, Index xx) { return img.at(top + yy, left + xx, c); };
        out.at(y, x, c) = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) + wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
      }
    }
  }
  return out;
}

Image augment(Image const &img, AugmentFlags const &flags, Rng &rng)
{
  Image out = flags.random_resize_crop ? random_resize_crop(img, rng) : img;
  if (flags.horizontal_flip && rng.bernoulli(0.5)) { out = horizontal_flip(out); }
  return out;
}

} // namespace srr
