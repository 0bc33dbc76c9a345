#pragma once

#include "srr/layers.hpp"
#include "srr/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace srr {

/// Samples as patch matrices (patch_dim × patches). When the samples came
/// from images, the images are kept so augmentations can re-crop them.
struct Dataset
{
  std::vector<MatrixXd> inputs;
  std::vector<int>      labels;
  int                   num_classes = 0;
  std::vector<Image>    images;
  int                   patch = 0;

  std::size_t size() const { return labels.size(); }
  bool        empty() const { return labels.empty(); }
};

struct DatasetSplit
{
  Dataset train;
  Dataset val;
};

struct LabeledImages
{
  std::vector<Image> images;
  std::vector<int>   labels;
  int                num_classes = 0;
};

/// Standard CIFAR binary layout. CIFAR-10 records: 1 label byte + 3072 pixel
/// bytes; CIFAR-100 records: coarse byte + fine byte + 3072 pixel bytes (the
/// fine label is kept). Pixels are R, G, B planes of 32×32, scaled to [0,1].
LabeledImages load_cifar(std::filesystem::path const &path, int variant);
LabeledImages parse_cifar(std::vector<unsigned char> const &bytes, int variant);

/// Converts images to patch matrices, keeping the images for augmentation.
Dataset to_dataset(LabeledImages const &data, int patch);

/// Loads data_batch_1..5 / test_batch (CIFAR-10) or train / test (CIFAR-100)
/// from a directory.
DatasetSplit load_cifar_split(std::filesystem::path const &dir, int variant, int patch);

struct SynthParams
{
  int    classes = 2;
  int    tokens = 8;      ///< patch tokens per sample
  int    input_dim = 16;  ///< token dimension
  int    subspace_dim = 2;///< rank of each class's token subspace
  double separation = 3.0;///< class-mean offset, in units of the noise σ
  double noise = 1.0;     ///< isotropic noise σ
  int    train_size = 256;
  int    val_size = 256;
  double label_noise = 0.0;///< fraction of training labels replaced at random
};

/// Class-conditioned Gaussian token sequences. Every class c owns a mean
/// direction μ_c (unit norm, scaled by separation·noise) and a random
/// subspace B_c; a token is μ_c + B_c·s + noise·ε with s, ε standard normal.
DatasetSplit synth_dataset(SynthParams const &params, std::uint64_t seed);

struct AugmentFlags
{
  bool random_resize_crop = false;
  bool horizontal_flip = false;

  bool any() const { return random_resize_crop || horizontal_flip; }
};

Image horizontal_flip(Image const &img);
/// Crops a random square covering 50–100% of the area and resizes it back
/// bilinearly.
Image random_resize_crop(Image const &img, Rng &rng);
Image augment(Image const &img, AugmentFlags const &flags, Rng &rng);

} // namespace srr
