#include "doctest.h"

#include "srr/data.hpp"

#include <filesystem>
#include <fstream>

using namespace srr;

namespace {

std::vector<unsigned char> cifar10_record(unsigned char label)
{
  std::vector<unsigned char> r{label};
  for (int i = 0; i < 3072; ++i) {
    r.push_back(static_cast<unsigned char>(i % 256));
  }
  return r;
}

double linear_probe_accuracy(Dataset const &train, Dataset const &val)
{
  // Least-squares one-vs-rest classifier on the mean token.
  Index const n = Index(train.size()), d = train.inputs[0].rows();
  MatrixXd    x(n, d + 1), y = MatrixXd::Zero(n, train.num_classes);
  for (Index i = 0; i < n; ++i) {
    x.row(i).head(d) = train.inputs[i].rowwise().mean().transpose();
    x(i, d) = 1;
    y(i, train.labels[i]) = 1;
  }
  MatrixXd const w = x.colPivHouseholderQr().solve(y);
  int            correct = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    VectorXd feat(d + 1);
    feat.head(d) = val.inputs[i].rowwise().mean();
    feat(d) = 1;
    Index arg = 0;
    (w.transpose() * feat).maxCoeff(&arg);
    correct += arg == val.labels[i];
  }
  return double(correct) / double(val.size());
}

} // namespace

TEST_CASE("CIFAR-10 record layout")
{
  auto const parsed = parse_cifar(cifar10_record(7), 10);
  REQUIRE(parsed.images.size() == 1);
  CHECK(parsed.labels[0] == 7);
  CHECK(parsed.num_classes == 10);
  Image const &img = parsed.images[0];
  CHECK(img.height == 32);
  CHECK(img.width == 32);
  CHECK(img.channels == 3);
  CHECK(img.at(0, 0, 0) == 0.0);
  CHECK(img.at(0, 1, 0) == 1.0 / 255.0);
  CHECK(img.at(0, 0, 1) == double(1024 % 256) / 255.0);
  CHECK(img.at(7, 31, 0) == double((7 * 32 + 31) % 256) / 255.0);
  CHECK(img.at(31, 31, 2) == 255.0 / 255.0);

  auto two = cifar10_record(1);
  auto second = cifar10_record(9);
  two.insert(two.end(), second.begin(), second.end());
  auto const both = parse_cifar(two, 10);
  CHECK(both.labels == std::vector<int>{1, 9});
}

TEST_CASE("CIFAR-100 keeps the fine label")
{
  std::vector<unsigned char> r{3, 42};
  for (int i = 0; i < 3072; ++i) {
    r.push_back(static_cast<unsigned char>(255 - i % 256));
  }
  auto const parsed = parse_cifar(r, 100);
  CHECK(parsed.labels[0] == 42);
  CHECK(parsed.num_classes == 100);
  CHECK(parsed.images[0].at(0, 0, 0) == 1.0);
}

TEST_CASE("CIFAR errors")
{
  auto bytes = cifar10_record(2);
  auto more = cifar10_record(3);
  bytes.insert(bytes.end(), more.begin(), more.end() - 10);
  try {
    parse_cifar(bytes, 10);
    FAIL("expected a format error");
  } catch (FormatError const &e) {
    std::string const msg = e.what();
    CHECK(msg.find("record 1") != std::string::npos);
    CHECK(msg.find("offset 3073") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_cifar(cifar10_record(10), 10), FormatError);
  std::vector<unsigned char> bad100{0, 100};
  bad100.resize(3074, 0);
  CHECK_THROWS_AS(parse_cifar(bad100, 100), FormatError);
  CHECK_THROWS_AS(parse_cifar({}, 10), FormatError);
  CHECK_THROWS_AS(parse_cifar(cifar10_record(1), 20), ConfigError);
  CHECK_THROWS_AS(load_cifar("/nonexistent/cifar.bin", 10), FormatError);
}

TEST_CASE("CIFAR directory loading")
{
  auto const dir = std::filesystem::temp_directory_path() / "srr_cifar_fixture";
  std::filesystem::create_directories(dir);
  auto write = [&](std::string const &name, std::vector<unsigned char> const &bytes) {
    std::ofstream out(dir / name, std::ios::binary);
    out.write(reinterpret_cast<char const *>(bytes.data()), std::streamsize(bytes.size()));
  };
  for (int i = 1; i <= 5; ++i) {
    write("data_batch_" + std::to_string(i) + ".bin", cifar10_record(static_cast<unsigned char>(i)));
  }
  write("test_batch.bin", cifar10_record(0));
  auto const split = load_cifar_split(dir, 10, 4);
  CHECK(split.train.size() == 5);
  CHECK(split.train.labels == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(split.val.size() == 1);
  CHECK(split.train.inputs[0].rows() == 48);
  CHECK(split.train.inputs[0].cols() == 64);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic data")
{
  SynthParams p;
  p.train_size = 40;
  p.val_size = 20;
  auto const a = synth_dataset(p, 3);
  auto const b = synth_dataset(p, 3);
  CHECK(a.train.size() == 40);
  CHECK(a.val.size() == 20);
  CHECK(a.train.inputs[0].rows() == p.input_dim);
  CHECK(a.train.inputs[0].cols() == p.tokens);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.inputs[i] == b.train.inputs[i]);
  }
  CHECK(a.train.labels == b.train.labels);
  CHECK(synth_dataset(p, 4).train.inputs[0] != a.train.inputs[0]);

  p.classes = 1;
  CHECK_THROWS_AS(synth_dataset(p, 0), ConfigError);
}

TEST_CASE("synthetic separability")
{
  SynthParams p;
  p.classes = 2;
  p.train_size = 400;
  p.val_size = 400;
  p.separation = 5;
  auto const far = synth_dataset(p, 5);
  CHECK(linear_probe_accuracy(far.train, far.val) >= 0.95);

  p.separation = 0;
  auto const none = synth_dataset(p, 5);
  CHECK(std::abs(linear_probe_accuracy(none.train, none.val) - 0.5) <= 0.1);
}

TEST_CASE("label noise only touches training labels")
{
  SynthParams p;
  p.train_size = 200;
  p.val_size = 50;
  auto const clean = synth_dataset(p, 6);
  p.label_noise = 0.5;
  auto const noisy = synth_dataset(p, 6);
  CHECK(noisy.val.labels == clean.val.labels);
  CHECK(noisy.train.labels != clean.train.labels);
  CHECK(noisy.train.inputs[10] == clean.train.inputs[10]);
}

TEST_CASE("augmentations")
{
  Image img(8, 8, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = double(i % 17) / 17.0;
  }
  Image const f = horizontal_flip(img);
  CHECK(f.at(2, 0, 1) == img.at(2, 7, 1));
  Image const ff = horizontal_flip(f);
  CHECK(ff.data == img.data);

  Rng         rng(1);
  Image const c = random_resize_crop(img, rng);
  CHECK(c.height == 8);
  CHECK(c.width == 8);
  for (double v : c.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  Rng r1(2), r2(2);
  CHECK(augment(img, {true, true}, r1).data == augment(img, {true, true}, r2).data);
  Rng r3(3);
  CHECK(augment(img, {}, r3).data == img.data);
}
