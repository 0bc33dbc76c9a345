#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace srr {

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t x)
{
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value)
{
  return mix64(seed ^ mix64(value + 0x632BE59BD9B4E019ull));
}

constexpr std::uint64_t hash_tag(std::string_view tag)
{
  std::uint64_t h = 0xCBF29CE484222325ull; // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Seeded, splittable stream. Children derived with split() are independent
/// of the parent's draw history, so adding draws in one stream never shifts
/// another.
class Rng
{
public:
  explicit Rng(std::uint64_t seed = 0)
    : seed_{seed}
    , engine_{mix64(seed)}
  {}

  std::uint64_t seed() const { return seed_; }

  Rng split(std::string_view tag) const { return Rng{hash_combine(seed_, hash_tag(tag))}; }
  Rng split(std::uint64_t index) const { return Rng{hash_combine(seed_, index)}; }

  double normal(double mean = 0.0, double stddev = 1.0)
  {
    return std::normal_distribution<double>{mean, stddev}(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>{lo, hi}(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>{0, n - 1}(engine_); }
  bool bernoulli(double p) { return std::bernoulli_distribution{p}(engine_); }

  std::mt19937_64& engine() { return engine_; }

private:
  std::uint64_t   seed_;
  std::mt19937_64 engine_;
};

} // namespace srr
