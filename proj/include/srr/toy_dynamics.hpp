#pragma once

#include "srr/coding_rate.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace srr {

/// Layer updates iterated on Gaussian tokens with orthonormal per-layer bases.
enum class DynamicsRule
{
  ExactGd,     ///< (a) Z − α∇Rᶜ
  TaylorGd,    ///< (b) Z − α(∇first + ∇second)
  FirstOnly,   ///< (c) Z − α∇first
  SecondOnly,  ///< (d) Z − α∇second
  Softmax,     ///< (e) Z + αγ²·MSSA(Z;U)
  Negative     ///< Z − αγ²·MSSA(Z;U)
};

/// Accepts the single-letter CLI names a, b, c, d, e, n.
DynamicsRule     parse_rule(std::string const &s);
char             rule_letter(DynamicsRule r);

struct DynamicsSetup
{
  Index         N = 32;
  Index         L = 12;
  Index         d = 64;
  Index         K = 4;
  double        alpha = 1.0;
  double        gamma = 1.0;
  std::uint64_t seed = 0;

  static DynamicsSetup paper_scale(std::uint64_t seed = 0) { return {196, 12, 384, 6, 1.0, 1.0, seed}; }
};

struct DynamicsRow
{
  int    layer = 0; ///< 1-based
  double rc_before = 0; ///< Rᶜ(Z^{ℓ−1}; Uˡ)
  double rc_after = 0;  ///< Rᶜ(Zˡ; Uˡ)
};

struct DynamicsTrace
{
  DynamicsRule             rule = DynamicsRule::ExactGd;
  std::vector<DynamicsRow> rows;
  bool                     truncated = false; ///< stopped early on overflow
  int                      overflow_layer = 0; ///< first layer whose update overflowed
};

/// One update of the given rule.
MatrixXd dynamics_step(DynamicsRule rule, MatrixXd const &z, SubspaceBasis<double> const &u, double alpha, double gamma);

/// Z⁰ ~ N(0,1)^{d×N}; layer ℓ uses a fresh orthonormal d×d basis split into K
/// heads. Rows stop at the first layer whose update is non-finite.
DynamicsTrace run_dynamics(DynamicsRule rule, DynamicsSetup const &setup);

inline constexpr char const *kDynamicsHeader = "rule,layer,rc_before,rc_after";
std::string dynamics_csv(DynamicsTrace const &trace, bool header = true);

} // namespace srr
