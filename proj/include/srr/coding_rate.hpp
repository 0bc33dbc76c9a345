#pragma once

#include "srr/linalg.hpp"

#include <cstdint>
#include <utility>

namespace srr {

/// U = [U_1, ..., U_K] ∈ R^{d×Kp}: K head bases of width p stored side by side.
template <typename Scalar> class SubspaceBasis
{
public:
  SubspaceBasis() = default;
  SubspaceBasis(Matrix<Scalar> basis, Index heads)
    : basis_{std::move(basis)}
    , heads_{heads}
  {
    if (heads_ < 1 || basis_.cols() % heads_ != 0) {
      throw DimensionError("SubspaceBasis: " + std::to_string(basis_.cols()) + " columns not divisible into " +
                           std::to_string(heads_) + " heads");
    }
  }

  Index heads() const { return heads_; }
  Index dim() const { return basis_.rows(); }
  Index head_width() const { return basis_.cols() / heads_; }

  auto head(Index k) const { return basis_.middleCols(k * head_width(), head_width()); }

  Matrix<Scalar> const &matrix() const { return basis_; }
  Matrix<Scalar>       &matrix() { return basis_; }

private:
  Matrix<Scalar> basis_;
  Index          heads_ = 1;
};

/// Dimensions and scalars of the rate functions. γ and the full-rate scale are
/// derived on every call so they cannot go stale when N changes.
struct RateConfig
{
  Index  d = 0;
  Index  N = 0;
  Index  K = 1;
  Index  p = 0;
  double eps_sq = 0.5;
  double lambda_sparsity = 0.1;
  double l0_tol = 1e-8;

  static RateConfig make(Index d, Index N, Index K, double eps_sq, double lambda_sparsity = 0.1)
  {
    if (K < 1 || d % K != 0) { throw DimensionError("RateConfig: d must be divisible by K"); }
    if (!(eps_sq > 0)) { throw ConfigError("RateConfig: eps_sq must be positive"); }
    return RateConfig{d, N, K, d / K, eps_sq, lambda_sparsity};
  }

  double gamma() const { return double(p) / (double(N) * eps_sq); }
  double full_scale() const { return double(d) / (double(N) * eps_sq); }
};

namespace detail {

template <typename Derived, typename UDerived>
void check_shapes(Eigen::MatrixBase<Derived> const &z, SubspaceBasis<UDerived> const &u, char const *what)
{
  if (z.rows() != u.dim()) {
    throw DimensionError(std::string(what) + ": Z is " + shape_str(z.rows(), z.cols()) + " but U has " +
                         std::to_string(u.dim()) + " rows");
  }
}

} // namespace detail

/// ½ logdet(I + scale·AᵀA) evaluated on the smaller Gram side.
template <typename Derived>
typename Derived::Scalar coding_rate(Eigen::MatrixBase<Derived> const &z, double scale)
{
  using Scalar = typename Derived::Scalar;
  require_finite(z, "coding_rate");
  if (!(scale > 0)) { throw ConfigError("coding_rate: scale must be positive"); }
  Index const    n = std::min(z.rows(), z.cols());
  Matrix<Scalar> gram = z.rows() < z.cols() ? Matrix<Scalar>(z * z.transpose()) : Matrix<Scalar>(z.transpose() * z);
  gram *= Scalar(scale);
  gram.diagonal().array() += Scalar(1);
  return n == 0 ? Scalar(0) : Scalar(0.5) * logdet_psd(gram);
}

/// ½ logdet(I_N + scale·ZᵀZ) always on the N×N side. Used to check the Gram trick.
template <typename Derived>
typename Derived::Scalar coding_rate_token_side(Eigen::MatrixBase<Derived> const &z, double scale)
{
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> gram = Scalar(scale) * z.transpose() * z;
  gram.diagonal().array() += Scalar(1);
  return Scalar(0.5) * logdet_psd(gram);
}

/// Rᶜ(Z;U) = Σ_k R(U_kᵀZ) with R at scale γ.
template <typename Derived>
typename Derived::Scalar projected_coding_rate(Eigen::MatrixBase<Derived> const &z,
                                               SubspaceBasis<typename Derived::Scalar> const &u, double gamma)
{
  using Scalar = typename Derived::Scalar;
  detail::check_shapes(z, u, "projected_coding_rate");
  Scalar total = 0;
  for (Index k = 0; k < u.heads(); ++k) {
    Matrix<Scalar> const proj = u.head(k).transpose() * z;
    total += coding_rate(proj, gamma);
  }
  return total;
}

/// ∇_Z Rᶜ = γ Σ_k U_k A_k (I + γA_kᵀA_k)⁻¹ with A_k = U_kᵀZ. The solve runs on
/// the smaller side through A(I + γAᵀA)⁻¹ = (I + γAAᵀ)⁻¹A.
template <typename Derived>
Matrix<typename Derived::Scalar> grad_projected_coding_rate(Eigen::MatrixBase<Derived> const &z,
                                                            SubspaceBasis<typename Derived::Scalar> const &u,
                                                            double gamma)
{
  using Scalar = typename Derived::Scalar;
  detail::check_shapes(z, u, "grad_projected_coding_rate");
  Matrix<Scalar> grad = Matrix<Scalar>::Zero(z.rows(), z.cols());
  for (Index k = 0; k < u.heads(); ++k) {
    Matrix<Scalar> const a = u.head(k).transpose() * z;
    Matrix<Scalar>       solved;
    if (a.rows() <= a.cols()) {
      Matrix<Scalar> m = Scalar(gamma) * a * a.transpose();
      m.diagonal().array() += Scalar(1);
      Eigen::LLT<Matrix<Scalar>> llt(m);
      if (llt.info() != Eigen::Success) { throw NumericError("grad_projected_coding_rate: singular solve"); }
      solved = llt.solve(a);
    } else {
      Matrix<Scalar> m = Scalar(gamma) * a.transpose() * a;
      m.diagonal().array() += Scalar(1);
      Eigen::LLT<Matrix<Scalar>> llt(m);
      if (llt.info() != Eigen::Success) { throw NumericError("grad_projected_coding_rate: singular solve"); }
      solved = llt.solve(a.transpose()).transpose();
    }
    grad.noalias() += u.head(k) * solved;
  }
  return Scalar(gamma) * grad;
}

template <typename Scalar> struct TaylorTerms
{
  Scalar first = 0;
  Scalar second = 0;
};

/// Second-order expansion of Rᶜ around Z = 0:
///   first  = Σ_k (γ/2)‖U_kᵀZ‖_F²
///   second = −Σ_k (γ²/4)‖(U_kᵀZ)ᵀU_kᵀZ‖_F²
template <typename Derived>
TaylorTerms<typename Derived::Scalar> taylor_terms(Eigen::MatrixBase<Derived> const &z,
                                                   SubspaceBasis<typename Derived::Scalar> const &u, double gamma)
{
  using Scalar = typename Derived::Scalar;
  detail::check_shapes(z, u, "taylor_terms");
  TaylorTerms<Scalar> t;
  for (Index k = 0; k < u.heads(); ++k) {
    Matrix<Scalar> const a = u.head(k).transpose() * z;
    // ‖AᵀA‖_F = ‖AAᵀ‖_F; take the smaller Gram.
    Matrix<Scalar> const g = a.rows() <= a.cols() ? Matrix<Scalar>(a * a.transpose()) : Matrix<Scalar>(a.transpose() * a);
    t.first += Scalar(gamma / 2) * a.squaredNorm();
    t.second -= Scalar(gamma * gamma / 4) * g.squaredNorm();
  }
  return t;
}

template <typename Scalar> struct TaylorGradients
{
  Matrix<Scalar> first;
  Matrix<Scalar> second;
};

/// Gradients of the two Taylor terms:
///   first  = γ Σ_k U_kU_kᵀZ
///   second = −γ² Σ_k U_kU_kᵀZ (U_kᵀZ)ᵀ(U_kᵀZ)
template <typename Derived>
TaylorGradients<typename Derived::Scalar> grad_taylor_terms(Eigen::MatrixBase<Derived> const &z,
                                                            SubspaceBasis<typename Derived::Scalar> const &u,
                                                            double gamma)
{
  using Scalar = typename Derived::Scalar;
  detail::check_shapes(z, u, "grad_taylor_terms");
  TaylorGradients<Scalar> g{Matrix<Scalar>::Zero(z.rows(), z.cols()), Matrix<Scalar>::Zero(z.rows(), z.cols())};
  for (Index k = 0; k < u.heads(); ++k) {
    Matrix<Scalar> const a = u.head(k).transpose() * z;
    g.first.noalias() += u.head(k) * a;
    // A AᵀA = (AAᵀ)A, cheaper when p < N.
    Matrix<Scalar> const cubic = a.rows() <= a.cols() ? Matrix<Scalar>((a * a.transpose()) * a)
                                                      : Matrix<Scalar>(a * (a.transpose() * a));
    g.second.noalias() += u.head(k) * cubic;
  }
  g.first *= Scalar(gamma);
  g.second *= Scalar(-gamma * gamma);
  return g;
}

/// Number of entries with |z| > tol (strict).
template <typename Derived> std::int64_t sparsity_l0(Eigen::MatrixBase<Derived> const &z, double tol = 1e-8)
{
  if (tol < 0) { throw ConfigError("sparsity_l0: tol must be >= 0"); }
  return static_cast<std::int64_t>((z.array().abs() > typename Derived::Scalar(tol)).count());
}

template <typename Scalar> struct SrrComponents
{
  Scalar       r = 0;  ///< R(Z) at scale d/(Nε²)
  Scalar       rc = 0; ///< Rᶜ(Z;U) at scale γ
  std::int64_t l0 = 0;
  Scalar       srr = 0; ///< λ·l0 + rc − r
};

/// Per-layer sparse rate reduction measure and its parts. N, γ and the full
/// scale follow the live token count of Z, not cfg.N.
template <typename Derived>
SrrComponents<typename Derived::Scalar> srr_components(Eigen::MatrixBase<Derived> const &z,
                                                       SubspaceBasis<typename Derived::Scalar> const &u,
                                                       RateConfig const &cfg)
{
  using Scalar = typename Derived::Scalar;
  detail::check_shapes(z, u, "srr_layer_measure");
  if (u.heads() != cfg.K || z.rows() != cfg.d) { throw DimensionError("srr_layer_measure: shape inconsistent with RateConfig"); }
  RateConfig live = cfg;
  live.N = z.cols();
  SrrComponents<Scalar> c;
  c.r = coding_rate(z, live.full_scale());
  c.rc = projected_coding_rate(z, u, live.gamma());
  c.l0 = sparsity_l0(z, cfg.l0_tol);
  c.srr = Scalar(cfg.lambda_sparsity) * Scalar(c.l0) + c.rc - c.r;
  return c;
}

template <typename Derived>
typename Derived::Scalar srr_layer_measure(Eigen::MatrixBase<Derived> const &z,
                                           SubspaceBasis<typename Derived::Scalar> const &u, RateConfig const &cfg)
{
  return srr_components(z, u, cfg).srr;
}

} // namespace srr
