#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <string>

#include "srr/errors.hpp"
#include "srr/rng.hpp"

namespace srr {

template <typename Scalar> using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar> using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using Index = Eigen::Index;

inline std::string shape_str(Index rows, Index cols)
{
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived> bool all_finite(Eigen::DenseBase<Derived> const &m)
{
  return m.allFinite();
}

template <typename Derived> void require_finite(Eigen::DenseBase<Derived> const &m, char const *what)
{
  if (!m.allFinite()) { throw NumericError(std::string(what) + ": non-finite entries"); }
}

/// log det of a symmetric positive-definite matrix, as 2·Σ log diag(chol(M)).
template <typename Derived> typename Derived::Scalar logdet_psd(Eigen::MatrixBase<Derived> const &m)
{
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) { throw DimensionError("logdet_psd: matrix is " + shape_str(m.rows(), m.cols())); }
  Matrix<Scalar> const a = m;
  Scalar const         asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (a.size() > 0 && !(asym <= Scalar(1e-10) * std::max(Scalar(1), a.cwiseAbs().maxCoeff()))) {
    throw DefinitenessError("logdet_psd: matrix not symmetric");
  }
  Eigen::LLT<Matrix<Scalar>> llt(a);
  if (llt.info() != Eigen::Success) { throw DefinitenessError("logdet_psd: Cholesky factorization failed"); }
  Scalar sum = 0;
  auto const &l = llt.matrixLLT();
  for (Index i = 0; i < l.rows(); ++i) {
    sum += std::log(l(i, i));
  }
  return Scalar(2) * sum;
}

/// Column-wise softmax: every column of the result is a probability vector.
template <typename Derived> Matrix<typename Derived::Scalar> softmax_columns(Eigen::MatrixBase<Derived> const &m)
{
  using Scalar = typename Derived::Scalar;
  require_finite(m, "softmax_columns");
  Matrix<Scalar> out(m.rows(), m.cols());
  for (Index j = 0; j < m.cols(); ++j) {
    Scalar const mx = m.col(j).maxCoeff();
    out.col(j) = (m.col(j).array() - mx).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

/// Largest singular value by power iteration on MᵀM from a fixed start vector.
template <typename Derived>
typename Derived::Scalar spectral_norm(Eigen::MatrixBase<Derived> const &m, int iters = 1000, double tol = 1e-13)
{
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0 || m.cwiseAbs().maxCoeff() == Scalar(0)) { return Scalar(0); }
  Matrix<Scalar> const a = m;
  // Deterministic, generic start: avoids accidental orthogonality to the top
  // singular vector that an all-ones start has for structured inputs.
  Vector<Scalar> v(a.cols());
  Rng            rng(0x5eedull);
  for (Index i = 0; i < v.size(); ++i) {
    v(i) = Scalar(1) + Scalar(0.5) * Scalar(rng.uniform());
  }
  v.normalize();
  Scalar sigma_sq = (a * v).squaredNorm();
  for (int it = 0; it < iters; ++it) {
    Vector<Scalar> w = a.transpose() * (a * v);
    Scalar const   wn = w.norm();
    if (wn == Scalar(0)) { break; }
    v = w / wn;
    Scalar const next = (a * v).squaredNorm();
    bool const   done = std::abs(next - sigma_sq) <= Scalar(tol) * std::abs(next);
    sigma_sq = next;
    if (done) { break; }
  }
  return std::sqrt(sigma_sq);
}

/// Gaussian matrix with i.i.d. N(0, stddev²) entries drawn column-major from rng.
template <typename Scalar = double> Matrix<Scalar> gaussian_matrix(Index rows, Index cols, double stddev, Rng &rng)
{
  Matrix<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      m(i, j) = Scalar(rng.normal(0.0, stddev));
    }
  }
  return m;
}

/// d×d orthonormal matrix: Householder QR of a seeded Gaussian matrix, with
/// column signs fixed so that R has a positive diagonal.
template <typename Scalar = double> Matrix<Scalar> orthonormal_basis(Index d, std::uint64_t seed)
{
  if (d < 1) { throw DimensionError("orthonormal_basis: d must be >= 1"); }
  Rng                                   rng(seed);
  Matrix<Scalar> const                  g = gaussian_matrix<Scalar>(d, d, 1.0, rng);
  Eigen::HouseholderQR<Matrix<Scalar>> qr(g);
  Matrix<Scalar>                        q = qr.householderQ() * Matrix<Scalar>::Identity(d, d);
  Matrix<Scalar> const                 &r = qr.matrixQR();
  for (Index j = 0; j < d; ++j) {
    if (r(j, j) < Scalar(0)) { q.col(j) = -q.col(j); }
  }
  return q;
}

} // namespace srr
