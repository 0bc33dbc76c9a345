#pragma once

#include "srr/coding_rate.hpp"
#include "srr/linalg.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace srr {

enum class AttentionVariant
{
  CrateC,       ///< Z + αγ²·[U_1…U_K]·heads
  CrateN,       ///< Z − αγ²·[U_1…U_K]·heads
  CrateT,       ///< Z + αγ²·[U_1…U_K]ᵀ·heads
  Crate,        ///< Z + αγ²·W·heads, W learnable
  CrateFix,     ///< Z + αγ²·W·heads, W frozen at its random init
  CrateIdentity ///< Z + αγ²·heads
};

inline constexpr std::array<AttentionVariant, 6> kAllVariants{AttentionVariant::CrateC,   AttentionVariant::CrateN,
                                                              AttentionVariant::CrateT,   AttentionVariant::Crate,
                                                              AttentionVariant::CrateFix, AttentionVariant::CrateIdentity};

inline std::string_view to_string(AttentionVariant v)
{
  switch (v) {
  case AttentionVariant::CrateC: return "CRATE_C";
  case AttentionVariant::CrateN: return "CRATE_N";
  case AttentionVariant::CrateT: return "CRATE_T";
  case AttentionVariant::Crate: return "CRATE";
  case AttentionVariant::CrateFix: return "CRATE_FIX";
  case AttentionVariant::CrateIdentity: return "CRATE_IDENTITY";
  }
  return "?";
}

inline AttentionVariant parse_variant(std::string_view s)
{
  for (auto v : kAllVariants) {
    if (to_string(v) == s) { return v; }
  }
  throw ConfigError("unknown attention variant: " + std::string(s));
}

inline bool has_output_matrix(AttentionVariant v)
{
  return v == AttentionVariant::Crate || v == AttentionVariant::CrateFix;
}

template <typename Scalar> struct LayerParams
{
  SubspaceBasis<Scalar>         U;
  Matrix<Scalar>                D;
  std::optional<Matrix<Scalar>> W;
  Vector<Scalar>                ln1_gain, ln1_bias;
  Vector<Scalar>                ln2_gain, ln2_bias;
  Scalar                        alpha = 1;
  Scalar                        beta = Scalar(0.1);
};

/// In-place dropout hook; an empty function means no dropout.
template <typename Scalar> using DropoutFn = std::function<void(Matrix<Scalar> &)>;

/// The Kp×N stack [U_kᵀZ·softmax((U_kᵀZ)ᵀ(U_kᵀZ))]_k.
template <typename Scalar>
Matrix<Scalar> stacked_heads(Matrix<Scalar> const &z, SubspaceBasis<Scalar> const &u, DropoutFn<Scalar> const &dropout = {})
{
  detail::check_shapes(z, u, "stacked_heads");
  Index const    p = u.head_width();
  Matrix<Scalar> out(u.heads() * p, z.cols());
  for (Index k = 0; k < u.heads(); ++k) {
    Matrix<Scalar> const a = u.head(k).transpose() * z;
    Matrix<Scalar>       attn = softmax_columns(Matrix<Scalar>(a.transpose() * a));
    if (dropout) { dropout(attn); }
    out.middleRows(k * p, p).noalias() = a * attn;
  }
  return out;
}

/// MSSA(Z;U) = Σ_k U_kU_kᵀZ·softmax((U_kᵀZ)ᵀ(U_kᵀZ)), summed-head form.
template <typename Scalar> Matrix<Scalar> mssa(Matrix<Scalar> const &z, SubspaceBasis<Scalar> const &u)
{
  detail::check_shapes(z, u, "mssa");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(z.rows(), z.cols());
  for (Index k = 0; k < u.heads(); ++k) {
    Matrix<Scalar> const a = u.head(k).transpose() * z;
    Matrix<Scalar> const attn = softmax_columns(Matrix<Scalar>(a.transpose() * a));
    out.noalias() += u.head(k) * (a * attn);
  }
  return out;
}

/// MSSA(Z;U) = [U_1…U_K]·stacked_heads, block form.
template <typename Scalar> Matrix<Scalar> mssa_block(Matrix<Scalar> const &z, SubspaceBasis<Scalar> const &u)
{
  return u.matrix() * stacked_heads(z, u);
}

/// Output matrix applied to the head stack for each variant.
template <typename Scalar>
Matrix<Scalar> attention_output(Matrix<Scalar> const &heads, LayerParams<Scalar> const &params, AttentionVariant variant)
{
  switch (variant) {
  case AttentionVariant::CrateC:
  case AttentionVariant::CrateN: return params.U.matrix() * heads;
  case AttentionVariant::CrateT:
    if (params.U.matrix().rows() != params.U.matrix().cols()) {
      throw DimensionError("CRATE_T requires d == K·p");
    }
    return params.U.matrix().transpose() * heads;
  case AttentionVariant::Crate:
  case AttentionVariant::CrateFix:
    if (!params.W) { throw ConfigError(std::string(to_string(variant)) + " requires an output matrix W"); }
    return *params.W * heads;
  case AttentionVariant::CrateIdentity:
    if (heads.rows() != params.U.dim()) { throw DimensionError("CRATE_IDENTITY requires d == K·p"); }
    return heads;
  }
  return heads;
}

/// Z ± αγ²·Out·heads(Z;U). Dropout, when given, is applied after every head's
/// softmax and after the output projection.
template <typename Scalar>
Matrix<Scalar> attention_update(Matrix<Scalar> const &z, LayerParams<Scalar> const &params, AttentionVariant variant,
                                double gamma, DropoutFn<Scalar> const &dropout = {})
{
  Matrix<Scalar> delta = attention_output(stacked_heads(z, params.U, dropout), params, variant);
  if (dropout) { dropout(delta); }
  Scalar const step = params.alpha * Scalar(gamma * gamma);
  return variant == AttentionVariant::CrateN ? Matrix<Scalar>(z - step * delta) : Matrix<Scalar>(z + step * delta);
}

/// ReLU(Y + βDᵀ(Y − DY) − βλ).
template <typename Scalar>
Matrix<Scalar> ista_step(Matrix<Scalar> const &y, Matrix<Scalar> const &dict, double beta, double lambda_sparsity)
{
  if (dict.rows() != y.rows() || dict.cols() != y.rows()) {
    throw DimensionError("ista_step: D is " + shape_str(dict.rows(), dict.cols()) + ", Y is " + shape_str(y.rows(), y.cols()));
  }
  Matrix<Scalar> const residual = y - dict * y;
  Matrix<Scalar>       out = y + Scalar(beta) * (dict.transpose() * residual);
  out.array() -= Scalar(beta * lambda_sparsity);
  return out.cwiseMax(Scalar(0));
}

inline constexpr double kLayerNormVarianceFloor = 1e-6;

/// Per-column normalization to zero mean and unit (population) variance, then
/// gain and bias. The variance is floored at 1e-6.
template <typename Scalar>
Matrix<Scalar> layer_norm(Matrix<Scalar> const &z, Vector<Scalar> const &gain, Vector<Scalar> const &bias)
{
  if (gain.size() != z.rows() || bias.size() != z.rows()) { throw DimensionError("layer_norm: gain/bias length != d"); }
  Matrix<Scalar> out(z.rows(), z.cols());
  for (Index j = 0; j < z.cols(); ++j) {
    Scalar const mean = z.col(j).mean();
    Scalar const var = (z.col(j).array() - mean).square().mean();
    Scalar const inv = Scalar(1) / std::sqrt(std::max(var, Scalar(kLayerNormVarianceFloor)));
    out.col(j) = ((z.col(j).array() - mean) * inv * gain.array() + bias.array()).matrix();
  }
  return out;
}

/// H×W×C image stored channel-planar (all of R, then G, then B).
struct Image
{
  Index               height = 0, width = 0, channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(Index h, Index w, Index c)
    : height{h}
    , width{w}
    , channels{c}
    , data(static_cast<std::size_t>(h * w * c), 0.0)
  {}

  double &at(Index y, Index x, Index c) { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
  double  at(Index y, Index x, Index c) const { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
};

/// Non-overlapping patches in row-major scan order; each patch is flattened
/// (row, column, channel) with channel fastest. Result: (patch²·C)×(HW/patch²).
inline MatrixXd extract_patches(Image const &img, Index patch)
{
  if (patch < 1 || img.height % patch != 0 || img.width % patch != 0) {
    throw DimensionError("extract_patches: image " + shape_str(img.height, img.width) + " not divisible by patch " +
                         std::to_string(patch));
  }
  Index const gh = img.height / patch, gw = img.width / patch;
  MatrixXd    out(patch * patch * img.channels, gh * gw);
  for (Index py = 0; py < gh; ++py) {
    for (Index px = 0; px < gw; ++px) {
      Index row = 0;
      for (Index y = 0; y < patch; ++y) {
        for (Index x = 0; x < patch; ++x) {
          for (Index c = 0; c < img.channels; ++c) {
            out(row++, py * gw + px) = img.at(py * patch + y, px * patch + x, c);
          }
        }
      }
    }
  }
  return out;
}

/// [cls, embed·patches] + pos.
template <typename Scalar>
Matrix<Scalar> embed_patches(Matrix<Scalar> const &patches, Matrix<Scalar> const &embed, Matrix<Scalar> const &pos,
                             Vector<Scalar> const &cls)
{
  if (embed.cols() != patches.rows()) {
    throw DimensionError("embed_patches: embed is " + shape_str(embed.rows(), embed.cols()) + ", patches " +
                         shape_str(patches.rows(), patches.cols()));
  }
  if (pos.rows() != embed.rows() || pos.cols() != patches.cols() + 1 || cls.size() != embed.rows()) {
    throw DimensionError("embed_patches: positional encoding or CLS shape mismatch");
  }
  Matrix<Scalar> tokens(embed.rows(), patches.cols() + 1);
  tokens.col(0) = cls;
  tokens.rightCols(patches.cols()).noalias() = embed * patches;
  tokens += pos;
  return tokens;
}

template <typename Scalar>
Matrix<Scalar> tokenize(Image const &img, Index patch, Matrix<Scalar> const &embed, Matrix<Scalar> const &pos,
                        Vector<Scalar> const &cls)
{
  return embed_patches<Scalar>(extract_patches(img, patch).template cast<Scalar>(), embed, pos, cls);
}

} // namespace srr
