#pragma once

#include "srr/layers.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace srr {

/// Kendall's coefficient as the normalized sum over ordered pairs
///   τ = 1/(n(n−1)) Σ_{i≠j} sign(µ_i − µ_j)·sign(g_i − g_j);
/// tied pairs contribute 0.
double kendall_tau(std::vector<std::pair<double, double>> const &samples);

enum class HyperAxis
{
  BatchSize,
  LearningRate,
  Width,
  Dropout,
  ModelType
};

std::string_view to_string(HyperAxis a);
HyperAxis        parse_axis(std::string_view s);

struct HyperPoint
{
  int              batch_size = 0;
  double           lr_init = 0;
  int              width = 0;
  double           dropout = 0;
  AttentionVariant model_variant = AttentionVariant::CrateC;

  /// Coordinate along an axis, as a comparable number.
  double coordinate(HyperAxis a) const;
};

struct ZooRecord
{
  HyperPoint                    theta;
  std::map<std::string, double> measures;
  double                        gap = 0; ///< validation CE − training CE
  bool                          converged = false;
};

struct PsiResult
{
  std::vector<std::optional<double>> per_axis; ///< empty when an axis had no usable slice
  std::optional<double>              psi;
};

/// For each axis: τ within every slice that varies only that axis (slices
/// with < 2 usable points skipped), averaged uniformly over slices; Ψ is the
/// mean over axes that produced a value. Records that are unconverged or lack
/// a finite value for the measure are excluded.
PsiResult granulated_psi(std::vector<ZooRecord> const &records, std::string const &measure,
                         std::vector<HyperAxis> const &axes);

struct ReportRow
{
  std::string                        measure;
  std::vector<std::optional<double>> per_axis;
  std::optional<double>              overall_tau;
  std::optional<double>              psi;
};

struct CorrelationReport
{
  std::vector<HyperAxis> axes;
  std::vector<ReportRow> rows;
  std::optional<int>     width_filter;
  int                    used = 0;     ///< converged records inside the width filter
  int                    excluded = 0; ///< unconverged/failed records inside the filter
};

/// Table layout: Batch size, Learning rate, Dropout, Model type, Overall τ, Ψ,
/// with width held fixed by the filter.
CorrelationReport correlation_report(std::vector<ZooRecord> const &records, std::vector<std::string> const &measures,
                                     std::optional<int> width_filter);

std::string report_csv(CorrelationReport const &r);
std::string report_text(CorrelationReport const &r);

} // namespace srr
