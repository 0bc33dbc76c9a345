#include "srr/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

namespace srr {

namespace {

int sign(double x)
{
  return (x > 0) - (x < 0);
}

} // namespace

double kendall_tau(std::vector<std::pair<double, double>> const &t)
{
  if (t.size() < 2) { throw DimensionError("kendall_tau: need at least 2 samples"); }
  long long sum = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      sum += sign(t[i].first - t[j].first) * sign(t[i].second - t[j].second);
    }
  }
  // Each unordered pair appears twice in the ordered-pair sum.
  double const n = double(t.size());
  return 2.0 * double(sum) / (n * (n - 1.0));
}

std::string_view to_string(HyperAxis a)
{
  switch (a) {
  case HyperAxis::BatchSize: return "batch_size";
  case HyperAxis::LearningRate: return "learning_rate";
  case HyperAxis::Width: return "width";
  case HyperAxis::Dropout: return "dropout";
  case HyperAxis::ModelType: return "model_type";
  }
  return "?";
}

HyperAxis parse_axis(std::string_view s)
{
  for (auto a : {HyperAxis::BatchSize, HyperAxis::LearningRate, HyperAxis::Width, HyperAxis::Dropout, HyperAxis::ModelType}) {
    if (to_string(a) == s) { return a; }
  }
  throw ConfigError("unknown hyperparameter axis: " + std::string(s));
}

double HyperPoint::coordinate(HyperAxis a) const
{
  switch (a) {
  case HyperAxis::BatchSize: return double(batch_size);
  case HyperAxis::LearningRate: return lr_init;
  case HyperAxis::Width: return double(width);
  case HyperAxis::Dropout: return dropout;
  case HyperAxis::ModelType: return double(static_cast<int>(model_variant));
  }
  return 0;
}

namespace {

constexpr HyperAxis kAllAxes[] = {HyperAxis::BatchSize, HyperAxis::LearningRate, HyperAxis::Width, HyperAxis::Dropout,
                                  HyperAxis::ModelType};

bool usable(ZooRecord const &r, std::string const &measure)
{
  if (!r.converged || !std::isfinite(r.gap)) { return false; }
  auto it = r.measures.find(measure);
  return it != r.measures.end() && std::isfinite(it->second);
}

} // namespace

PsiResult granulated_psi(std::vector<ZooRecord> const &records, std::string const &measure,
                         std::vector<HyperAxis> const &axes)
{
  PsiResult out;
  double    psi_sum = 0;
  int       psi_count = 0;
  for (HyperAxis axis : axes) {
    // Slice key: every coordinate except the varied one.
    std::map<std::vector<double>, std::vector<std::pair<double, double>>> slices;
    for (auto const &r : records) {
      if (!usable(r, measure)) { continue; }
      std::vector<double> key;
      for (HyperAxis other : kAllAxes) {
        if (other != axis) { key.push_back(r.theta.coordinate(other)); }
      }
      slices[key].emplace_back(r.measures.at(measure), r.gap);
    }
    double sum = 0;
    int    count = 0;
    for (auto const &[key, samples] : slices) {
      if (samples.size() < 2) { continue; }
      sum += kendall_tau(samples);
      ++count;
    }
    if (count == 0) {
      out.per_axis.push_back(std::nullopt);
      continue;
    }
    out.per_axis.push_back(sum / count);
    psi_sum += sum / count;
    ++psi_count;
  }
  if (psi_count > 0) { out.psi = psi_sum / psi_count; }
  return out;
}

CorrelationReport correlation_report(std::vector<ZooRecord> const &records, std::vector<std::string> const &measures,
                                     std::optional<int> width_filter)
{
  CorrelationReport rep;
  rep.axes = {HyperAxis::BatchSize, HyperAxis::LearningRate, HyperAxis::Dropout, HyperAxis::ModelType};
  rep.width_filter = width_filter;
  std::vector<ZooRecord> kept;
  for (auto const &r : records) {
    if (width_filter && r.theta.width != *width_filter) { continue; }
    if (r.converged && std::isfinite(r.gap)) {
      ++rep.used;
    } else {
      ++rep.excluded;
    }
    kept.push_back(r);
  }
  for (auto const &name : measures) {
    ReportRow row;
    row.measure = name;
    auto const psi = granulated_psi(kept, name, rep.axes);
    row.per_axis = psi.per_axis;
    row.psi = psi.psi;
    std::vector<std::pair<double, double>> all;
    for (auto const &r : kept) {
      if (usable(r, name)) { all.emplace_back(r.measures.at(name), r.gap); }
    }
    if (all.size() >= 2) { row.overall_tau = kendall_tau(all); }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

namespace {

std::string fmt3(std::optional<double> v)
{
  if (!v) { return "NA"; }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v == 0.0 ? 0.0 : *v);
  return buf;
}

std::string axis_title(HyperAxis a)
{
  switch (a) {
  case HyperAxis::BatchSize: return "Batch size";
  case HyperAxis::LearningRate: return "Learning rate";
  case HyperAxis::Width: return "Width";
  case HyperAxis::Dropout: return "Dropout";
  case HyperAxis::ModelType: return "Model type";
  }
  return "?";
}

} // namespace

std::string report_csv(CorrelationReport const &r)
{
  std::ostringstream ss;
  ss << "measure";
  for (auto a : r.axes) {
    ss << ',' << to_string(a);
  }
  ss << ",overall_tau,psi\n";
  for (auto const &row : r.rows) {
    ss << row.measure;
    for (auto const &v : row.per_axis) {
      ss << ',' << fmt3(v);
    }
    ss << ',' << fmt3(row.overall_tau) << ',' << fmt3(row.psi) << '\n';
  }
  return ss.str();
}

std::string report_text(CorrelationReport const &r)
{
  std::ostringstream ss;
  ss << "Correlation of complexity measures with generalization gap";
  if (r.width_filter) { ss << " (width d=" << *r.width_filter << ")"; }
  ss << "\n";
  ss << std::left << std::setw(30) << "Complexity measure";
  for (auto a : r.axes) {
    ss << std::right << std::setw(15) << axis_title(a);
  }
  ss << std::setw(12) << "Overall tau" << std::setw(9) << "Psi" << '\n';
  for (auto const &row : r.rows) {
    ss << std::left << std::setw(30) << row.measure;
    for (auto const &v : row.per_axis) {
      ss << std::right << std::setw(15) << fmt3(v);
    }
    ss << std::setw(12) << fmt3(row.overall_tau) << std::setw(9) << fmt3(row.psi) << '\n';
  }
  ss << "records used: " << r.used << ", excluded (unconverged or failed): " << r.excluded << '\n';
  return ss.str();
}

} // namespace srr
