#include "srr/toy_dynamics.hpp"

#include "srr/layers.hpp"

#include <iomanip>
#include <sstream>

namespace srr {

DynamicsRule parse_rule(std::string const &s)
{
  if (s == "a") { return DynamicsRule::ExactGd; }
  if (s == "b") { return DynamicsRule::TaylorGd; }
  if (s == "c") { return DynamicsRule::FirstOnly; }
  if (s == "d") { return DynamicsRule::SecondOnly; }
  if (s == "e") { return DynamicsRule::Softmax; }
  if (s == "n") { return DynamicsRule::Negative; }
  throw ConfigError("unknown dynamics rule '" + s + "' (a|b|c|d|e|n)");
}

char rule_letter(DynamicsRule r)
{
  switch (r) {
  case DynamicsRule::ExactGd: return 'a';
  case DynamicsRule::TaylorGd: return 'b';
  case DynamicsRule::FirstOnly: return 'c';
  case DynamicsRule::SecondOnly: return 'd';
  case DynamicsRule::Softmax: return 'e';
  case DynamicsRule::Negative: return 'n';
  }
  return '?';
}

MatrixXd dynamics_step(DynamicsRule rule, MatrixXd const &z, SubspaceBasis<double> const &u, double alpha, double gamma)
{
  switch (rule) {
  case DynamicsRule::ExactGd: return z - alpha * grad_projected_coding_rate(z, u, gamma);
  case DynamicsRule::TaylorGd: {
    auto const g = grad_taylor_terms(z, u, gamma);
    return z - alpha * (g.first + g.second);
  }
  case DynamicsRule::FirstOnly: return z - alpha * grad_taylor_terms(z, u, gamma).first;
  case DynamicsRule::SecondOnly: return z - alpha * grad_taylor_terms(z, u, gamma).second;
  case DynamicsRule::Softmax: return z + alpha * gamma * gamma * mssa(z, u);
  case DynamicsRule::Negative: return z - alpha * gamma * gamma * mssa(z, u);
  }
  return z;
}

DynamicsTrace run_dynamics(DynamicsRule rule, DynamicsSetup const &s)
{
  if (s.K < 1 || s.d % s.K != 0) { throw DimensionError("run_dynamics: d must be divisible by K"); }
  if (s.N < 1 || s.L < 1) { throw ConfigError("run_dynamics: N and L must be positive"); }
  Rng const     root(s.seed);
  Rng           z_rng = root.split("Z0");
  MatrixXd      z = gaussian_matrix(s.d, s.N, 1.0, z_rng);
  DynamicsTrace trace;
  trace.rule = rule;
  for (Index l = 0; l < s.L; ++l) {
    SubspaceBasis<double> const u(orthonormal_basis(s.d, root.split("U").split(std::uint64_t(l)).seed()), s.K);
    double const                before = projected_coding_rate(z, u, s.gamma);
    MatrixXd                    next;
    double                      after = 0;
    bool                        ok = true;
    try {
      next = dynamics_step(rule, z, u, s.alpha, s.gamma);
      ok = next.allFinite();
      if (ok) {
        after = projected_coding_rate(next, u, s.gamma);
        ok = std::isfinite(after);
      }
    } catch (NumericError const &) {
      ok = false;
    } catch (DefinitenessError const &) {
      ok = false;
    }
    if (!ok) {
      trace.truncated = true;
      trace.overflow_layer = int(l) + 1;
      break;
    }
    trace.rows.push_back(DynamicsRow{int(l) + 1, before, after});
    z = std::move(next);
  }
  return trace;
}

std::string dynamics_csv(DynamicsTrace const &trace, bool header)
{
  std::ostringstream ss;
  if (header) { ss << kDynamicsHeader << '\n'; }
  ss << std::setprecision(17);
  for (auto const &r : trace.rows) {
    ss << rule_letter(trace.rule) << ',' << r.layer << ',' << r.rc_before << ',' << r.rc_after << '\n';
  }
  return ss.str();
}

} // namespace srr
