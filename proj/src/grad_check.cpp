#include "psgcd/grad_check.hpp"

#include <cmath>
#include <sstream>

#include "psgcd/errors.hpp"

namespace psgcd {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err << " tol=" << tolerance;
  for (const auto& e : per_param)
    if (!e.pass)
      os << " [" << e.name << ": rel_err=" << e.max_rel_err << " at (" << e.worst_row << ","
         << e.worst_col << ") analytic=" << e.analytic << " numeric=" << e.numeric << "]";
  return os.str();
}

GradCheckReport grad_check(const GradCheckFn& loss_fn, const std::vector<Matrix>& params,
                           const std::vector<std::string>& names, double step, double tolerance,
                           double denom_floor) {
  if (!(step >= 1e-7 && step <= 1e-3))
    throw ConfigError("grad_check: step must lie in [1e-7, 1e-3]");
  if (names.size() != params.size())
    throw ConfigError("grad_check: one name per parameter required");

  std::vector<Matrix> analytic;
  const double base = loss_fn(params, &analytic);
  if (!std::isfinite(base)) throw ProbeError("grad_check: loss non-finite at base point");
  if (analytic.size() != params.size())
    throw ConfigError("grad_check: loss_fn produced " + std::to_string(analytic.size()) +
                      " gradients for " + std::to_string(params.size()) + " parameters");

  GradCheckReport report;
  report.tolerance = tolerance;
  std::vector<Matrix> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!analytic[p].same_shape(params[p]))
      throw DimensionError("grad_check: gradient shape " + analytic[p].shape_str() +
                           " vs parameter " + params[p].shape_str() + " for " + names[p]);
    GradCheckEntry entry;
    entry.name = names[p];
    Matrix& m = probe[p];
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) {
        const double saved = m(r, c);
        m(r, c) = saved + step;
        const double up = loss_fn(probe, nullptr);
        m(r, c) = saved - step;
        const double down = loss_fn(probe, nullptr);
        m(r, c) = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
          std::ostringstream os;
          os << "grad_check: non-finite loss probing " << names[p] << " entry (" << r << "," << c
             << ")";
          throw ProbeError(os.str());
        }
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[p](r, c);
        const double diff = std::fabs(a - numeric);
        const double rel =
            diff == 0.0 ? 0.0
                        : diff / std::max(denom_floor, std::max(std::fabs(a), std::fabs(numeric)));
        if (rel > entry.max_rel_err) {
          entry.max_rel_err = rel;
          entry.worst_row = r;
          entry.worst_col = c;
          entry.analytic = a;
          entry.numeric = numeric;
        }
      }
    }
    entry.pass = entry.max_rel_err <= tolerance;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace psgcd
