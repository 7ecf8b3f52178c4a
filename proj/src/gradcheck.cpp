#include "taml/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "taml/error.hpp"

namespace taml {

GradCheckReport finite_diff_check(const std::function<Tensor(ParamSet&)>& f,
                                  ParamSet& params, double h,
                                  std::size_t min_coords) {
  // Analytic gradients from one taped pass.
  std::map<std::string, std::vector<double>> analytic;
  {
    Tape tape;
    params.zero_grad();
    Tensor loss = f(params);
    tape.backward(loss);
    for (auto& [path, t] : params) analytic[path] = t.grad_vector();
  }

  const std::size_t total = params.total_size();
  const std::size_t stride =
      total <= min_coords ? 1 : std::max<std::size_t>(1, total / min_coords);

  GradCheckReport report;
  std::size_t flat = 0;
  for (auto& [path, t] : params) {
    double* p = t.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i, ++flat) {
      if (flat % stride != 0) continue;
      const double keep = p[i];
      p[i] = keep + h;
      const double fp = f(params).item();
      p[i] = keep - h;
      const double fm = f(params).item();
      p[i] = keep;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_diff_check: function returned non-finite");
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[path][i];
      const double rel =
          std::fabs(fd - an) / std::max(1e-8, std::fabs(fd) + std::fabs(an));
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_path = path;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace taml
