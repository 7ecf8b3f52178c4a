#pragma once

#include <functional>
#include <string>

#include "taml/tensor.hpp"

namespace taml {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_path;
  std::size_t worst_index = 0;
};

// Central finite differences against tape gradients. The function must be a
// deterministic scalar of the parameters (freeze any randomness outside).
// Large parameter sets are strided down to at least `min_coords` coordinates.
// rel err = |fd - analytic| / max(1e-8, |fd| + |analytic|).
GradCheckReport finite_diff_check(const std::function<Tensor(ParamSet&)>& f,
                                  ParamSet& params, double h = 1e-6,
                                  std::size_t min_coords = 50);

}  // namespace taml
