#pragma once

#include "moef/params.hpp"

#include <functional>

namespace moef {

// Central finite differences, (f(p+h) - f(p-h)) / 2h per entry. The returned
// set mirrors the input names and shapes. f must be a deterministic function
// of the parameter values.
ParamSet finite_diff_grad(const std::function<double(const ParamSet&)>& f,
                          const ParamSet& params, double step = 1e-5);

// max over entries of |a - b| / max(|a|, |b|, denom_floor). The floor keeps
// finite-difference roundoff on near-zero gradients from dominating.
double max_rel_error(const Matrix& analytic, const Matrix& numeric,
                     double denom_floor = 1e-4);

}  // namespace moef
