#include "moef/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace moef {

ParamSet finite_diff_grad(const std::function<double(const ParamSet&)>& f,
                          const ParamSet& params, double step) {
    ParamSet grads;
    ParamSet work = params;
    for (auto& [name, values] : work.items()) {
        Matrix g(values.rows(), values.cols());
        for (Index i = 0; i < values.rows(); ++i) {
            for (Index j = 0; j < values.cols(); ++j) {
                const double saved = values(i, j);
                values(i, j) = saved + step;
                const double up = f(work);
                values(i, j) = saved - step;
                const double down = f(work);
                values(i, j) = saved;
                g(i, j) = (up - down) / (2.0 * step);
            }
        }
        grads.add(name, std::move(g));
    }
    return grads;
}

double max_rel_error(const Matrix& analytic, const Matrix& numeric, double denom_floor) {
    double worst = 0.0;
    for (Index i = 0; i < analytic.rows(); ++i) {
        for (Index j = 0; j < analytic.cols(); ++j) {
            const double a = analytic(i, j);
            const double b = numeric(i, j);
            const double denom = std::max({std::abs(a), std::abs(b), denom_floor});
            worst = std::max(worst, std::abs(a - b) / denom);
        }
    }
    return worst;
}

}  // namespace moef
