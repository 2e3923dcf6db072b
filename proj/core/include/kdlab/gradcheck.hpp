#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "kdlab/tensor.hpp"

namespace kdlab {

struct GradCheckEntry {
    std::string param;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t checked = 0;
    GradCheckEntry worst;
};

// Central finite differences against an analytic gradient, one parameter
// tensor at a time. `loss` must be a pure function of the current parameter
// values: it is called repeatedly with single entries perturbed in place and
// must not retain state across calls. `analytic` holds dL/dtheta for the same
// tensor, already computed.
//
// rel_err = |a - n| / (|a| + |n| + 1e-12), step h = 1e-5 * (1 + |theta_i|).
inline GradCheckResult finite_difference_check(Tensor<double>& theta,
                                               const std::vector<double>& analytic,
                                               const std::function<double()>& loss,
                                               const std::string& param_name = "") {
    if (analytic.size() != theta.data.size()) {
        throw std::invalid_argument("finite_difference_check: gradient size mismatch");
    }
    const double base = loss();
    const double base2 = loss();
    if (base != base2) {
        throw std::logic_error("finite_difference_check: loss is not deterministic");
    }
    GradCheckResult res;
    for (size_t i = 0; i < theta.data.size(); ++i) {
        const double orig = theta.data[i];
        const double h = 1e-5 * (1.0 + std::abs(orig));
        theta.data[i] = orig + h;
        const double up = loss();
        theta.data[i] = orig - h;
        const double down = loss();
        theta.data[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
        ++res.checked;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst = {param_name, static_cast<int64_t>(i), a, numeric, rel};
        }
    }
    return res;
}

}  // namespace kdlab
