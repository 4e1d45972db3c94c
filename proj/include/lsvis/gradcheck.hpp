#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include "lsvis/array.hpp"

namespace lsvis::nd {

struct GradCheckError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scalar function together with its analytic gradient at x. Runs in double
// so the central-difference probes do not drown in float32 rounding.
using ValGradFn = std::function<std::pair<double, ArrayT<double>>(const ArrayT<double>&)>;

// Max over coordinates of |analytic - central| / max(1e-8, |analytic| + |central|).
inline double gradient_check(const ValGradFn& f, const ArrayT<double>& x, double h = 1e-5) {
    auto [fx, analytic] = f(x);
    if (!std::isfinite(fx)) throw GradCheckError("gradient_check: f non-finite at base point");
    if (analytic.shape != x.shape)
        throw GradCheckError("gradient_check: analytic gradient shape mismatch");
    double worst = 0.0;
    ArrayT<double> probe = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        double fp = f(probe).first;
        probe[i] = x[i] - h;
        double fm = f(probe).first;
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw GradCheckError("gradient_check: f non-finite at perturbation of coordinate " +
                                 std::to_string(i));
        double numeric = (fp - fm) / (2.0 * h);
        double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace lsvis::nd
