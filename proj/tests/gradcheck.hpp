#pragma once

// Central finite-difference oracle shared by the gradient tests.

#include <algorithm>
#include <cmath>
#include <functional>

#include "ctxlog/matrix.hpp"

namespace ctxlog::testing {

struct GradCheck {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
};

// Relative error with a small absolute floor so that both-near-zero entries
// do not blow up the ratio.
inline double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1e-6, std::abs(analytic), std::abs(numeric)});
}

// Perturbs every entry of `x` by +-h, evaluates `f`, compares with `analytic`.
inline void check_entries(Matrix<double>& x, const Matrix<double>& analytic, const std::function<double()>& f,
                          double h, GradCheck& acc) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x.data()[i];
        x.data()[i] = orig + h;
        const double fp = f();
        x.data()[i] = orig - h;
        const double fm = f();
        x.data()[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic.data()[i];
        acc.max_rel_error = std::max(acc.max_rel_error, rel_error(a, numeric));
        acc.max_abs_error = std::max(acc.max_abs_error, std::abs(a - numeric));
        ++acc.checked;
    }
}

} // namespace ctxlog::testing
