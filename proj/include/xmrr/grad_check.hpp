#pragma once

#include <functional>
#include <stdexcept>

#include "xmrr/tape.hpp"

namespace xmrr {

// Scalar-valued function of one tensor, rebuilt on a fresh tape per call.
using GradCheckFn = std::function<Var(Tape<double>&, Var)>;

// Compares the reverse-mode gradient of f at x against central finite
// differences, coordinate by coordinate. Returns the max over coordinates of
// |analytic - numeric| / max(1, |numeric|). Run in f64 only; finite
// differences are unreliable in f32.
inline double grad_check(const GradCheckFn& f, const Tensor<double>& x, double eps = 1e-5) {
    if (!(eps >= 1e-6 && eps <= 1e-4)) throw std::runtime_error("grad_check: eps must be in [1e-6, 1e-4]");

    Tensor<double> analytic;
    {
        Tape<double> tp;
        Var xv = tp.input(x, true);
        Var y = f(tp, xv);
        if (!tp.value(y).is_scalar())
            throw std::runtime_error("grad_check: f must produce a scalar, got " +
                                     shape_str(tp.value(y).shape));
        tp.backward(y);
        analytic = tp.grad(xv);
    }

    auto eval = [&](const Tensor<double>& point) {
        Tape<double> tp(false);
        Var xv = tp.input(point, false);
        return tp.value(f(tp, xv)).item();
    };

    Tensor<double> probe = x;
    double max_err = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = eval(probe);
        probe[i] = orig - eps;
        const double fm = eval(probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace xmrr
