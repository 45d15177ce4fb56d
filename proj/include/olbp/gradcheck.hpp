#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "olbp/common.hpp"
#include "olbp/tape.hpp"
#include "olbp/tensor.hpp"

namespace olbp {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::int64_t checked = 0;
    // location of the worst element
    std::size_t worst_input = 0;
    std::int64_t worst_elem = 0;
    double analytic = 0.0;
    double numeric = 0.0;

    bool pass(double tol) const { return max_rel_error < tol; }
};

// Compares the tape gradient of a scalar-valued closure against central
// finite differences over every element of every input. Error is
// |a - n| / max(1, |a|, |n|), so it reads as relative error for large
// gradients and absolute error near zero. Runs in double precision.
inline GradCheckReport grad_check(
    const std::function<Tensor4<double>(Tape<double>*, std::vector<Tensor4<double>>&)>& op_closure,
    std::vector<Tensor4<double>> inputs, double step = 1e-5, double tol = 1e-4) {
    (void)tol;
    for (auto& in : inputs) in.set_requires_grad(true);

    Tape<double> tape;
    Tensor4<double> y = op_closure(&tape, inputs);
    if (y.numel() != 1)
        throw ShapeError("grad_check: closure must produce a scalar, got " + y.shape().str());
    if (!std::isfinite(y.data()[0])) throw NumericError("grad_check: non-finite forward value");
    tape.backward(y);

    std::vector<std::vector<double>> analytic(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        inputs[k].ensure_grad();
        analytic[k].assign(inputs[k].grad(), inputs[k].grad() + inputs[k].numel());
    }

    GradCheckReport rep;
    for (auto& in : inputs) in.set_requires_grad(false);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor4<double>& t = inputs[k];
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const double orig = t.data()[i];
            t.data()[i] = orig + step;
            const double fp = op_closure(nullptr, inputs).data()[0];
            t.data()[i] = orig - step;
            const double fm = op_closure(nullptr, inputs).data()[0];
            t.data()[i] = orig;
            const double num = (fp - fm) / (2.0 * step);
            if (!std::isfinite(num))
                throw NumericError("grad_check: non-finite finite-difference value");
            const double ana = analytic[k][static_cast<std::size_t>(i)];
            const double denom = std::max({1.0, std::fabs(ana), std::fabs(num)});
            const double err = std::fabs(ana - num) / denom;
            ++rep.checked;
            if (err > rep.max_rel_error) {
                rep.max_rel_error = err;
                rep.worst_input = k;
                rep.worst_elem = i;
                rep.analytic = ana;
                rep.numeric = num;
            }
        }
    }
    return rep;
}

}  // namespace olbp
