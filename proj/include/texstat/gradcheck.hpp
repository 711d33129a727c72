#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "texstat/ops.hpp"
#include "texstat/tensor.hpp"

// Central-difference gradient verification, always in double precision.
// The callable must recompute its scalar output purely from the current
// values of the given input tensors (it is invoked many times with single
// elements perturbed in place), and must not draw fresh randomness.

namespace texstat {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    // input index / flat element index of the worst coordinate
    std::size_t worst_input = 0;
    std::int64_t worst_coord = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool pass = false;

    std::string str() const {
        return "max_rel_err=" + std::to_string(max_rel_err) +
               " max_abs_err=" + std::to_string(max_abs_err) + " at input " +
               std::to_string(worst_input) + " coord " + std::to_string(worst_coord) +
               " (analytic=" + std::to_string(worst_analytic) +
               ", numeric=" + std::to_string(worst_numeric) + ")";
    }
};

inline GradCheckReport gradient_check(const std::function<Tensor<double>()>& f,
                                      const std::vector<Tensor<double>>& inputs,
                                      double eps = 1e-5, double tol = 1e-4) {
    for (const auto& in : inputs) {
        if (!in.requires_grad())
            throw ConfigError("gradient_check inputs must have requires_grad set");
    }

    // Analytic pass.
    std::vector<std::vector<double>> analytic;
    {
        for (auto in : inputs) in.zero_grad();
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> loss = f();
        if (loss.numel() != 1)
            throw ShapeError("gradient_check requires a scalar objective, got shape " +
                             shape_str(loss.shape()));
        tape.backward(loss);
        for (const auto& in : inputs)
            analytic.emplace_back(in.grad().begin(), in.grad().end());
    }

    // Central differences; f runs untaped here.
    GradCheckReport rep;
    rep.pass = true;
    for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
        Tensor<double> in = inputs[ii];
        for (std::int64_t ci = 0; ci < in.numel(); ++ci) {
            const double saved = in.data()[ci];
            in.data()[ci] = saved + eps;
            const double fp = f().item();
            in.data()[ci] = saved - eps;
            const double fm = f().item();
            in.data()[ci] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double exact = analytic[ii][static_cast<std::size_t>(ci)];
            const double abs_err = std::fabs(numeric - exact);
            // Differences below 1e-9 are central-difference rounding noise,
            // not disagreement; the denominator floor keeps near-zero true
            // gradients from inflating the ratio the same way.
            const double rel_err =
                abs_err < 1e-9
                    ? 0.0
                    : abs_err / std::max({std::fabs(numeric), std::fabs(exact), 1e-6});
            if (rel_err > rep.max_rel_err) {
                rep.max_rel_err = rel_err;
                rep.max_abs_err = abs_err;
                rep.worst_input = ii;
                rep.worst_coord = ci;
                rep.worst_analytic = exact;
                rep.worst_numeric = numeric;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace texstat
